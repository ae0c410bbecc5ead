use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::TelemetryDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

/// Half-open row ranges of the three contiguous blocks of one NE.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl SplitBounds {
    pub fn block(&self, tag: SplitTag) -> Range<usize> {
        match tag {
            SplitTag::Train => self.train.clone(),
            SplitTag::Val => self.val.clone(),
            SplitTag::Test => self.test.clone(),
        }
    }

    pub fn tag_of(&self, t: usize) -> Option<SplitTag> {
        SplitTag::ALL.into_iter().find(|&s| self.block(s).contains(&t))
    }

    pub(crate) fn validate(&self, ne: &str) -> Result<()> {
        let ordered = (self.train.is_empty() || self.val.is_empty() || self.train.end <= self.val.start)
            && (self.val.is_empty() || self.test.is_empty() || self.val.end <= self.test.start)
            && (self.train.is_empty() || self.test.is_empty() || self.train.end <= self.test.start);
        if !ordered {
            return Err(Error::Data(format!("{ne}: split blocks overlap or are out of order")));
        }
        Ok(())
    }
}

/// Per-NE split boundaries keyed by `ne_id`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits(pub BTreeMap<String, SplitBounds>);

impl Splits {
    pub fn get(&self, ne_id: &str) -> Option<&SplitBounds> {
        self.0.get(ne_id)
    }

    pub fn insert(&mut self, ne_id: String, b: SplitBounds) {
        self.0.insert(ne_id, b);
    }
}

fn floor_idx(x: f64) -> usize {
    // guards products such as 100 * 0.8 landing a hair under the integer
    (x + 1e-9).floor().max(0.0) as usize
}

/// Last `test_frac` of each timeline is test; the remainder is split train/val
/// with `val_frac_of_remainder` going to validation. Boundaries are floor-rounded.
pub fn split_timeline(ds: &TelemetryDataset, test_frac: f64, val_frac_of_remainder: f64) -> Splits {
    let mut out = Splits::default();
    for (n, ne) in ds.nes.iter().enumerate() {
        let t = ds.series_len(n);
        out.insert(ne.ne_id.clone(), split_len(t, test_frac, val_frac_of_remainder));
    }
    out
}

pub(crate) fn split_len(t: usize, test_frac: f64, val_frac: f64) -> SplitBounds {
    let test_start = floor_idx(t as f64 * (1.0 - test_frac)).min(t);
    let val_start = floor_idx(test_start as f64 * (1.0 - val_frac)).min(test_start);
    SplitBounds {
        train: 0..val_start,
        val: val_start..test_start,
        test: test_start..t,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason")]
pub enum RemovalReason {
    Missingness { fraction: f64 },
    ShortSplit { split: SplitTag, rows: usize },
    NoSplit,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RemovalReport {
    pub removed: Vec<(String, RemovalReason)>,
    pub retained: usize,
}

/// Drops NEs whose dynamic-real missingness exceeds `max_missing_frac`, or
/// which cannot fit two non-overlapping `(L + H)` windows in some non-empty split.
pub fn filter_eligible(
    ds: &TelemetryDataset,
    splits: &Splits,
    max_missing_frac: f64,
    l: usize,
    h: usize,
) -> Result<(TelemetryDataset, RemovalReport)> {
    if !(0.0..=1.0).contains(&max_missing_frac) {
        return Err(Error::Config(format!(
            "max_missing_frac must be in [0, 1], got {max_missing_frac}"
        )));
    }
    let span = l + h;
    let mut report = RemovalReport::default();
    let mut out = ds.clone();
    out.nes.clear();
    for ne in &ds.nes {
        let frac = ne.missing_fraction();
        let reason = if frac > max_missing_frac {
            Some(RemovalReason::Missingness { fraction: frac })
        } else if let Some(b) = splits.get(&ne.ne_id) {
            SplitTag::ALL.into_iter().find_map(|s| {
                let rows = b.block(s).len();
                (rows > 0 && rows / span < 2).then_some(RemovalReason::ShortSplit { split: s, rows })
            })
        } else {
            Some(RemovalReason::NoSplit)
        };
        match reason {
            Some(r) => report.removed.push((ne.ne_id.clone(), r)),
            None => out.nes.push(ne.clone()),
        }
    }
    if out.nes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    report.retained = out.nes.len();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::NeSeries;

    fn ds_with(lens_and_missing: &[(usize, usize)]) -> TelemetryDataset {
        let nes = lens_and_missing
            .iter()
            .enumerate()
            .map(|(i, &(t, miss))| {
                let mut mask = vec![0u8; t];
                mask.iter_mut().take(miss).for_each(|m| *m = 1);
                NeSeries {
                    ne_id: format!("ne{i}"),
                    start: 0,
                    x: vec![0.0; t],
                    mask,
                    dyn_cat: vec![],
                    static_cat: vec![],
                    static_real: vec![],
                    z: vec![],
                    s: vec![],
                }
            })
            .collect();
        TelemetryDataset {
            cadence_minutes: 60,
            feature_names: vec!["a".into()],
            dyn_cat_names: vec![],
            static_cat_names: vec![],
            static_real_names: vec![],
            nes,
            encoded: false,
        }
    }

    #[test]
    fn hundred_rows() {
        let b = split_len(100, 0.2, 0.2);
        assert_eq!(b.train, 0..64);
        assert_eq!(b.val, 64..80);
        assert_eq!(b.test, 80..100);
    }

    #[test]
    fn ten_rows_floor() {
        let b = split_len(10, 0.2, 0.2);
        assert_eq!((b.train.len(), b.val.len(), b.test.len()), (6, 2, 2));
    }

    #[test]
    fn missingness_filter() {
        let ds = ds_with(&[(1000, 150), (1000, 50)]);
        let splits = split_timeline(&ds, 0.2, 0.2);
        let (kept, report) = filter_eligible(&ds, &splits, 0.10, 4, 2).unwrap();
        assert_eq!(kept.nes.len(), 1);
        assert_eq!(kept.nes[0].ne_id, "ne1");
        assert!(matches!(report.removed[0].1, RemovalReason::Missingness { .. }));
    }

    #[test]
    fn exactly_two_windows_in_smallest_split_is_kept() {
        let (l, h) = (4, 2);
        // test block of exactly 2 * (L + H) rows
        let ds = ds_with(&[(60, 0)]);
        let mut splits = Splits::default();
        splits.insert(
            "ne0".into(),
            SplitBounds {
                train: 0..36,
                val: 36..48,
                test: 48..60,
            },
        );
        let (kept, _) = filter_eligible(&ds, &splits, 0.1, l, h).unwrap();
        assert_eq!(kept.nes.len(), 1);

        splits.insert(
            "ne0".into(),
            SplitBounds {
                train: 0..37,
                val: 37..48,
                test: 48..60,
            },
        );
        assert!(matches!(
            filter_eligible(&ds, &splits, 0.1, l, h),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn permissive_threshold_removes_nothing() {
        let ds = ds_with(&[(500, 400), (500, 0)]);
        let splits = split_timeline(&ds, 0.2, 0.2);
        let (kept, report) = filter_eligible(&ds, &splits, 1.0, 4, 2).unwrap();
        assert_eq!(kept.nes.len(), 2);
        assert!(report.removed.is_empty());
    }

    #[test]
    fn everything_removed_is_error() {
        let ds = ds_with(&[(10, 0)]);
        let splits = split_timeline(&ds, 0.2, 0.2);
        assert!(matches!(
            filter_eligible(&ds, &splits, 0.1, 4, 2),
            Err(Error::EmptyDataset)
        ));
    }
}
