use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Splits, TelemetryDataset};
use crate::error::{Error, Result};

/// Fitted min/max of one column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range01 {
    pub min: f64,
    pub max: f64,
}

impl Range01 {
    fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            // no observations
            return Self { min: 0.0, max: 0.0 };
        }
        Self { min: lo, max: hi }
    }

    pub fn transform(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (v - self.min) / range
        } else {
            0.0
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

/// Per-(NE, feature) min-max from the train split, plus global static-real ranges.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub per_ne: BTreeMap<String, Vec<Range01>>,
    pub static_real: Vec<Range01>,
}

impl MinMaxScaler {
    pub fn inverse(&self, ne_id: &str, feature: usize, v: f64) -> Option<f64> {
        self.per_ne.get(ne_id).map(|r| r[feature].inverse(v))
    }
}

/// Whether the categorical encoder sees the whole dataset or only train rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFit {
    #[default]
    AllRows,
    TrainOnly,
}

/// Ordinal codes per categorical column; 0 is the null/unseen token, categories
/// are numbered from 1 in sorted order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrdinalEncoder {
    pub dynamic: Vec<BTreeMap<String, u32>>,
    pub statics: Vec<BTreeMap<String, u32>>,
}

fn build(cats: BTreeSet<String>) -> BTreeMap<String, u32> {
    cats.into_iter().zip(1u32..).collect()
}

impl OrdinalEncoder {
    pub fn code(map: &BTreeMap<String, u32>, v: Option<&String>) -> u32 {
        v.and_then(|s| map.get(s)).copied().unwrap_or(0)
    }

    /// Embedding table sizes (null row included) of the declared dynamic columns.
    pub fn dynamic_cardinalities(&self) -> Vec<usize> {
        self.dynamic.iter().map(|m| m.len() + 1).collect()
    }

    pub fn static_cardinalities(&self) -> Vec<usize> {
        self.statics.iter().map(|m| m.len() + 1).collect()
    }
}

/// Fits scalers on train rows of each NE (observed cells only) and the
/// categorical encoder according to `fit_mode`.
pub fn fit_scalers(
    ds: &TelemetryDataset,
    splits: &Splits,
    fit_mode: EncoderFit,
) -> Result<(MinMaxScaler, OrdinalEncoder)> {
    let k = ds.k();
    let d = ds.dyn_cat_names.len();
    let mut scaler = MinMaxScaler::default();
    let mut dyn_sets = vec![BTreeSet::new(); d];
    let mut stat_sets = vec![BTreeSet::new(); ds.static_cat_names.len()];
    for (n, ne) in ds.nes.iter().enumerate() {
        let b = splits
            .get(&ne.ne_id)
            .ok_or_else(|| Error::Contract(format!("no split for {}", ne.ne_id)))?;
        if b.train.is_empty() {
            return Err(Error::Contract(format!("{} has an empty train block", ne.ne_id)));
        }
        let ranges = (0..k)
            .map(|f| {
                Range01::fit(
                    b.train
                        .clone()
                        .filter(|&t| ne.mask[t * k + f] == 0)
                        .map(|t| ne.x[t * k + f]),
                )
            })
            .collect();
        scaler.per_ne.insert(ne.ne_id.clone(), ranges);
        let rows = match fit_mode {
            EncoderFit::AllRows => 0..ds.series_len(n),
            EncoderFit::TrainOnly => b.train.clone(),
        };
        for t in rows {
            for (c, set) in dyn_sets.iter_mut().enumerate() {
                if let Some(v) = &ne.dyn_cat[t * d + c] {
                    set.insert(v.clone());
                }
            }
        }
        for (c, set) in stat_sets.iter_mut().enumerate() {
            if let Some(v) = &ne.static_cat[c] {
                set.insert(v.clone());
            }
        }
    }
    scaler.static_real = (0..ds.static_real_names.len())
        .map(|c| Range01::fit(ds.nes.iter().map(|ne| ne.static_real[c])))
        .collect();
    let encoder = OrdinalEncoder {
        dynamic: dyn_sets.into_iter().map(build).collect(),
        statics: stat_sets.into_iter().map(build).collect(),
    };
    Ok((scaler, encoder))
}

/// Scales reals, zeroes masked cells and fills categorical codes. Mask
/// indicators are appended to the dynamic codes as 1 (observed) / 2 (missing).
pub fn apply_scalers(
    ds: &TelemetryDataset,
    scaler: &MinMaxScaler,
    encoder: &OrdinalEncoder,
) -> Result<TelemetryDataset> {
    if ds.encoded {
        return Err(Error::Contract("dataset is already scaled".into()));
    }
    let k = ds.k();
    let d = ds.dyn_cat_names.len();
    let mut out = ds.clone();
    for ne in &mut out.nes {
        let ranges = scaler
            .per_ne
            .get(&ne.ne_id)
            .ok_or_else(|| Error::Contract(format!("no scaler fitted for {}", ne.ne_id)))?;
        let t_len = ne.x.len() / k.max(1);
        for t in 0..t_len {
            for f in 0..k {
                let i = t * k + f;
                ne.x[i] = if ne.mask[i] == 1 {
                    0.0
                } else {
                    ranges[f].transform(ne.x[i])
                };
            }
        }
        let mut z = Vec::with_capacity(t_len * (d + k));
        for t in 0..t_len {
            for (c, map) in encoder.dynamic.iter().enumerate() {
                z.push(OrdinalEncoder::code(map, ne.dyn_cat[t * d + c].as_ref()));
            }
            for f in 0..k {
                z.push(1 + u32::from(ne.mask[t * k + f]));
            }
        }
        ne.z = z;
        ne.s = encoder
            .statics
            .iter()
            .zip(&ne.static_cat)
            .map(|(map, v)| OrdinalEncoder::code(map, v.as_ref()))
            .collect();
        for (v, r) in ne.static_real.iter_mut().zip(&scaler.static_real) {
            *v = r.transform(*v);
        }
    }
    out.encoded = true;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split::split_len;
    use crate::data::NeSeries;
    use proptest::prelude::*;

    fn single(values: &[f64], cats: &[&str]) -> (TelemetryDataset, Splits) {
        let t = values.len();
        let ds = TelemetryDataset {
            cadence_minutes: 60,
            feature_names: vec!["a".into()],
            dyn_cat_names: vec!["hour".into()],
            static_cat_names: vec!["site".into()],
            static_real_names: vec![],
            nes: vec![NeSeries {
                ne_id: "n".into(),
                start: 0,
                x: values.to_vec(),
                mask: vec![0; t],
                dyn_cat: cats.iter().map(|c| Some(c.to_string())).collect(),
                static_cat: vec![Some("s1".into())],
                static_real: vec![],
                z: vec![],
                s: vec![],
            }],
            encoded: false,
        };
        let mut splits = Splits::default();
        splits.insert("n".into(), split_len(t, 0.2, 0.2));
        (ds, splits)
    }

    #[test]
    fn scales_train_to_unit_interval() {
        // T=10 gives train rows 0..6
        let vals = [2.0, 4.0, 6.0, 4.0, 2.0, 6.0, 8.0, 0.0, 10.0, 3.0];
        let (ds, sp) = single(&vals, &["a"; 10]);
        let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
        let out = apply_scalers(&ds, &sc, &enc).unwrap();
        assert_eq!(&out.nes[0].x[..3], &[0.0, 0.5, 1.0]);
        // beyond train max: no clipping
        assert_eq!(out.nes[0].x[8], 2.0);
        assert_eq!(out.nes[0].x[7], -0.5);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let (ds, sp) = single(&[5.0; 10], &["a"; 10]);
        let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
        let out = apply_scalers(&ds, &sc, &enc).unwrap();
        assert!(out.nes[0].x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_cells_are_zero_and_flagged() {
        let (mut ds, sp) = single(&[1.0, 9.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 1.0], &["a"; 10]);
        ds.nes[0].mask[1] = 1;
        ds.nes[0].x[1] = 0.0;
        let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
        let out = apply_scalers(&ds, &sc, &enc).unwrap();
        assert_eq!(out.nes[0].x[1], 0.0);
        // z row = [hour code, mask code]
        assert_eq!(out.nes[0].z[2..4], [1, 2]);
        assert_eq!(out.nes[0].z[0..2], [1, 1]);
    }

    #[test]
    fn unseen_category_maps_to_null_token() {
        let cats = ["x", "x", "y", "x", "y", "x", "x", "z", "w", "x"];
        let (ds, sp) = single(&[1.0; 10], &cats);
        let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::TrainOnly).unwrap();
        let out = apply_scalers(&ds, &sc, &enc).unwrap();
        let hour_codes: Vec<u32> = out.nes[0].z.chunks(2).map(|c| c[0]).collect();
        assert_eq!(hour_codes, vec![1, 1, 2, 1, 2, 1, 1, 0, 0, 1]);
        let (_, enc_all) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
        assert_eq!(enc_all.dynamic_cardinalities(), vec![5]);
    }

    proptest! {
        #[test]
        fn round_trip_recovers_train_values(vals in proptest::collection::vec(-1e3f64..1e3, 10..40)) {
            let cats = vec!["c"; vals.len()];
            let (ds, sp) = single(&vals, &cats);
            let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
            let out = apply_scalers(&ds, &sc, &enc).unwrap();
            let train = sp.get("n").unwrap().train.clone();
            let r = sc.per_ne["n"][0];
            for t in train {
                let back = sc.inverse("n", 0, out.nes[0].x[t]).unwrap();
                let want = if r.max > r.min { vals[t] } else { r.min };
                prop_assert!((back - want).abs() < 1e-9);
            }
        }

        #[test]
        fn encoding_is_stable(vals in proptest::collection::vec(0u8..4, 10..30)) {
            let cats: Vec<String> = vals.iter().map(|v| format!("c{v}")).collect();
            let refs: Vec<&str> = cats.iter().map(String::as_str).collect();
            let (ds, sp) = single(&vec![0.0; vals.len()], &refs);
            let (sc, enc) = fit_scalers(&ds, &sp, EncoderFit::AllRows).unwrap();
            let a = apply_scalers(&ds, &sc, &enc).unwrap();
            let b = apply_scalers(&ds, &sc, &enc).unwrap();
            prop_assert_eq!(&a.nes[0].z, &b.nes[0].z);
        }
    }
}
