use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};

use super::{ColumnRole, NeSeries, Schema, SplitBounds, Splits, TelemetryDataset};
use crate::error::{Error, Result};

/// Accepts epoch seconds, RFC 3339, or naive `YYYY-MM-DD[T ]HH:MM[:SS]` (read as UTC).
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp());
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::Data(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(ts: i64) -> String {
    DateTime::from_timestamp(ts, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| ts.to_string())
}

fn is_null(s: &str) -> bool {
    matches!(s.trim(), "" | "NA" | "NaN" | "nan" | "null" | "NULL" | "None")
}

struct Row {
    ts: i64,
    reals: Vec<Option<f64>>,
    dyn_cat: Vec<Option<String>>,
    static_cat: Vec<Option<String>>,
    static_real: Vec<Option<f64>>,
}

/// Reads a dataset CSV into per-NE regular series. Missing grid rows are
/// materialised as fully masked rows; absent KPI values are masked and filled with 0.
pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<TelemetryDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    ingest_reader(file, schema)
}

pub(crate) fn ingest_reader(reader: impl Read, schema: &Schema) -> Result<TelemetryDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("declared column `{name}` not in header")))
    };
    let ne_col = col(&schema.ne_id_column)?;
    let ts_col = col(&schema.timestamp_column)?;
    let idx = |role: ColumnRole| -> Result<Vec<usize>> {
        schema.names(role).iter().map(|n| col(n)).collect()
    };
    let real_cols = idx(ColumnRole::DynamicReal)?;
    let dcat_cols = idx(ColumnRole::DynamicCat)?;
    let scat_cols = idx(ColumnRole::StaticCat)?;
    let sreal_cols = idx(ColumnRole::StaticReal)?;
    if real_cols.is_empty() {
        return Err(Error::Schema("no dynamic_real columns declared".into()));
    }

    let parse_real = |s: &str, line: usize| -> Result<Option<f64>> {
        if is_null(s) {
            return Ok(None);
        }
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: `{s}` is not a number")))?;
        Ok(v.is_finite().then_some(v))
    };
    let opt_str = |s: &str| (!is_null(s)).then(|| s.trim().to_string());

    let mut per_ne: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let ne = rec.get(ne_col).unwrap_or("").trim().to_string();
        if ne.is_empty() {
            return Err(Error::Data(format!("line {line}: empty ne_id")));
        }
        let ts = parse_timestamp(rec.get(ts_col).unwrap_or(""))?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let row = Row {
            ts,
            reals: real_cols
                .iter()
                .map(|&c| parse_real(get(c), line))
                .collect::<Result<_>>()?,
            dyn_cat: dcat_cols.iter().map(|&c| opt_str(get(c))).collect(),
            static_cat: scat_cols.iter().map(|&c| opt_str(get(c))).collect(),
            static_real: sreal_cols
                .iter()
                .map(|&c| parse_real(get(c), line))
                .collect::<Result<_>>()?,
        };
        let rows = per_ne.entry(ne.clone()).or_default();
        if let Some(prev) = rows.last() {
            if row.ts == prev.ts {
                duplicates.push(format!("({ne}, {})", format_timestamp(ts)));
                continue;
            }
            if row.ts < prev.ts {
                return Err(Error::Data(format!(
                    "line {line}: timestamps for {ne} are not increasing"
                )));
            }
        }
        rows.push(row);
    }
    if !duplicates.is_empty() {
        let n = duplicates.len();
        duplicates.truncate(10);
        return Err(Error::Data(format!(
            "{n} duplicate (ne_id, timestamp) rows: {}",
            duplicates.join(", ")
        )));
    }
    if per_ne.is_empty() {
        return Err(Error::Data("dataset has no rows".into()));
    }

    let cadence_secs = match schema.cadence_minutes {
        Some(m) if m > 0 => i64::from(m) * 60,
        Some(_) => return Err(Error::Schema("cadence_minutes must be positive".into())),
        None => per_ne
            .values()
            .flat_map(|rows| rows.windows(2).map(|w| w[1].ts - w[0].ts))
            .min()
            .unwrap_or(3600),
    };
    if cadence_secs % 60 != 0 {
        return Err(Error::Data(format!("cadence of {cadence_secs}s is not whole minutes")));
    }

    let k = real_cols.len();
    let d_dyn = dcat_cols.len();
    let mut nes = Vec::with_capacity(per_ne.len());
    for (ne_id, rows) in per_ne {
        let start = rows[0].ts;
        let t_len = ((rows.last().expect("non-empty").ts - start) / cadence_secs) as usize + 1;
        let mut x = vec![0.0; t_len * k];
        let mut mask = vec![1u8; t_len * k];
        let mut dyn_cat = vec![None; t_len * d_dyn];
        let mut static_cat: Vec<Option<String>> = vec![None; scat_cols.len()];
        let mut static_real: Vec<Option<f64>> = vec![None; sreal_cols.len()];
        for row in rows {
            let off = row.ts - start;
            if off % cadence_secs != 0 {
                return Err(Error::Data(format!(
                    "{ne_id}: timestamp {} is off the {}-minute grid",
                    format_timestamp(row.ts),
                    cadence_secs / 60
                )));
            }
            let t = (off / cadence_secs) as usize;
            for (f, v) in row.reals.iter().enumerate() {
                if let Some(v) = v {
                    x[t * k + f] = *v;
                    mask[t * k + f] = 0;
                }
            }
            dyn_cat[t * d_dyn..(t + 1) * d_dyn].clone_from_slice(&row.dyn_cat);
            for (slot, v) in static_cat.iter_mut().zip(row.static_cat) {
                if slot.is_none() {
                    *slot = v;
                }
            }
            for (slot, v) in static_real.iter_mut().zip(row.static_real) {
                if slot.is_none() {
                    *slot = v;
                }
            }
        }
        nes.push(NeSeries {
            ne_id,
            start,
            x,
            mask,
            dyn_cat,
            static_cat,
            static_real: static_real.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
            z: Vec::new(),
            s: Vec::new(),
        });
    }

    Ok(TelemetryDataset {
        cadence_minutes: (cadence_secs / 60) as u32,
        feature_names: schema.names(ColumnRole::DynamicReal),
        dyn_cat_names: schema.names(ColumnRole::DynamicCat),
        static_cat_names: schema.names(ColumnRole::StaticCat),
        static_real_names: schema.names(ColumnRole::StaticReal),
        nes,
        encoded: false,
    })
}

/// Writes an unencoded dataset back out in the ingest format (masked cells empty).
pub fn write_dataset_csv(ds: &TelemetryDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_dataset(ds, file)
}

pub(crate) fn write_dataset(ds: &TelemetryDataset, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["ne_id".to_string(), "timestamp".to_string()];
    header.extend(ds.feature_names.iter().cloned());
    header.extend(ds.dyn_cat_names.iter().cloned());
    header.extend(ds.static_cat_names.iter().cloned());
    header.extend(ds.static_real_names.iter().cloned());
    w.write_record(&header)?;
    let k = ds.k();
    let d = ds.dyn_cat_names.len();
    for (n, ne) in ds.nes.iter().enumerate() {
        for t in 0..ds.series_len(n) {
            let mut rec = vec![ne.ne_id.clone(), format_timestamp(ds.timestamp(n, t))];
            for f in 0..k {
                rec.push(if ne.mask[t * k + f] == 1 {
                    String::new()
                } else {
                    format!("{}", ne.x[t * k + f])
                });
            }
            for c in 0..d {
                rec.push(ne.dyn_cat[t * d + c].clone().unwrap_or_default());
            }
            for v in &ne.static_cat {
                rec.push(v.clone().unwrap_or_default());
            }
            for v in &ne.static_real {
                rec.push(format!("{v}"));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Positive ground-truth cells keyed by (ne_id, feature, epoch seconds).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LabelSet {
    pub positives: BTreeSet<(String, String, i64)>,
}

impl LabelSet {
    pub fn is_positive(&self, ne: &str, feature: &str, ts: i64) -> bool {
        self.positives
            .contains(&(ne.to_string(), feature.to_string(), ts))
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }
}

/// Reads `ne_id,feature,timestamp,label` rows; rows with label 0 are accepted and ignored.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = LabelSet::default();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Data("label rows need ne_id,feature,timestamp,label".into()));
        }
        let label = rec[3].trim();
        match label {
            "1" => {
                out.positives
                    .insert((rec[0].trim().into(), rec[1].trim().into(), parse_timestamp(&rec[2])?));
            }
            "0" => {}
            other => return Err(Error::Data(format!("label must be 0 or 1, got `{other}`"))),
        }
    }
    Ok(out)
}

/// Writes a full label grid (one row per cell of every NE, 0 or 1).
pub fn write_labels_csv(ds: &TelemetryDataset, labels: &LabelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["ne_id", "feature", "timestamp", "label"])?;
    for (n, ne) in ds.nes.iter().enumerate() {
        for t in 0..ds.series_len(n) {
            let ts = ds.timestamp(n, t);
            for f in &ds.feature_names {
                let l = labels.is_positive(&ne.ne_id, f, ts);
                w.write_record([
                    ne.ne_id.as_str(),
                    f.as_str(),
                    &format_timestamp(ts),
                    if l { "1" } else { "0" },
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads predefined splits: `ne_id,split,start,end` with inclusive boundary timestamps.
pub fn read_split_file(path: impl AsRef<Path>, ds: &TelemetryDataset) -> Result<Splits> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut raw: BTreeMap<String, [Option<(usize, usize)>; 3]> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 4 {
            return Err(Error::Data("split rows need ne_id,split,start,end".into()));
        }
        let ne_id = rec[0].trim();
        let n = ds
            .ne_index(ne_id)
            .ok_or_else(|| Error::Data(format!("split file names unknown NE {ne_id}")))?;
        let slot = match rec[1].trim() {
            "train" => 0,
            "val" => 1,
            "test" => 2,
            other => return Err(Error::Data(format!("unknown split `{other}`"))),
        };
        let (a, b) = (parse_timestamp(&rec[2])?, parse_timestamp(&rec[3])?);
        let clamp = |ts: i64| -> usize {
            let off = (ts - ds.nes[n].start).max(0) / ds.cadence_secs();
            (off as usize).min(ds.series_len(n).saturating_sub(1))
        };
        raw.entry(ne_id.to_string()).or_default()[slot] = Some((clamp(a), clamp(b)));
    }
    let mut splits = Splits::default();
    for (ne_id, parts) in raw {
        let r = |p: Option<(usize, usize)>| p.map(|(a, b)| a..b + 1).unwrap_or(0..0);
        let b = SplitBounds {
            train: r(parts[0]),
            val: r(parts[1]),
            test: r(parts[2]),
        };
        b.validate(&ne_id)?;
        splits.insert(ne_id, b);
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;

    fn schema(kpis: &[&str]) -> Schema {
        Schema {
            ne_id_column: "ne_id".into(),
            timestamp_column: "timestamp".into(),
            cadence_minutes: None,
            columns: kpis
                .iter()
                .map(|k| ColumnSpec {
                    name: k.to_string(),
                    role: ColumnRole::DynamicReal,
                })
                .collect(),
        }
    }

    #[test]
    fn parses_timestamp_forms() {
        assert_eq!(parse_timestamp("3600").unwrap(), 3600);
        assert_eq!(parse_timestamp("1970-01-01T01:00:00Z").unwrap(), 3600);
        assert_eq!(parse_timestamp("1970-01-01 01:00:00").unwrap(), 3600);
        assert_eq!(format_timestamp(3600), "1970-01-01T01:00:00Z");
        assert!(parse_timestamp("yesterday").is_err());
    }

    #[test]
    fn clean_series_has_no_mask() {
        let mut csv = String::from("ne_id,timestamp,a,b\n");
        for t in 0..10 {
            csv += &format!("n1,{},{},{}\n", t * 3600, t, 2 * t);
        }
        let ds = ingest_reader(csv.as_bytes(), &schema(&["a", "b"])).unwrap();
        assert_eq!(ds.series_len(0), 10);
        assert!(ds.nes[0].mask.iter().all(|&m| m == 0));
        assert_eq!(ds.cadence_minutes, 60);
    }

    #[test]
    fn missing_value_is_masked_and_zero_filled() {
        let csv = "ne_id,timestamp,a,b\nn1,0,1.5,2\nn1,3600,,3\nn1,7200,4,NaN\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["a", "b"])).unwrap();
        let ne = &ds.nes[0];
        assert_eq!(ne.mask, vec![0, 0, 1, 0, 0, 1]);
        assert_eq!(ne.x[2], 0.0);
        assert_eq!(ne.x[5], 0.0);
    }

    #[test]
    fn gaps_become_masked_rows() {
        let csv = "ne_id,timestamp,a\nn1,0,1\nn1,3600,2\nn1,10800,4\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["a"])).unwrap();
        assert_eq!(ds.nes[0].mask, vec![0, 0, 1, 0]);
    }

    #[test]
    fn duplicates_are_listed() {
        let csv = "ne_id,timestamp,a\nn1,0,1\nn1,0,2\nn2,0,1\n";
        match ingest_reader(csv.as_bytes(), &schema(&["a"])) {
            Err(Error::Data(msg)) => assert!(msg.contains("n1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decreasing_timestamps_rejected() {
        let csv = "ne_id,timestamp,a\nn1,3600,1\nn1,0,2\n";
        assert!(matches!(
            ingest_reader(csv.as_bytes(), &schema(&["a"])),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn undeclared_column_is_schema_error() {
        let csv = "ne_id,timestamp,a\nn1,0,1\n";
        assert!(matches!(
            ingest_reader(csv.as_bytes(), &schema(&["a", "zz"])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn different_feature_columns_cannot_merge() {
        let a = ingest_reader("ne_id,timestamp,a\nn1,0,1\n".as_bytes(), &schema(&["a"])).unwrap();
        let b = ingest_reader("ne_id,timestamp,b\nn2,0,1\n".as_bytes(), &schema(&["b"])).unwrap();
        assert!(matches!(a.merge(b), Err(Error::Schema(_))));
    }

    #[test]
    fn csv_round_trip_preserves_values_and_mask() {
        let csv = "ne_id,timestamp,a,b\nn1,0,1.25,\nn1,3600,,3\nn2,0,7,8\n";
        let ds = ingest_reader(csv.as_bytes(), &schema(&["a", "b"])).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let again = ingest_reader(buf.as_slice(), &schema(&["a", "b"])).unwrap();
        assert_eq!(ds, again);
    }
}
