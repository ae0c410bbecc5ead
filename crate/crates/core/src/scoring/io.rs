//! CSV forms of residuals, thresholds and decisions.

use std::collections::HashMap;
use std::path::Path;

use crate::data::{format_timestamp, parse_timestamp, SplitTag};
use crate::error::{Error, Result};

use super::{Decision, DecisionFrame, Method, Residual, ResidualFrame, Threshold, ThresholdTable};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Data(format!("bad {what} value `{s}`")))
}

fn opt_num(s: &str, what: &str) -> Result<Option<f64>> {
    if s.trim().is_empty() {
        Ok(None)
    } else {
        num(s, what).map(Some)
    }
}

fn split_tag(s: &str) -> Result<SplitTag> {
    SplitTag::ALL
        .into_iter()
        .find(|t| t.as_str() == s.trim())
        .ok_or_else(|| Error::Data(format!("unknown split `{s}`")))
}

fn need(rec: &csv::StringRecord, n: usize, what: &str) -> Result<()> {
    if rec.len() < n {
        return Err(Error::Data(format!("{what} rows need {n} columns, got {}", rec.len())));
    }
    Ok(())
}

/// Columns `ne_id,feature,timestamp,e_for,e_rec,e,split`; absent residuals are empty.
pub fn write_residuals_csv(frame: &ResidualFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["ne_id", "feature", "timestamp", "e_for", "e_rec", "e", "split"])?;
    for r in &frame.entries {
        w.write_record([
            frame.ne_ids[r.ne].clone(),
            frame.features[r.feature].clone(),
            format_timestamp(r.timestamp),
            opt(r.e_for),
            opt(r.e_rec),
            r.e.to_string(),
            r.split.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// NE and feature order follow first appearance in the file.
pub fn read_residuals_csv(path: impl AsRef<Path>, forecast_weight: f64) -> Result<ResidualFrame> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut frame = ResidualFrame {
        ne_ids: Vec::new(),
        features: Vec::new(),
        forecast_weight,
        entries: Vec::new(),
    };
    let mut ne_ix: HashMap<String, usize> = HashMap::new();
    let mut f_ix: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        need(&rec, 7, "residual")?;
        let index = |map: &mut HashMap<String, usize>, names: &mut Vec<String>, key: &str| {
            *map.entry(key.to_string()).or_insert_with(|| {
                names.push(key.to_string());
                names.len() - 1
            })
        };
        let ne = index(&mut ne_ix, &mut frame.ne_ids, rec[0].trim());
        let feature = index(&mut f_ix, &mut frame.features, rec[1].trim());
        let e = num(&rec[5], "e")?;
        if !(e >= 0.0 && e.is_finite()) {
            return Err(Error::Data(format!("residual must be finite and nonnegative, got {e}")));
        }
        frame.entries.push(Residual {
            ne,
            feature,
            timestamp: parse_timestamp(&rec[2])?,
            split: split_tag(&rec[6])?,
            e_for: opt_num(&rec[3], "e_for")?,
            e_rec: opt_num(&rec[4], "e_rec")?,
            e,
        });
    }
    frame
        .entries
        .sort_by(|a, b| (a.ne, a.feature, a.timestamp).cmp(&(b.ne, b.feature, b.timestamp)));
    Ok(frame)
}

/// Columns `ne_id,feature,method,theta,tau,n,p,extras` with the extras as JSON.
pub fn write_thresholds_csv(table: &ThresholdTable, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["ne_id", "feature", "method", "theta", "tau", "n", "p", "extras"])?;
    for t in &table.entries {
        w.write_record([
            t.ne_id.clone(),
            t.feature.clone(),
            t.method.as_str().to_string(),
            t.theta.to_string(),
            t.tau.to_string(),
            t.n.to_string(),
            table.p.to_string(),
            serde_json::to_string(&t.extras)?,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_thresholds_csv(path: impl AsRef<Path>) -> Result<ThresholdTable> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut table = ThresholdTable::default();
    for rec in rdr.records() {
        let rec = rec?;
        need(&rec, 8, "threshold")?;
        table.p = num(&rec[6], "p")?;
        table.entries.push(Threshold {
            ne_id: rec[0].trim().to_string(),
            feature: rec[1].trim().to_string(),
            method: rec[2].parse::<Method>()?,
            theta: num(&rec[3], "theta")?,
            tau: num(&rec[4], "tau")?,
            n: rec[5]
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad n `{}`", &rec[5])))?,
            extras: serde_json::from_str(&rec[7])?,
        });
    }
    Ok(table)
}

/// Columns `ne_id,feature,timestamp,e,tau,flag` with the flag as 0/1.
pub fn write_decisions_csv(d: &DecisionFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["ne_id", "feature", "timestamp", "e", "tau", "flag"])?;
    for x in &d.entries {
        w.write_record([
            x.ne_id.clone(),
            x.feature.clone(),
            format_timestamp(x.timestamp),
            x.e.to_string(),
            x.tau.to_string(),
            if x.flag { "1" } else { "0" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_decisions_csv(path: impl AsRef<Path>) -> Result<DecisionFrame> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = DecisionFrame::default();
    for rec in rdr.records() {
        let rec = rec?;
        need(&rec, 6, "decision")?;
        let flag = match rec[5].trim() {
            "1" => true,
            "0" => false,
            other => return Err(Error::Data(format!("flag must be 0 or 1, got `{other}`"))),
        };
        out.entries.push(Decision {
            ne_id: rec[0].trim().to_string(),
            feature: rec[1].trim().to_string(),
            timestamp: parse_timestamp(&rec[2])?,
            e: num(&rec[3], "e")?,
            tau: num(&rec[4], "tau")?,
            flag,
        });
    }
    Ok(out)
}
