//! Priority levels, per-group alert aggregation and maintenance annotation.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, parse_timestamp, SplitTag, TelemetryDataset};
use crate::error::{Error, Result};
use crate::scoring::{DecisionFrame, ResidualFrame};
use crate::stats::{quantile_sorted, sorted};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitBins {
    pub ne_id: String,
    pub feature: String,
    pub edges: [f64; 4],
    /// Edges not strictly increasing; every error maps to level 1.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl UnitBins {
    /// `1 + #{edges < e}`, or 1 for degenerate bins.
    pub fn level(&self, e: f64) -> u8 {
        if self.degenerate {
            return 1;
        }
        1 + self.edges.iter().filter(|&&b| b < e).count() as u8
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorityBinning {
    pub quantiles: Vec<f64>,
    pub entries: Vec<UnitBins>,
    pub warnings: Vec<String>,
}

impl PriorityBinning {
    pub fn get(&self, ne_id: &str, feature: &str) -> Option<&UnitBins> {
        self.entries.iter().find(|b| b.ne_id == ne_id && b.feature == feature)
    }
}

/// Empirical quantile edges of each unit's validation residuals.
pub fn fit_priority_bins(frame: &ResidualFrame, quantiles: &[f64]) -> Result<PriorityBinning> {
    if quantiles.len() != 4 || quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("priority binning needs 4 strictly increasing quantiles".into()));
    }
    let values = frame.unit_values(SplitTag::Val);
    let mut out = PriorityBinning {
        quantiles: quantiles.to_vec(),
        ..PriorityBinning::default()
    };
    for (n, f) in frame.units() {
        let (ne_id, feature) = (&frame.ne_ids[n], &frame.features[f]);
        let s = sorted(values.get(&(n, f)).map(Vec::as_slice).unwrap_or(&[]));
        let mut edges = [0.0; 4];
        for (e, &q) in edges.iter_mut().zip(quantiles) {
            *e = quantile_sorted(&s, q).unwrap_or(0.0);
        }
        let degenerate = edges.windows(2).any(|w| w[0] >= w[1]);
        if degenerate {
            out.warnings.push(format!(
                "({ne_id}, {feature}): validation errors too concentrated for distinct priority edges"
            ));
        }
        out.entries.push(UnitBins {
            ne_id: ne_id.clone(),
            feature: feature.clone(),
            edges,
            degenerate,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaintenanceWindow {
    pub group_id: String,
    /// Inclusive epoch seconds.
    pub start: i64,
    pub end: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertRecord {
    pub timestamp: i64,
    pub group_id: String,
    pub aggregated_priority: u32,
    pub aggregated_count: u32,
    pub in_maintenance: bool,
}

/// `ne_id -> group` from a static categorical column of the dataset.
pub fn grouping_from_column(ds: &TelemetryDataset, column: &str) -> Result<BTreeMap<String, String>> {
    let c = ds
        .static_cat_names
        .iter()
        .position(|n| n == column)
        .ok_or_else(|| Error::Schema(format!("no static categorical column `{column}`")))?;
    Ok(ds
        .nes
        .iter()
        .map(|ne| {
            let g = ne.static_cat[c].clone().unwrap_or_else(|| "null".into());
            (ne.ne_id.clone(), g)
        })
        .collect())
}

/// One record per (group, timestamp) seen in `decisions`, ordered by group then time.
pub fn aggregate_alerts(
    decisions: &DecisionFrame,
    bins: &PriorityBinning,
    grouping: &BTreeMap<String, String>,
    maintenance: &[MaintenanceWindow],
) -> Result<Vec<AlertRecord>> {
    let lookup: HashMap<(&str, &str), &UnitBins> = bins
        .entries
        .iter()
        .map(|b| ((b.ne_id.as_str(), b.feature.as_str()), b))
        .collect();
    let mut acc: BTreeMap<(&str, i64), (u32, u32)> = BTreeMap::new();
    for d in &decisions.entries {
        let group = grouping
            .get(&d.ne_id)
            .ok_or_else(|| Error::Contract(format!("NE {} has no group", d.ne_id)))?;
        let slot = acc.entry((group.as_str(), d.timestamp)).or_default();
        if d.flag {
            let b = lookup
                .get(&(d.ne_id.as_str(), d.feature.as_str()))
                .ok_or_else(|| Error::Contract(format!("no priority bins for ({}, {})", d.ne_id, d.feature)))?;
            slot.0 += b.level(d.e) as u32;
            slot.1 += 1;
        }
    }
    Ok(acc
        .into_iter()
        .map(|((group, ts), (priority, count))| AlertRecord {
            timestamp: ts,
            group_id: group.to_string(),
            aggregated_priority: priority,
            aggregated_count: count,
            in_maintenance: maintenance
                .iter()
                .any(|m| m.group_id == group && m.start <= ts && ts <= m.end),
        })
        .collect())
}

/// Columns `timestamp,group_id,aggregated_priority,aggregated_count,in_maintenance`.
pub fn write_alerts_csv(records: &[AlertRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record([
        "timestamp",
        "group_id",
        "aggregated_priority",
        "aggregated_count",
        "in_maintenance",
    ])?;
    for r in records {
        w.write_record([
            format_timestamp(r.timestamp),
            r.group_id.clone(),
            r.aggregated_priority.to_string(),
            r.aggregated_count.to_string(),
            r.in_maintenance.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `group_id,start,end` rows with inclusive ISO-8601 bounds.
pub fn read_maintenance_csv(path: impl AsRef<Path>) -> Result<Vec<MaintenanceWindow>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(Error::Data("maintenance rows need group_id,start,end".into()));
        }
        let (start, end) = (parse_timestamp(&rec[1])?, parse_timestamp(&rec[2])?);
        if start > end {
            return Err(Error::Data(format!("maintenance window for {} ends before it starts", &rec[0])));
        }
        out.push(MaintenanceWindow {
            group_id: rec[0].trim().to_string(),
            start,
            end,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    pub group_id: String,
    pub timestamps: Vec<String>,
    pub aggregated_priority: Vec<u32>,
    pub aggregated_count: Vec<u32>,
    pub in_maintenance: Vec<bool>,
}

/// One series per group, for external plotting.
pub fn plot_series(records: &[AlertRecord]) -> Vec<PlotSeries> {
    let mut by_group: BTreeMap<&str, PlotSeries> = BTreeMap::new();
    for r in records {
        let s = by_group.entry(&r.group_id).or_insert_with(|| PlotSeries {
            group_id: r.group_id.clone(),
            ..PlotSeries::default()
        });
        s.timestamps.push(format_timestamp(r.timestamp));
        s.aggregated_priority.push(r.aggregated_priority);
        s.aggregated_count.push(r.aggregated_count);
        s.in_maintenance.push(r.in_maintenance);
    }
    by_group.into_values().collect()
}
