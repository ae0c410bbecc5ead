//! Residual scores, unsupervised thresholds and the flag rule.

mod exponential;
mod gamma;
mod io;
mod pot;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::backbone::ModelState;
use crate::data::{SplitTag, Splits, TelemetryDataset, WindowBatch, WindowEntry, WindowSpec};
use crate::error::{Error, Result};

pub use exponential::{exponential_tau, fit_exponential};
pub use gamma::{compare_exp_gamma, trigamma, GammaReport, GammaUnit};
pub use io::{
    read_decisions_csv, read_residuals_csv, read_thresholds_csv, write_decisions_csv, write_residuals_csv,
    write_thresholds_csv,
};
pub use pot::{fit_gpd_pwm, fit_pot, pot_tau, PotFit};

/// Residuals of one (NE, feature, timestamp).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub ne: usize,
    pub feature: usize,
    pub timestamp: i64,
    pub split: SplitTag,
    /// Absent when no window forecasts this timestamp one step ahead.
    pub e_for: Option<f64>,
    /// Absent when no window ends at this timestamp.
    pub e_rec: Option<f64>,
    pub e: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualFrame {
    pub ne_ids: Vec<String>,
    pub features: Vec<String>,
    pub forecast_weight: f64,
    /// Sorted by (ne, feature, timestamp).
    pub entries: Vec<Residual>,
}

/// Weighted residual; a lone residual stands in for the pair.
pub fn combine(e_for: Option<f64>, e_rec: Option<f64>, forecast_weight: f64) -> Option<f64> {
    match (e_for, e_rec) {
        (Some(f), Some(r)) => Some(forecast_weight * f + (1.0 - forecast_weight) * r),
        (Some(f), None) => Some(f),
        (None, Some(r)) => Some(r),
        (None, None) => None,
    }
}

impl ResidualFrame {
    /// Combined scores per (ne, feature) for one split, in timestamp order.
    pub fn unit_values(&self, split: SplitTag) -> BTreeMap<(usize, usize), Vec<f64>> {
        let mut out: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        for r in self.entries.iter().filter(|r| r.split == split) {
            out.entry((r.ne, r.feature)).or_default().push(r.e);
        }
        out
    }

    /// Every (ne, feature) pair, present in the frame or not.
    pub fn units(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.ne_ids.len()).flat_map(move |n| (0..self.features.len()).map(move |f| (n, f)))
    }

    pub fn count_missing_forecast(&self) -> usize {
        self.entries.iter().filter(|r| r.e_for.is_none()).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub stride: usize,
    pub batch_size: usize,
    pub forecast_weight: f64,
    pub splits: Vec<SplitTag>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            batch_size: 64,
            forecast_weight: 0.5,
            splits: vec![SplitTag::Val, SplitTag::Test],
        }
    }
}

/// Absolute reconstruction error at each window's last input step and
/// absolute one-step-ahead forecast error at its first target step. Windows
/// stay inside their split block; masked cells are not scored.
pub fn compute_residuals(
    state: &ModelState,
    ds: &TelemetryDataset,
    splits: &Splits,
    opts: &ScoreOptions,
) -> Result<ResidualFrame> {
    let c = &state.config;
    let spec = WindowSpec::new(c.l, c.h, opts.stride)?;
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&opts.forecast_weight) {
        return Err(Error::Config("forecast weight must be in [0, 1]".into()));
    }
    let k = ds.k();
    let mut entries = Vec::new();
    for (n, ne) in ds.nes.iter().enumerate() {
        let bounds = splits
            .get(&ne.ne_id)
            .ok_or_else(|| Error::Contract(format!("no split for {}", ne.ne_id)))?;
        let t_len = ds.series_len(n);
        let mut rec: Vec<Option<f64>> = vec![None; t_len * k];
        let mut fore: Vec<Option<f64>> = vec![None; t_len * k];
        let mut tag: Vec<Option<SplitTag>> = vec![None; t_len];
        for &split in &opts.splits {
            let block = bounds.block(split);
            let end = block.end.min(t_len);
            tag[block.start.min(end)..end].iter_mut().for_each(|t| *t = Some(split));
            let starts: Vec<WindowEntry> = (block.start..)
                .step_by(spec.stride)
                .take_while(|&t0| t0 + c.l <= end)
                .map(|t0| WindowEntry { ne: n, t0, split })
                .collect();
            for chunk in starts.chunks(opts.batch_size) {
                let batch = WindowBatch::gather_padded(ds, spec, chunk)?;
                let (f, r) = state.predict(&batch)?;
                let (fv, rv) = (f.data(), r.data());
                for (b, e) in chunk.iter().enumerate() {
                    let t_rec = e.t0 + c.l - 1;
                    for j in 0..k {
                        let cell = t_rec * k + j;
                        if ne.mask[cell] == 0 {
                            rec[cell] = Some((rv[(b * c.l + c.l - 1) * k + j] - ne.x[cell]).abs());
                        }
                    }
                    let t_for = e.t0 + c.l;
                    if t_for < end {
                        for j in 0..k {
                            let cell = t_for * k + j;
                            if ne.mask[cell] == 0 {
                                fore[cell] = Some((fv[b * c.h * k + j] - ne.x[cell]).abs());
                            }
                        }
                    }
                }
            }
        }
        for j in 0..k {
            for t in 0..t_len {
                let Some(split) = tag[t] else { continue };
                let cell = t * k + j;
                if let Some(e) = combine(fore[cell], rec[cell], opts.forecast_weight) {
                    entries.push(Residual {
                        ne: n,
                        feature: j,
                        timestamp: ds.timestamp(n, t),
                        split,
                        e_for: fore[cell],
                        e_rec: rec[cell],
                        e,
                    });
                }
            }
        }
    }
    Ok(ResidualFrame {
        ne_ids: ds.nes.iter().map(|n| n.ne_id.clone()).collect(),
        features: ds.feature_names.clone(),
        forecast_weight: opts.forecast_weight,
        entries,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Exponential,
    Pot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exponential => "exponential",
            Method::Pot => "pot",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exponential" => Ok(Method::Exponential),
            "pot" => Ok(Method::Pot),
            other => Err(Error::Config(format!("unknown threshold method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Target tail probability; the expected flag rate is `1 - p`.
    pub p: f64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_pot_q")]
    pub pot_init_quantile: f64,
    #[serde(default = "default_priority_q")]
    pub priority_quantiles: Vec<f64>,
    /// Units with fewer validation residuals use a pooled fit.
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
    /// POT falls back to the exponential fit below this many exceedances.
    #[serde(default = "default_min_exceed")]
    pub min_exceedances: usize,
}

fn default_pot_q() -> f64 {
    0.98
}

pub fn default_priority_q() -> Vec<f64> {
    vec![0.98, 0.99, 0.995, 0.999]
}

fn default_min_samples() -> usize {
    10
}

fn default_min_exceed() -> usize {
    30
}

impl CalibrationConfig {
    pub fn new(p: f64) -> Self {
        Self {
            p,
            method: Method::Exponential,
            pot_init_quantile: default_pot_q(),
            priority_quantiles: default_priority_q(),
            min_samples: default_min_samples(),
            min_exceedances: default_min_exceed(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p < 1.0) {
            return Err(Error::Config(format!("p must be in (0, 1), got {}", self.p)));
        }
        if !(self.pot_init_quantile > 0.0 && self.pot_init_quantile < 1.0) {
            return Err(Error::Config("pot_init_quantile must be in (0, 1)".into()));
        }
        let q = &self.priority_quantiles;
        if q.len() != 4 || q.iter().any(|&v| !(v > 0.0 && v < 1.0)) || q.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "priority_quantiles must be 4 strictly increasing values in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Fit diagnostics kept next to each threshold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdExtras {
    /// Too few validation residuals; the pooled scale was used.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pooled: bool,
    /// All validation residuals were zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pot: Option<PotFit>,
    /// Why POT fell back to the exponential threshold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub ne_id: String,
    pub feature: String,
    pub method: Method,
    /// Exponential scale: mean validation residual.
    pub theta: f64,
    pub tau: f64,
    pub n: usize,
    pub extras: ThresholdExtras,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub p: f64,
    pub entries: Vec<Threshold>,
    pub warnings: Vec<String>,
}

impl ThresholdTable {
    pub fn lookup(&self) -> HashMap<(&str, &str), &Threshold> {
        self.entries
            .iter()
            .map(|t| ((t.ne_id.as_str(), t.feature.as_str()), t))
            .collect()
    }

    pub fn get(&self, ne_id: &str, feature: &str) -> Option<&Threshold> {
        self.entries.iter().find(|t| t.ne_id == ne_id && t.feature == feature)
    }
}

/// Dispatches on `cfg.method`.
pub fn calibrate(frame: &ResidualFrame, cfg: &CalibrationConfig) -> Result<ThresholdTable> {
    cfg.validate()?;
    match cfg.method {
        Method::Exponential => fit_exponential(frame, cfg, SplitTag::Val),
        Method::Pot => fit_pot(frame, cfg, SplitTag::Val),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub ne_id: String,
    pub feature: String,
    pub timestamp: i64,
    pub e: f64,
    pub tau: f64,
    pub flag: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionFrame {
    pub entries: Vec<Decision>,
}

/// Key of one flagged cell: (ne_id, feature, timestamp).
pub type AnomalyKey = (String, String, i64);

impl DecisionFrame {
    pub fn flagged(&self) -> BTreeSet<AnomalyKey> {
        self.entries
            .iter()
            .filter(|d| d.flag)
            .map(|d| (d.ne_id.clone(), d.feature.clone(), d.timestamp))
            .collect()
    }

    pub fn flag_rate(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().filter(|d| d.flag).count() as f64 / self.entries.len() as f64
    }
}

/// `flag = e > tau`, strictly.
pub fn flag_anomalies(frame: &ResidualFrame, table: &ThresholdTable, split: SplitTag) -> Result<DecisionFrame> {
    let lookup = table.lookup();
    let mut entries = Vec::new();
    for r in frame.entries.iter().filter(|r| r.split == split) {
        let (ne, f) = (&frame.ne_ids[r.ne], &frame.features[r.feature]);
        let th = lookup
            .get(&(ne.as_str(), f.as_str()))
            .ok_or_else(|| Error::Contract(format!("no threshold for ({ne}, {f})")))?;
        entries.push(Decision {
            ne_id: ne.clone(),
            feature: f.clone(),
            timestamp: r.timestamp,
            e: r.e,
            tau: th.tau,
            flag: r.e > th.tau,
        });
    }
    Ok(DecisionFrame { entries })
}
