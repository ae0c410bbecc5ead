//! Run configuration: a domain preset plus table-wise overrides.

use std::path::{Path, PathBuf};

use cmtad::backbone::ModelConfig;
use cmtad::presets::{Preset, TrainConfig};
use cmtad::scoring::CalibrationConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub csv: PathBuf,
    pub schema: PathBuf,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Explicit split boundaries; chronological fractions are used when absent.
    #[serde(default)]
    pub splits: Option<PathBuf>,
    #[serde(default = "default_test_frac")]
    pub test_frac: f64,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default = "default_missing")]
    pub max_missing_frac: f64,
}

fn default_test_frac() -> f64 {
    0.2
}
fn default_val_frac() -> f64 {
    0.2
}
fn default_missing() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Seeds of the prevalence-matched random baseline rows.
    #[serde(default = "default_random_seeds")]
    pub random_seeds: Vec<u64>,
    #[serde(default = "default_score_stride")]
    pub score_stride: usize,
    #[serde(default = "default_score_batch")]
    pub score_batch: usize,
    #[serde(default = "default_forecast_weight")]
    pub forecast_weight: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            random_seeds: default_random_seeds(),
            score_stride: default_score_stride(),
            score_batch: default_score_batch(),
            forecast_weight: default_forecast_weight(),
        }
    }
}

fn default_random_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}
fn default_score_stride() -> usize {
    1
}
fn default_score_batch() -> usize {
    64
}
fn default_forecast_weight() -> f64 {
    0.5
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertingConfig {
    /// Static categorical column naming each NE's group; one group per NE when absent.
    #[serde(default)]
    pub group_column: Option<String>,
    #[serde(default)]
    pub maintenance: Option<PathBuf>,
}

/// The file as written by the user.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// telco, ran, epc or custom.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: Table,
    #[serde(default)]
    pub train: Table,
    #[serde(default)]
    pub calibration: Table,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub alerting: AlertingConfig,
}

/// Preset values with overrides applied. `model.k` and the context geometry
/// are placeholders until the dataset is loaded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<Preset>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
    pub alerting: AlertingConfig,
}

/// Recursively overlays `over` on `base`.
fn merge(base: &mut Table, over: &Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> Result<Table, CliError> {
    Ok(Table::try_from(v).map_err(cmtad::Error::from)?)
}

fn from_table<T: for<'de> Deserialize<'de>>(t: Table, what: &str) -> Result<T, CliError> {
    t.try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("[{what}]: {}", e.message())))
}

impl RunConfig {
    /// Parses the text, applies the preset (an explicit `preset` argument wins)
    /// and resolves data paths against `base_dir`.
    pub fn resolve(text: &str, preset: Option<Preset>, base_dir: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(cmtad::Error::from)?;
        let preset = match (preset, raw.preset.as_deref()) {
            (Some(p), _) => Some(p),
            (None, None | Some("custom")) => None,
            (None, Some(name)) => Some(name.parse::<Preset>()?),
        };
        let (mut model, mut train, mut calib) = match preset {
            Some(p) => (
                to_table(&p.model_config(1))?,
                to_table(&p.train_config())?,
                to_table(&CalibrationConfig::new(p.default_p()))?,
            ),
            None => (Table::new(), Table::new(), Table::new()),
        };
        model.remove("geometry");
        merge(&mut model, &raw.model);
        model.entry("k").or_insert(Value::Integer(1));
        merge(&mut train, &raw.train);
        merge(&mut calib, &raw.calibration);
        let mut data = raw.data;
        for p in [Some(&mut data.csv), Some(&mut data.schema), data.labels.as_mut(), data.splits.as_mut()]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        let mut alerting = raw.alerting;
        if let Some(m) = alerting.maintenance.as_mut().filter(|m| m.is_relative()) {
            *m = base_dir.join(&*m);
        }
        let cfg = Self {
            preset,
            seeds: raw.seeds.unwrap_or_else(|| vec![0]),
            out: raw.out,
            data,
            model: from_table(model, "model")?,
            train: from_table(train, "train")?,
            calibration: from_table(calib, "calibration")?,
            evaluation: raw.evaluation,
            alerting,
        };
        cfg.train.validate()?;
        cfg.calibration.validate()?;
        if cfg.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, preset: Option<Preset>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::resolve(&text, preset, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        Ok(toml::to_string_pretty(self).map_err(cmtad::Error::from)?)
    }
}
