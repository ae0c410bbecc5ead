//! Telemetry ingestion, eligibility filtering, time splits, scaling and windowing.

mod ingest;
mod scale;
mod split;
mod window;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{
    format_timestamp, ingest_csv, parse_timestamp, read_labels, read_split_file, write_dataset_csv,
    write_labels_csv, LabelSet,
};
pub use scale::{apply_scalers, fit_scalers, EncoderFit, MinMaxScaler, OrdinalEncoder, Range01};
pub use split::{filter_eligible, split_timeline, RemovalReason, RemovalReport, SplitBounds, SplitTag, Splits};
pub use window::{assemble_batches, enumerate_windows, Batches, WindowBatch, WindowEntry, WindowIndex, WindowSpec};

/// Role of a CSV column in the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    DynamicReal,
    DynamicCat,
    StaticCat,
    StaticReal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: ColumnRole,
}

/// Column-role declaration for a dataset CSV.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default = "default_ne_column")]
    pub ne_id_column: String,
    #[serde(default = "default_ts_column")]
    pub timestamp_column: String,
    /// Inferred from the smallest timestamp step when absent.
    #[serde(default)]
    pub cadence_minutes: Option<u32>,
    pub columns: Vec<ColumnSpec>,
}

fn default_ne_column() -> String {
    "ne_id".into()
}

fn default_ts_column() -> String {
    "timestamp".into()
}

impl Schema {
    pub fn names(&self, role: ColumnRole) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.role == role)
            .map(|c| c.name.clone())
            .collect()
    }
}

/// One network element on a regular time grid.
///
/// `x` and `mask` are row-major `T x k`. Raw categorical values are kept
/// alongside their integer codes; codes are filled in by [`apply_scalers`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeSeries {
    pub ne_id: String,
    /// Epoch seconds of row 0.
    pub start: i64,
    pub x: Vec<f64>,
    /// 1 where the raw value was absent.
    pub mask: Vec<u8>,
    /// `T x d_dyn` raw dynamic categoricals.
    pub dyn_cat: Vec<Option<String>>,
    pub static_cat: Vec<Option<String>>,
    pub static_real: Vec<f64>,
    /// `T x (d_dyn + k)` codes: declared dynamic categoricals then one
    /// missingness indicator per KPI. Empty until encoded.
    pub z: Vec<u32>,
    pub s: Vec<u32>,
}

impl NeSeries {
    pub fn len(&self, k: usize) -> usize {
        if k == 0 {
            0
        } else {
            self.x.len() / k
        }
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m == 1).count() as f64 / self.mask.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryDataset {
    pub cadence_minutes: u32,
    pub feature_names: Vec<String>,
    pub dyn_cat_names: Vec<String>,
    pub static_cat_names: Vec<String>,
    pub static_real_names: Vec<String>,
    /// Sorted by `ne_id`.
    pub nes: Vec<NeSeries>,
    /// Set once [`apply_scalers`] has run.
    pub encoded: bool,
}

impl TelemetryDataset {
    pub fn k(&self) -> usize {
        self.feature_names.len()
    }

    /// Number of dynamic context columns seen by the model (declared + masks).
    pub fn d_dyn(&self) -> usize {
        self.dyn_cat_names.len() + self.k()
    }

    pub fn series_len(&self, ne: usize) -> usize {
        self.nes[ne].len(self.k())
    }

    pub fn cadence_secs(&self) -> i64 {
        i64::from(self.cadence_minutes) * 60
    }

    pub fn timestamp(&self, ne: usize, t: usize) -> i64 {
        self.nes[ne].start + t as i64 * self.cadence_secs()
    }

    /// Row index of an epoch-seconds timestamp, if on the grid.
    pub fn row_of(&self, ne: usize, ts: i64) -> Option<usize> {
        let off = ts - self.nes[ne].start;
        if off < 0 || off % self.cadence_secs() != 0 {
            return None;
        }
        let t = (off / self.cadence_secs()) as usize;
        (t < self.series_len(ne)).then_some(t)
    }

    pub fn ne_index(&self, ne_id: &str) -> Option<usize> {
        self.nes.binary_search_by(|n| n.ne_id.as_str().cmp(ne_id)).ok()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }

    /// Combines two datasets with identical column layout and cadence.
    pub fn merge(mut self, other: TelemetryDataset) -> Result<Self> {
        if self.feature_names != other.feature_names
            || self.dyn_cat_names != other.dyn_cat_names
            || self.static_cat_names != other.static_cat_names
            || self.static_real_names != other.static_real_names
        {
            return Err(Error::Schema(format!(
                "feature columns differ: {:?} vs {:?}",
                self.feature_names, other.feature_names
            )));
        }
        if self.cadence_minutes != other.cadence_minutes {
            return Err(Error::Schema(format!(
                "cadence differs: {} vs {} minutes",
                self.cadence_minutes, other.cadence_minutes
            )));
        }
        if self.encoded || other.encoded {
            return Err(Error::Contract("merge expects unencoded datasets".into()));
        }
        for ne in other.nes {
            if self.ne_index(&ne.ne_id).is_some() {
                return Err(Error::Data(format!("network element {} present twice", ne.ne_id)));
            }
            self.nes.push(ne);
        }
        self.nes.sort_by(|a, b| a.ne_id.cmp(&b.ne_id));
        Ok(self)
    }

    /// Keeps only the listed network elements.
    pub fn select(&self, ne_ids: &[&str]) -> Self {
        let mut out = self.clone();
        out.nes.retain(|n| ne_ids.contains(&n.ne_id.as_str()));
        out
    }
}
