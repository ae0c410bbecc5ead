use serde::{Deserialize, Serialize};

use crate::data::{OrdinalEncoder, TelemetryDataset};
use crate::error::{Error, Result};

/// Which convolution blocks receive FiLM conditioning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextBlocks {
    None,
    Block1,
    Block2,
    #[default]
    Both,
}

impl ContextBlocks {
    pub const ALL: [ContextBlocks; 4] = [Self::None, Self::Block1, Self::Block2, Self::Both];

    pub fn includes(self, block: usize) -> bool {
        matches!(
            (self, block),
            (Self::Both, _) | (Self::Block1, 1) | (Self::Block2, 2)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Block1 => "block1",
            Self::Block2 => "block2",
            Self::Both => "both",
        }
    }
}

/// Which context sources feed the FiLM projectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMode {
    #[default]
    Full,
    DynamicOnly,
    StaticOnly,
}

impl ContextMode {
    pub const ALL: [ContextMode; 3] = [Self::Full, Self::DynamicOnly, Self::StaticOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::DynamicOnly => "dynamic_only",
            Self::StaticOnly => "static_only",
        }
    }
}

/// Categorical table sizes and static-real count of a dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    /// One entry per dynamic context column (declared columns, then one mask indicator per KPI).
    pub dyn_cards: Vec<usize>,
    pub static_cards: Vec<usize>,
    pub n_static_real: usize,
}

impl Geometry {
    pub fn from_dataset(ds: &TelemetryDataset, enc: &OrdinalEncoder) -> Self {
        let mut dyn_cards = enc.dynamic_cardinalities();
        // mask indicator: null, observed, missing
        dyn_cards.extend(std::iter::repeat_n(3, ds.k()));
        Self {
            dyn_cards,
            static_cards: enc.static_cardinalities(),
            n_static_real: ds.static_real_names.len(),
        }
    }

    /// Mask indicators only.
    pub fn masks_only(k: usize) -> Self {
        Self {
            dyn_cards: vec![3; k],
            static_cards: vec![],
            n_static_real: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub l: usize,
    pub h: usize,
    pub k: usize,
    pub kernel_size: usize,
    pub use_gatv2: bool,
    pub gru_layers: usize,
    pub gru_hidden: usize,
    pub forecast_layers: usize,
    pub forecast_hidden: usize,
    pub recon_layers: usize,
    pub recon_hidden: usize,
    pub dropout: f64,
    pub lr: f64,
    pub embed_dim: usize,
    /// Weight of the reconstruction loss.
    pub gamma: f64,
    pub context_blocks: ContextBlocks,
    pub context_mode: ContextMode,
    #[serde(default)]
    pub geometry: Geometry,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("L", self.l),
            ("H", self.h),
            ("k", self.k),
            ("kernel_size", self.kernel_size),
            ("gru_layers", self.gru_layers),
            ("gru_hidden", self.gru_hidden),
            ("forecast_hidden", self.forecast_hidden),
            ("recon_layers", self.recon_layers),
            ("recon_hidden", self.recon_hidden),
            ("embed_dim", self.embed_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.geometry.dyn_cards.iter().chain(&self.geometry.static_cards).any(|&c| c == 0) {
            return Err(Error::Config("embedding tables need at least the null row".into()));
        }
        Ok(())
    }

    pub fn with_geometry(mut self, k: usize, geometry: Geometry) -> Self {
        self.k = k;
        self.geometry = geometry;
        self
    }

    pub fn dyn_ctx_dim(&self) -> usize {
        self.geometry.dyn_cards.len() * self.embed_dim
    }

    pub fn static_ctx_dim(&self) -> usize {
        self.geometry.static_cards.len() * self.embed_dim
            + if self.geometry.n_static_real > 0 { self.embed_dim } else { 0 }
    }

    pub fn ctx_dim(&self) -> usize {
        self.dyn_ctx_dim() + self.static_ctx_dim()
    }
}
