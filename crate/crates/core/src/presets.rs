//! Domain presets: window geometry, training budget and architecture.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{ContextBlocks, ContextMode, Geometry, ModelConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Telco,
    Ran,
    Epc,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "telco" => Ok(Self::Telco),
            "ran" => Ok(Self::Ran),
            "epc" => Ok(Self::Epc),
            other => Err(Error::Config(format!("unknown preset '{other}' (telco, ran, epc)"))),
        }
    }
}

/// Optimisation budget and window stride.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stride: usize,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
}

fn default_patience() -> usize {
    10
}

fn default_clip() -> f64 {
    5.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("stride, batch_size and epochs must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Telco => "telco",
            Self::Ran => "ran",
            Self::Epc => "epc",
        }
    }

    pub fn train_config(self) -> TrainConfig {
        let (stride, batch_size, epochs) = match self {
            Self::Ran => (17, 100, 30),
            Self::Epc => (89, 30, 200),
            Self::Telco => (31, 30, 150),
        };
        TrainConfig {
            stride,
            batch_size,
            epochs,
            patience: default_patience(),
            clip_norm: default_clip(),
        }
    }

    /// Architecture for `k` KPIs; geometry defaults to mask indicators only.
    pub fn model_config(self, k: usize) -> ModelConfig {
        // (L, H, kernel, gru, forecast layers x hidden, recon layers x hidden, dropout, lr)
        let (l, h, kernel, gru, (fl, fh), (rl, rh), dropout, lr) = match self {
            Self::Ran => (24, 7, 4, 580, (3, 400), (1, 400), 0.07, 2.487e-4),
            Self::Epc => (101, 53, 4, 780, (1, 350), (5, 800), 0.10, 2.488e-4),
            Self::Telco => (577, 257, 18, 820, (4, 150), (1, 150), 0.04, 1.728e-4),
        };
        ModelConfig {
            l,
            h,
            k,
            kernel_size: kernel,
            use_gatv2: true,
            gru_layers: 1,
            gru_hidden: gru,
            forecast_layers: fl,
            forecast_hidden: fh,
            recon_layers: rl,
            recon_hidden: rh,
            dropout,
            lr,
            embed_dim: 8,
            gamma: 1.0,
            context_blocks: ContextBlocks::Both,
            context_mode: ContextMode::Full,
            geometry: Geometry::masks_only(k),
        }
    }

    /// Default tail probability for the exponential threshold.
    pub fn default_p(self) -> f64 {
        match self {
            Self::Ran => 0.99,
            Self::Telco | Self::Epc => 0.999,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_values() {
        let t = Preset::Telco.train_config();
        let m = Preset::Telco.model_config(12);
        assert_eq!((m.l, m.h, t.stride, t.batch_size, t.epochs), (577, 257, 31, 30, 150));
        assert_eq!((m.kernel_size, m.gru_hidden, m.forecast_layers, m.forecast_hidden), (18, 820, 4, 150));
        let r = Preset::Ran.model_config(6);
        assert_eq!((r.l, r.h, r.gamma), (24, 7, 1.0));
        assert_eq!(Preset::Ran.train_config().stride, 17);
        let e = Preset::Epc.model_config(6);
        assert_eq!((e.recon_layers, e.recon_hidden, e.dropout), (5, 800, 0.10));
        assert!("bogus".parse::<Preset>().is_err());
        for p in [Preset::Telco, Preset::Ran, Preset::Epc] {
            p.model_config(3).validate().unwrap();
        }
    }
}
