//! Stage wiring shared by the command line and the experiment harnesses.

use crate::backbone::{Geometry, ModelConfig, ModelState};
use crate::data::{
    apply_scalers, enumerate_windows, filter_eligible, fit_scalers, split_timeline, EncoderFit, LabelSet,
    MinMaxScaler, OrdinalEncoder, RemovalReport, SplitTag, Splits, TelemetryDataset, WindowSpec,
};
use crate::error::{Error, Result};
use crate::evaluation::{build_streams, evaluate, EvalStreams, MetricReport};
use crate::presets::TrainConfig;
use crate::scoring::{
    calibrate, compute_residuals, flag_anomalies, CalibrationConfig, DecisionFrame, ResidualFrame, ScoreOptions,
    ThresholdTable,
};
use crate::trainer::{train, TrainRun};

#[derive(Clone, Debug, PartialEq)]
pub struct PrepareOptions {
    pub test_frac: f64,
    /// Fraction of the non-test prefix used for validation.
    pub val_frac: f64,
    pub max_missing_frac: f64,
    pub encoder_fit: EncoderFit,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            test_frac: 0.2,
            val_frac: 0.2,
            max_missing_frac: 0.1,
            encoder_fit: EncoderFit::AllRows,
        }
    }
}

/// Encoded dataset with the splits and fitted transforms that produced it.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub ds: TelemetryDataset,
    pub splits: Splits,
    pub scaler: MinMaxScaler,
    pub encoder: OrdinalEncoder,
    pub removed: RemovalReport,
}

impl Prepared {
    pub fn geometry(&self) -> Geometry {
        Geometry::from_dataset(&self.ds, &self.encoder)
    }

    /// `base` with this dataset's feature count and context geometry.
    pub fn model_config(&self, base: ModelConfig) -> ModelConfig {
        base.with_geometry(self.ds.k(), self.geometry())
    }

    /// The same transforms restricted to a subset of NEs.
    pub fn select(&self, ne_ids: &[&str]) -> Prepared {
        Prepared {
            ds: self.ds.select(ne_ids),
            ..self.clone()
        }
    }
}

/// Splits (given or chronological), eligibility filter, scaling and encoding.
pub fn prepare(
    raw: &TelemetryDataset,
    splits: Option<Splits>,
    l: usize,
    h: usize,
    opts: &PrepareOptions,
) -> Result<Prepared> {
    let splits = match splits {
        Some(s) => s,
        None => split_timeline(raw, opts.test_frac, opts.val_frac),
    };
    let (kept, removed) = filter_eligible(raw, &splits, opts.max_missing_frac, l, h)?;
    if kept.nes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (scaler, encoder) = fit_scalers(&kept, &splits, opts.encoder_fit)?;
    let ds = apply_scalers(&kept, &scaler, &encoder)?;
    Ok(Prepared {
        ds,
        splits,
        scaler,
        encoder,
        removed,
    })
}

pub fn train_model(prep: &Prepared, model: ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<(ModelState, TrainRun)> {
    let index = enumerate_windows(&prep.ds, &prep.splits, WindowSpec::new(model.l, model.h, cfg.stride)?)?;
    train(&prep.ds, &index, model, cfg, seed)
}

/// Residuals, validation-fitted thresholds and test decisions of one model.
#[derive(Clone, Debug)]
pub struct Scored {
    pub residuals: ResidualFrame,
    pub thresholds: ThresholdTable,
    pub decisions: DecisionFrame,
}

pub fn score(state: &ModelState, prep: &Prepared, calib: &CalibrationConfig, opts: &ScoreOptions) -> Result<Scored> {
    let residuals = compute_residuals(state, &prep.ds, &prep.splits, opts)?;
    let thresholds = calibrate(&residuals, calib)?;
    let decisions = flag_anomalies(&residuals, &thresholds, SplitTag::Test)?;
    Ok(Scored {
        residuals,
        thresholds,
        decisions,
    })
}

pub fn test_streams(prep: &Prepared, decisions: &DecisionFrame, labels: &LabelSet) -> Result<EvalStreams> {
    build_streams(&prep.ds, &prep.splits, SplitTag::Test, decisions, labels)
}

pub fn evaluate_decisions(prep: &Prepared, decisions: &DecisionFrame, labels: &LabelSet, label: &str) -> Result<MetricReport> {
    evaluate(&test_streams(prep, decisions, labels)?, label)
}
