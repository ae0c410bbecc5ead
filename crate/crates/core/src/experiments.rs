//! Experiment harnesses: desk-scale detection, context ablation, centralisation
//! stability, POT against exponential thresholds, and the all-positive anchor.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::backbone::{ContextBlocks, ContextMode, ModelConfig};
use crate::data::SplitTag;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, jaccard, random_baseline, EvalStreams, MetricReport, Prf, Segment};
use crate::pipeline::{evaluate_decisions, prepare, score, train_model, PrepareOptions, Prepared};
use crate::presets::{Preset, TrainConfig};
use crate::scoring::{
    fit_exponential, fit_pot, flag_anomalies, AnomalyKey, CalibrationConfig, Method, Residual, ResidualFrame,
    ScoreOptions,
};
use crate::synthgen::{generate, RandomAnomalies, SynthOutput, SynthSpec};
use crate::trainer::Losses;

/// Everything needed to go from a synthetic spec to a metric report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub spec: SynthSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub calibration: CalibrationConfig,
    pub score: ScoreOptions,
    pub test_frac: f64,
    pub val_frac: f64,
}

/// A RAN-preset model shrunk to desk scale.
pub fn small_ran_model(k: usize) -> ModelConfig {
    let mut m = Preset::Ran.model_config(k);
    m.kernel_size = 4;
    m.gru_hidden = 32;
    m.forecast_layers = 2;
    m.forecast_hidden = 32;
    m.recon_layers = 1;
    m.recon_hidden = 32;
    m.embed_dim = 4;
    m.dropout = 0.0;
    m.lr = 3e-3;
    m
}

/// 20 hourly NEs with six KPIs and 30 injected anomalies in the scored part of the test block.
pub fn desk_scale_scenario(seed: u64) -> Scenario {
    let mut spec = SynthSpec::new(20, 2000, 6, seed);
    spec.random_anomalies = Some(RandomAnomalies {
        count: 30,
        magnitude_sigma: 8.0,
        placement: [0.82, 0.995],
        max_features: 2,
    });
    let train = TrainConfig {
        stride: 4,
        batch_size: 64,
        epochs: 12,
        patience: 4,
        clip_norm: 5.0,
    };
    Scenario {
        spec,
        model: small_ran_model(6),
        train,
        calibration: CalibrationConfig::new(Preset::Ran.default_p()),
        score: ScoreOptions::default(),
        test_frac: 0.2,
        val_frac: 0.2,
    }
}

/// Population where NE profiles differ in daily phase and weekend response,
/// with large static level offsets, for the context ablation.
pub fn heterogeneous_scenario(seed: u64) -> Scenario {
    let mut spec = SynthSpec::new(10, 1000, 4, seed);
    spec.n_profiles = 4;
    spec.weekend_damping = 0.9;
    spec.static_offset_sigma = 5.0;
    let train = TrainConfig {
        stride: 4,
        batch_size: 64,
        epochs: 10,
        patience: 4,
        clip_norm: 5.0,
    };
    Scenario {
        spec,
        model: small_ran_model(4),
        train,
        calibration: CalibrationConfig::new(Preset::Ran.default_p()),
        score: ScoreOptions::default(),
        test_frac: 0.2,
        val_frac: 0.2,
    }
}

/// Six NEs with injected anomalies, for per-NE against centralised training.
pub fn centralisation_scenario(seed: u64) -> Scenario {
    let mut sc = heterogeneous_scenario(seed);
    sc.spec.n_nes = 6;
    sc.spec.random_anomalies = Some(RandomAnomalies {
        count: 12,
        magnitude_sigma: 8.0,
        placement: [0.82, 0.995],
        max_features: 2,
    });
    sc
}

/// Prepared data of a scenario without training.
pub fn prepare_scenario(sc: &Scenario) -> Result<(SynthOutput, Prepared)> {
    let synth = generate(&sc.spec)?;
    let opts = PrepareOptions {
        test_frac: sc.test_frac,
        val_frac: sc.val_frac,
        ..PrepareOptions::default()
    };
    let prepared = prepare(&synth.dataset, None, sc.model.l, sc.model.h, &opts)?;
    Ok((synth, prepared))
}

#[derive(Clone, Debug)]
pub struct ScenarioRun {
    pub synth: SynthOutput,
    pub prepared: Prepared,
    pub report: MetricReport,
    pub min_val: Losses,
    pub epochs_run: usize,
}

pub fn run_scenario(sc: &Scenario, seed: u64) -> Result<ScenarioRun> {
    let (synth, prepared) = prepare_scenario(sc)?;
    let model = prepared.model_config(sc.model.clone());
    let (state, run) = train_model(&prepared, model, &sc.train, seed)?;
    let scored = score(&state, &prepared, &sc.calibration, &sc.score)?;
    let report = evaluate_decisions(&prepared, &scored.decisions, &synth.labels, "desk-scale")?;
    Ok(ScenarioRun {
        synth,
        prepared,
        report,
        min_val: run.min_val(),
        epochs_run: run.curves.len(),
    })
}

/// Axis of a one-factor ablation; the first variant of each axis is the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    GatVersion,
    ContextBlocks,
    ContextMode,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gat_version" => Ok(Self::GatVersion),
            "context_blocks" => Ok(Self::ContextBlocks),
            "context_mode" => Ok(Self::ContextMode),
            other => Err(Error::Config(format!(
                "unknown ablation axis '{other}' (gat_version, context_blocks, context_mode)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
}

pub fn axis_variants(base: &ModelConfig, axis: AblationAxis) -> Vec<Variant> {
    let with = |name: String, f: &dyn Fn(&mut ModelConfig)| {
        let mut m = base.clone();
        f(&mut m);
        Variant { name, model: m }
    };
    match axis {
        AblationAxis::GatVersion => vec![
            with("gatv2".into(), &|m| m.use_gatv2 = true),
            with("gat".into(), &|m| m.use_gatv2 = false),
        ],
        AblationAxis::ContextBlocks => {
            let order = [
                ContextBlocks::Both,
                ContextBlocks::None,
                ContextBlocks::Block1,
                ContextBlocks::Block2,
            ];
            order
                .iter()
                .map(|&b| with(format!("ctx_{}", b.as_str()), &move |m| m.context_blocks = b))
                .collect()
        }
        AblationAxis::ContextMode => [ContextMode::Full, ContextMode::DynamicOnly, ContextMode::StaticOnly]
            .iter()
            .map(|&c| {
                with(format!("ctx_mode_{}", context_mode_name(c)), &move |m| {
                    m.context_mode = c;
                    m.context_blocks = ContextBlocks::Both;
                })
            })
            .collect(),
    }
}

fn context_mode_name(c: ContextMode) -> &'static str {
    match c {
        ContextMode::Full => "full",
        ContextMode::DynamicOnly => "dynamic_only",
        ContextMode::StaticOnly => "static_only",
    }
}

/// Per-seed minima over epochs of the validation losses, plus the test anomaly set size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub min_val: Losses,
    pub flagged: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    /// Sample standard deviation (0 for a single value).
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, sd, n }
    }

    /// Half-width of a normal-approximation 95% interval of the mean.
    pub fn ci95(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            1.96 * self.sd / (self.n as f64).sqrt()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    pub total: MeanSd,
    pub forecast: MeanSd,
    pub recon: MeanSd,
}

/// Seed-paired differences `variant - baseline`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDiff {
    pub variant: String,
    pub baseline: String,
    pub total: MeanSd,
    pub forecast: MeanSd,
    pub recon: MeanSd,
    pub per_seed_total: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantJaccard {
    pub variant: String,
    pub baseline: String,
    pub seed: u64,
    pub value: f64,
    pub both_empty: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub summary: Vec<VariantSummary>,
    pub diffs: Vec<PairedDiff>,
    pub jaccard: Vec<VariantJaccard>,
}

/// Trains every variant on every seed; the first variant is the baseline.
pub fn run_ablation(
    prep: &Prepared,
    variants: &[Variant],
    train: &TrainConfig,
    calib: &CalibrationConfig,
    score_opts: &ScoreOptions,
    seeds: &[u64],
    mut progress: impl FnMut(&str, u64),
) -> Result<AblationReport> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::new();
    let mut sets: Vec<Vec<BTreeSet<AnomalyKey>>> = Vec::new();
    for v in variants {
        let mut per_seed = Vec::new();
        for &seed in seeds {
            progress(&v.name, seed);
            let (state, run) = train_model(prep, prep.model_config(v.model.clone()), train, seed)?;
            let scored = score(&state, prep, calib, score_opts)?;
            let flagged = scored.decisions.flagged();
            rows.push(AblationRow {
                variant: v.name.clone(),
                seed,
                min_val: run.min_val(),
                flagged: flagged.len(),
            });
            per_seed.push(flagged);
        }
        sets.push(per_seed);
    }
    let ns = seeds.len();
    let of = |vi: usize| &rows[vi * ns..(vi + 1) * ns];
    let col = |r: &[AblationRow], f: fn(&Losses) -> f64| r.iter().map(|x| f(&x.min_val)).collect::<Vec<_>>();
    let summary = variants
        .iter()
        .enumerate()
        .map(|(vi, v)| VariantSummary {
            variant: v.name.clone(),
            total: MeanSd::of(&col(of(vi), |l| l.total)),
            forecast: MeanSd::of(&col(of(vi), |l| l.forecast)),
            recon: MeanSd::of(&col(of(vi), |l| l.recon)),
        })
        .collect();
    let mut diffs = Vec::new();
    let mut jac = Vec::new();
    for vi in 1..variants.len() {
        let d = |f: fn(&Losses) -> f64| -> Vec<f64> {
            of(vi).iter().zip(of(0)).map(|(a, b)| f(&a.min_val) - f(&b.min_val)).collect()
        };
        let per_seed_total = d(|l| l.total);
        diffs.push(PairedDiff {
            variant: variants[vi].name.clone(),
            baseline: variants[0].name.clone(),
            total: MeanSd::of(&per_seed_total),
            forecast: MeanSd::of(&d(|l| l.forecast)),
            recon: MeanSd::of(&d(|l| l.recon)),
            per_seed_total,
        });
        for (si, &seed) in seeds.iter().enumerate() {
            let j = jaccard(&sets[0][si], &sets[vi][si]);
            jac.push(VariantJaccard {
                variant: variants[vi].name.clone(),
                baseline: variants[0].name.clone(),
                seed,
                value: j.value,
                both_empty: j.both_empty,
            });
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        rows,
        summary,
        diffs,
        jaccard: jac,
    })
}

impl AblationReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>18} {:>18} {:>18}",
            "variant", "val_total", "val_forecast", "val_recon"
        );
        let ms = |m: &MeanSd| format!("{:.4} ± {:.4}", m.mean, m.sd);
        for v in &self.summary {
            let _ = writeln!(
                s,
                "{:<24} {:>18} {:>18} {:>18}",
                v.variant,
                ms(&v.total),
                ms(&v.forecast),
                ms(&v.recon)
            );
        }
        if !self.diffs.is_empty() {
            let _ = writeln!(s, "\npaired differences against {} (mean ± sd over seeds)", self.diffs[0].baseline);
            for d in &self.diffs {
                let jv: Vec<f64> = self.jaccard.iter().filter(|j| j.variant == d.variant).map(|j| j.value).collect();
                let _ = writeln!(
                    s,
                    "{:<24} {:>18} {:>18} {:>18}   jaccard {:.3}",
                    format!("Δ {}", d.variant),
                    ms(&d.total),
                    ms(&d.forecast),
                    ms(&d.recon),
                    MeanSd::of(&jv).mean
                );
            }
        }
        s
    }
}

/// Jaccard of one target NE's test anomaly set against its per-NE model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralCell {
    pub family_size: usize,
    pub seed: u64,
    pub ne_id: String,
    pub value: f64,
    pub both_empty: bool,
    pub min_val_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub family_size: usize,
    pub jaccard: MeanSd,
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentralisationReport {
    pub targets: Vec<String>,
    pub family_sizes: Vec<usize>,
    pub cells: Vec<CentralCell>,
    pub curve: Vec<CurvePoint>,
    /// Least-squares slope of mean Jaccard against ln(family size).
    pub trend_slope: f64,
}

/// Training sets of a family: chunks of `size` targets, or all targets plus
/// the first extra NEs when `size` exceeds the target count.
fn family_members(targets: &[String], others: &[String], size: usize) -> Vec<Vec<String>> {
    if size <= targets.len() {
        targets.chunks(size).map(|c| c.to_vec()).collect()
    } else {
        let extra = (size - targets.len()).min(others.len());
        vec![targets.iter().chain(&others[..extra]).cloned().collect()]
    }
}

/// Per-NE models against progressively centralised ones, always scored on `targets`.
///
/// `train.batch_size` applies to the largest family. Smaller families get a
/// proportionally smaller batch so every model takes the same number of
/// optimizer steps per epoch.
#[allow(clippy::too_many_arguments)]
pub fn run_centralisation(
    prep: &Prepared,
    targets: &[String],
    family_sizes: &[usize],
    model: &ModelConfig,
    train: &TrainConfig,
    calib: &CalibrationConfig,
    score_opts: &ScoreOptions,
    seeds: &[u64],
    mut progress: impl FnMut(usize, u64),
) -> Result<CentralisationReport> {
    if targets.is_empty() || family_sizes.is_empty() || family_sizes.contains(&0) {
        return Err(Error::Config("centralisation needs targets and positive family sizes".into()));
    }
    let others: Vec<String> = prep
        .ds
        .nes
        .iter()
        .map(|n| n.ne_id.clone())
        .filter(|id| !targets.contains(id))
        .collect();
    let mut sizes = family_sizes.to_vec();
    if !sizes.contains(&1) {
        sizes.insert(0, 1);
    }
    sizes.sort_unstable();
    sizes.dedup();
    let largest = *sizes.last().unwrap();
    let mut cells = Vec::new();
    for &seed in seeds {
        // anomaly keys and min val loss per target, for each family size
        let mut by_size: Vec<Vec<(BTreeSet<AnomalyKey>, f64)>> = Vec::new();
        for &size in &sizes {
            progress(size, seed);
            let family_train = TrainConfig {
                batch_size: (train.batch_size * size).div_ceil(largest).max(1),
                ..train.clone()
            };
            let mut per_target = vec![(BTreeSet::new(), f64::NAN); targets.len()];
            for members in family_members(targets, &others, size) {
                let ids: Vec<&str> = members.iter().map(String::as_str).collect();
                let sub = prep.select(&ids);
                let (state, run) = train_model(&sub, sub.model_config(model.clone()), &family_train, seed)?;
                let scored = score(&state, &sub, calib, score_opts)?;
                let flagged = scored.decisions.flagged();
                for (ti, t) in targets.iter().enumerate() {
                    if members.contains(t) {
                        per_target[ti] = (
                            flagged.iter().filter(|k| &k.0 == t).cloned().collect(),
                            run.min_val().total,
                        );
                    }
                }
            }
            by_size.push(per_target);
        }
        for (si, &size) in sizes.iter().enumerate() {
            for (ti, t) in targets.iter().enumerate() {
                let j = jaccard(&by_size[0][ti].0, &by_size[si][ti].0);
                cells.push(CentralCell {
                    family_size: size,
                    seed,
                    ne_id: t.clone(),
                    value: j.value,
                    both_empty: j.both_empty,
                    min_val_total: by_size[si][ti].1,
                });
            }
        }
    }
    let curve: Vec<CurvePoint> = sizes
        .iter()
        .map(|&size| {
            let v: Vec<f64> = cells.iter().filter(|c| c.family_size == size).map(|c| c.value).collect();
            let m = MeanSd::of(&v);
            CurvePoint {
                family_size: size,
                ci95: m.ci95(),
                jaccard: m,
            }
        })
        .collect();
    let xs: Vec<f64> = curve.iter().map(|p| (p.family_size as f64).ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|p| p.jaccard.mean).collect();
    Ok(CentralisationReport {
        targets: targets.to_vec(),
        family_sizes: sizes,
        cells,
        trend_slope: ols_slope(&xs, &ys),
        curve,
    })
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

impl CentralisationReport {
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:>12} {:>10} {:>10} {:>6}", "family", "jaccard", "ci95", "n");
        for p in &self.curve {
            let _ = writeln!(
                s,
                "{:>12} {:>10.3} {:>10.3} {:>6}",
                format!("model_{}", p.family_size),
                p.jaccard.mean,
                p.ci95,
                p.jaccard.n
            );
        }
        let _ = writeln!(s, "trend (d jaccard / d ln size): {:+.4}", self.trend_slope);
        s
    }
}

/// Synthetic residuals and labels for comparing threshold methods.
#[derive(Clone, Debug)]
pub struct ResidualBenchmark {
    pub frame: ResidualFrame,
    /// Labelled test cells as (ne index, feature index, timestamp).
    pub positives: BTreeSet<(usize, usize, i64)>,
}

/// Exponential residuals with per-feature scales; the test split carries
/// anomalous runs whose residuals are drawn well beyond the bulk.
pub fn exponential_residual_benchmark(n_nes: usize, k: usize, n_val: usize, n_test: usize, seed: u64) -> ResidualBenchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::new();
    let mut positives = BTreeSet::new();
    for n in 0..n_nes {
        for f in 0..k {
            let theta = rng.random_range(0.5..2.0);
            let d = Exp::new(1.0 / theta).expect("positive rate");
            let mut anomalous = vec![false; n_test];
            let mut t = rng.random_range(0..200);
            while t < n_test {
                let len = rng.random_range(1..=8).min(n_test - t);
                anomalous[t..t + len].iter_mut().for_each(|a| *a = true);
                t += len + rng.random_range(300..900);
            }
            for i in 0..n_val + n_test {
                let (split, is_anom) = if i < n_val {
                    (SplitTag::Val, false)
                } else {
                    (SplitTag::Test, anomalous[i - n_val])
                };
                let e = if is_anom {
                    theta * rng.random_range(6.0..14.0)
                } else {
                    d.sample(&mut rng)
                };
                let ts = i as i64 * 300;
                if is_anom {
                    positives.insert((n, f, ts));
                }
                entries.push(Residual {
                    ne: n,
                    feature: f,
                    timestamp: ts,
                    split,
                    e_for: Some(e),
                    e_rec: Some(e),
                    e,
                });
            }
        }
    }
    ResidualBenchmark {
        frame: ResidualFrame {
            ne_ids: (0..n_nes).map(|n| format!("ne{n}")).collect(),
            features: (0..k).map(|f| format!("TS{}", f + 1)).collect(),
            forecast_weight: 0.5,
            entries,
        },
        positives,
    }
}

/// Test-split streams of a residual frame under the given flags.
pub fn frame_streams(
    frame: &ResidualFrame,
    positives: &BTreeSet<(usize, usize, i64)>,
    flagged: &BTreeSet<AnomalyKey>,
) -> EvalStreams {
    let k = frame.features.len();
    let mut segments = Vec::new();
    for (n, ne_id) in frame.ne_ids.iter().enumerate() {
        let ts: BTreeSet<i64> = frame
            .entries
            .iter()
            .filter(|r| r.ne == n && r.split == SplitTag::Test)
            .map(|r| r.timestamp)
            .collect();
        let timestamps: Vec<i64> = ts.into_iter().collect();
        let gt = (0..k)
            .map(|f| timestamps.iter().map(|&t| positives.contains(&(n, f, t))).collect())
            .collect();
        let pred = (0..k)
            .map(|f| {
                timestamps
                    .iter()
                    .map(|&t| flagged.contains(&(ne_id.clone(), frame.features[f].clone(), t)))
                    .collect()
            })
            .collect();
        segments.push(Segment {
            ne_id: ne_id.clone(),
            timestamps,
            gt,
            pred,
        });
    }
    EvalStreams {
        features: frame.features.clone(),
        segments,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdComparison {
    pub p: f64,
    pub pot: MetricReport,
    pub exponential: MetricReport,
    pub pot_fallbacks: usize,
}

/// Calibrates both methods on the validation split and evaluates the test flags.
pub fn compare_thresholds(frame: &ResidualFrame, positives: &BTreeSet<(usize, usize, i64)>, p: f64) -> Result<ThresholdComparison> {
    let mut cfg = CalibrationConfig::new(p);
    let exp_t = fit_exponential(frame, &cfg, SplitTag::Val)?;
    cfg.method = Method::Pot;
    let pot_t = fit_pot(frame, &cfg, SplitTag::Val)?;
    let eval = |t, label: &str| -> Result<MetricReport> {
        let d = flag_anomalies(frame, t, SplitTag::Test)?;
        evaluate(&frame_streams(frame, positives, &d.flagged()), label)
    };
    Ok(ThresholdComparison {
        p,
        exponential: eval(&exp_t, "Exp-threshold")?,
        pot: eval(&pot_t, "POT-threshold")?,
        pot_fallbacks: pot_t.entries.iter().filter(|t| t.extras.fallback.is_some()).count(),
    })
}

impl ThresholdComparison {
    /// Per-feature pointwise P/R/F1, POT block then Exp block.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:^23} | {:^23}", "", "POT-threshold", "Exp-threshold");
        let _ = writeln!(
            s,
            "{:<8} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            "Feature", "P", "R", "F1", "P", "R", "F1"
        );
        let line = |s: &mut String, name: &str, a: Prf, b: Prf| {
            let _ = writeln!(
                s,
                "{:<8} {:>7.3} {:>7.3} {:>7.3} | {:>7.3} {:>7.3} {:>7.3}",
                name, a.p, a.r, a.f1, b.p, b.r, b.f1
            );
        };
        for (a, b) in self.pot.features.iter().zip(&self.exponential.features) {
            line(&mut s, &a.feature, a.pointwise, b.pointwise);
        }
        line(&mut s, "Macro", self.pot.pointwise.macro_, self.exponential.pointwise.macro_);
        line(&mut s, "Micro", self.pot.pointwise.micro, self.exponential.pointwise.micro);
        line(&mut s, "Union", self.pot.pointwise.union, self.exponential.pointwise.union);
        s
    }
}

/// Sparse labelled streams shaped like the public TELCO test period: 12 KPIs,
/// 25,143 timestamps, 143 events and about 3,001 positive labels, with
/// between 1 and 35 events per KPI.
pub fn telco_like_streams(seed: u64) -> EvalStreams {
    const T: usize = 25_143;
    const K: usize = 12;
    const EVENTS: usize = 143;
    const LABELS: usize = 3_001;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // split the event budget into 12 counts in [1, 35]
    let mut counts = vec![1usize; K];
    let mut left = EVENTS - K;
    while left > 0 {
        let f = rng.random_range(0..K);
        if counts[f] < 35 {
            counts[f] += 1;
            left -= 1;
        }
    }
    let mean_len = LABELS as f64 / EVENTS as f64;
    let mut gt = Vec::with_capacity(K);
    for &c in &counts {
        let mut s = vec![false; T];
        let mut placed = 0;
        while placed < c {
            let len = rng.random_range(1..=(2.0 * mean_len) as usize);
            let start = rng.random_range(1..T - len - 1);
            // keep one negative timestamp on both sides so events stay distinct
            if s[start - 1..=start + len].iter().any(|&v| v) {
                continue;
            }
            s[start..start + len].iter_mut().for_each(|v| *v = true);
            placed += 1;
        }
        gt.push(s);
    }
    EvalStreams {
        features: (1..=K).map(|f| format!("TS{f}")).collect(),
        segments: vec![Segment {
            ne_id: "telco".into(),
            timestamps: (0..T as i64).collect(),
            pred: vec![vec![false; T]; K],
            gt,
        }],
    }
}

/// The detector that flags every timestamp.
pub fn all_positive(streams: &EvalStreams) -> EvalStreams {
    streams.with_predictions(|_, s| vec![true; s.timestamps.len()])
}

/// Prevalence-matched random baseline metrics averaged over `seeds`.
pub fn random_baseline_reports(streams: &EvalStreams, seeds: &[u64]) -> Result<Vec<MetricReport>> {
    seeds
        .iter()
        .map(|&s| evaluate(&random_baseline(streams, s), &format!("Random (seed {s})")))
        .collect()
}

/// The all-positive detector with `gaps` unscored timestamps per feature,
/// placed uniformly at random; each gap splits a predicted event.
pub fn fragmented_all_positive(streams: &EvalStreams, gaps: usize, seed: u64) -> EvalStreams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    streams.with_predictions(|_, s| {
        let mut p = vec![true; s.timestamps.len()];
        for _ in 0..gaps.min(p.len()) {
            let i = rng.random_range(0..p.len());
            p[i] = false;
        }
        p
    })
}
