//! Optimisation of the backbone: RMSE objective, Adam, clipping, early stopping.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, clip_grad_norm, AdamConfig, AdamState, Graph, Tensor, Var};
use crate::backbone::{forward, ModelConfig, ModelState, Mode, Outputs};
use crate::data::{assemble_batches, SplitTag, TelemetryDataset, WindowBatch, WindowIndex};
use crate::error::{Error, Result};
use crate::presets::TrainConfig;

/// Loss triple `(total, forecast, recon)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub total: f64,
    pub forecast: f64,
    pub recon: f64,
}

impl Losses {
    pub fn combine(forecast: f64, recon: f64, gamma: f64) -> Self {
        Self {
            total: forecast + gamma * recon,
            forecast,
            recon,
        }
    }
}

fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Dimension {
            op: "rmse",
            shapes: vec![vec![pred.len()], vec![target.len()]],
        });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

/// RMSE of the forecast against the H-step target and of the reconstruction
/// against the input window, combined as `forecast + gamma * recon`.
pub fn compute_loss(forecast: &Tensor<f64>, recon: &Tensor<f64>, batch: &WindowBatch, gamma: f64) -> Result<Losses> {
    Ok(Losses::combine(
        rmse(forecast.data(), &batch.targets)?,
        rmse(recon.data(), &batch.inputs)?,
        gamma,
    ))
}

/// Graph handles of the three loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub forecast: Var,
    pub recon: Var,
}

fn rmse_graph(g: &mut Graph<f64>, pred: Var, target: &[f64]) -> Result<Var> {
    let t = g.constant(g.shape(pred).to_vec(), target.to_vec())?;
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    let m = g.mean(sq, None)?;
    Ok(g.sqrt(m))
}

pub fn loss_graph(g: &mut Graph<f64>, out: &Outputs, batch: &WindowBatch, gamma: f64) -> Result<LossVars> {
    let forecast = rmse_graph(g, out.forecast, &batch.targets)?;
    let recon = rmse_graph(g, out.recon, &batch.inputs)?;
    let weighted = g.scale(recon, gamma);
    let total = g.add(forecast, weighted)?;
    Ok(LossVars {
        total,
        forecast,
        recon,
    })
}

impl ModelState {
    /// Inference forward pass; returns `(forecast [B,H,k], recon [B,L,k])`.
    pub fn predict(&self, batch: &WindowBatch) -> Result<(Tensor<f64>, Tensor<f64>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g);
        let out = forward(&mut g, &p, batch, Mode::Eval)?;
        Ok((g.tensor(out.forecast), g.tensor(out.recon)))
    }
}

#[derive(Default)]
struct SqAccum {
    f_ss: f64,
    f_n: usize,
    r_ss: f64,
    r_n: usize,
}

impl SqAccum {
    fn add(&mut self, forecast: &[f64], recon: &[f64], batch: &WindowBatch) {
        self.f_ss += forecast.iter().zip(&batch.targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        self.f_n += forecast.len();
        self.r_ss += recon.iter().zip(&batch.inputs).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        self.r_n += recon.len();
    }

    fn losses(&self, gamma: f64) -> Losses {
        let f = |ss: f64, n: usize| if n == 0 { 0.0 } else { (ss / n as f64).sqrt() };
        Losses::combine(f(self.f_ss, self.f_n), f(self.r_ss, self.r_n), gamma)
    }
}

/// RMSE losses pooled over every window of `split` (no dropout).
pub fn evaluate_loss(
    state: &ModelState,
    ds: &TelemetryDataset,
    index: &WindowIndex,
    split: SplitTag,
    batch_size: usize,
) -> Result<Losses> {
    let mut acc = SqAccum::default();
    for batch in assemble_batches(ds, index, split, batch_size, None)? {
        let batch = batch?;
        let (f, r) = state.predict(&batch)?;
        acc.add(f.data(), r.data(), &batch);
    }
    Ok(acc.losses(state.config.gamma))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_forecast: f64,
    pub train_recon: f64,
    pub val_forecast: f64,
    pub val_recon: f64,
    pub val_total: f64,
    /// Best validation total seen so far, including this epoch.
    pub best_val_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub curves: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainRun {
    pub fn best_val_total(&self) -> f64 {
        self.curves.iter().map(|c| c.val_total).fold(f64::INFINITY, f64::min)
    }

    /// Minimum over epochs of each validation curve.
    pub fn min_val(&self) -> Losses {
        let m = |f: fn(&EpochRecord) -> f64| self.curves.iter().map(f).fold(f64::INFINITY, f64::min);
        Losses {
            total: m(|c| c.val_total),
            forecast: m(|c| c.val_forecast),
            recon: m(|c| c.val_recon),
        }
    }

    pub fn write_curves_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "train_forecast",
            "train_recon",
            "val_forecast",
            "val_recon",
            "val_total",
        ])?;
        for c in &self.curves {
            out.write_record([
                c.epoch.to_string(),
                c.train_forecast.to_string(),
                c.train_recon.to_string(),
                c.val_forecast.to_string(),
                c.val_recon.to_string(),
                c.val_total.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_curves(&self, path: &Path) -> Result<()> {
        self.write_curves_csv(std::fs::File::create(path)?)
    }
}

/// Trains from a fresh initialisation and returns the best-validation weights.
///
/// `seed` drives initialisation, batch order and dropout. Training stops after
/// `max(patience, 1)` consecutive epochs without a strict improvement of the
/// validation total loss, or after `epochs`.
pub fn train(
    ds: &TelemetryDataset,
    index: &WindowIndex,
    model: ModelConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ModelState, TrainRun)> {
    cfg.validate()?;
    if index.count(SplitTag::Train) == 0 || index.count(SplitTag::Val) == 0 {
        return Err(Error::Data(format!(
            "training needs train and validation windows (have {} and {})",
            index.count(SplitTag::Train),
            index.count(SplitTag::Val)
        )));
    }
    let mut state = ModelState::init(model.clone(), seed)?;
    let adam = AdamConfig {
        lr: model.lr,
        ..AdamConfig::default()
    };
    let mut opt = AdamState::new(&state.params().iter().collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut run = TrainRun {
        model: model.clone(),
        train: cfg.clone(),
        seed,
        curves: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best = state.clone();
    let mut best_val = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=cfg.epochs {
        let shuffle_seed: u64 = rng.random();
        let mut acc = SqAccum::default();
        for batch in assemble_batches(ds, index, SplitTag::Train, cfg.batch_size, Some(shuffle_seed))? {
            let batch = batch?;
            let mut g = Graph::new();
            let bound = state.bind(&mut g);
            let out = forward(&mut g, &bound, &batch, Mode::Train(&mut rng))?;
            let loss = loss_graph(&mut g, &out, &batch, model.gamma)?;
            g.backward(loss.total)?;
            let vars = bound.vars;
            acc.add(g.value(out.forecast), g.value(out.recon), &batch);
            state.collect_grads(&g, &vars)?;
            let mut refs: Vec<&mut Tensor<f64>> = state.params_mut().iter_mut().collect();
            clip_grad_norm(&mut refs, cfg.clip_norm);
            adam_step(&mut refs, &mut opt, &adam)?;
        }
        let tr = acc.losses(model.gamma);
        let val = evaluate_loss(&state, ds, index, SplitTag::Val, cfg.batch_size)?;
        if !val.total.is_finite() {
            return Err(Error::Data(format!("validation loss diverged at epoch {epoch}")));
        }
        if val.total < best_val {
            best_val = val.total;
            best = state.clone();
            run.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        run.curves.push(EpochRecord {
            epoch,
            train_forecast: tr.forecast,
            train_recon: tr.recon,
            val_forecast: val.forecast,
            val_recon: val.recon,
            val_total: val.total,
            best_val_total: best_val,
        });
        if stale >= cfg.patience.max(1) && epoch < cfg.epochs {
            run.stopped_early = true;
            break;
        }
    }
    for p in best.params_mut() {
        p.clear_grad();
    }
    Ok((best, run))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::backbone::fixtures::{random_batch, tiny_config};
    use crate::backbone::Geometry;
    use crate::data::{
        apply_scalers, enumerate_windows, fit_scalers, split_timeline, EncoderFit, NeSeries, WindowSpec,
    };
    use rand_distr::{Distribution, Normal};

    /// One NE, k sinusoids of period 24 with Gaussian noise, scaled and encoded.
    pub fn sinusoid_dataset(t: usize, k: usize, noise: f64, seed: u64) -> TelemetryDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, noise).unwrap();
        let mut x = Vec::with_capacity(t * k);
        for i in 0..t {
            for f in 0..k {
                let phase = f as f64 * 1.3;
                let clean = 0.5 + 0.4 * (std::f64::consts::TAU * i as f64 / 24.0 + phase).sin();
                x.push(clean + n.sample(&mut rng));
            }
        }
        let raw = TelemetryDataset {
            cadence_minutes: 60,
            feature_names: (0..k).map(|f| format!("kpi{f}")).collect(),
            dyn_cat_names: vec![],
            static_cat_names: vec![],
            static_real_names: vec![],
            nes: vec![NeSeries {
                ne_id: "ne0".into(),
                start: 0,
                x,
                mask: vec![0; t * k],
                dyn_cat: vec![],
                static_cat: vec![],
                static_real: vec![],
                z: vec![],
                s: vec![],
            }],
            encoded: false,
        };
        let splits = split_timeline(&raw, 0.2, 0.2);
        let (sc, enc) = fit_scalers(&raw, &splits, EncoderFit::AllRows).unwrap();
        apply_scalers(&raw, &sc, &enc).unwrap()
    }

    fn small_model(k: usize) -> ModelConfig {
        let mut c = tiny_config();
        c.k = k;
        c.l = 12;
        c.h = 2;
        c.gru_hidden = 16;
        c.forecast_hidden = 16;
        c.recon_hidden = 12;
        c.lr = 5e-3;
        c.geometry = Geometry::masks_only(k);
        c
    }

    #[test]
    fn loss_examples() {
        let c = tiny_config();
        let b = random_batch(&c, 2, 1);
        let f = Tensor::new(vec![2, c.h, c.k], b.targets.clone()).unwrap();
        let r = Tensor::new(vec![2, c.l, c.k], b.inputs.clone()).unwrap();
        assert_eq!(compute_loss(&f, &r, &b, 1.0).unwrap(), Losses::default());
        let f1 = Tensor::new(vec![2, c.h, c.k], b.targets.iter().map(|v| v + 1.0).collect()).unwrap();
        let r1 = Tensor::new(vec![2, c.l, c.k], b.inputs.iter().map(|v| v - 1.0).collect()).unwrap();
        let l = compute_loss(&f1, &r1, &b, 1.0).unwrap();
        assert!((l.total - 2.0).abs() < 1e-12);
        let l0 = compute_loss(&f1, &r1, &b, 0.0).unwrap();
        assert_eq!(l0.total, l0.forecast);
    }

    #[test]
    fn graph_loss_matches_numeric_loss() {
        let c = tiny_config();
        let s = ModelState::init(c.clone(), 1).unwrap();
        let b = random_batch(&c, 3, 2);
        let mut g = Graph::new();
        let p = s.bind(&mut g);
        let out = forward(&mut g, &p, &b, Mode::Eval).unwrap();
        let lv = loss_graph(&mut g, &out, &b, 0.7).unwrap();
        let (f, r) = s.predict(&b).unwrap();
        let l = compute_loss(&f, &r, &b, 0.7).unwrap();
        assert_eq!(g.value(lv.total)[0], l.total);
        assert_eq!(g.value(lv.forecast)[0], l.forecast);
    }

    fn setup(t: usize, k: usize, seed: u64) -> (TelemetryDataset, WindowIndex) {
        let ds = sinusoid_dataset(t, k, 0.02, seed);
        let splits = split_timeline(&ds, 0.2, 0.2);
        let idx = enumerate_windows(&ds, &splits, WindowSpec::new(12, 2, 1).unwrap()).unwrap();
        (ds, idx)
    }

    #[test]
    fn same_seed_same_curves_and_decomposition() {
        let (ds, idx) = setup(200, 2, 0);
        let mut m = small_model(2);
        m.dropout = 0.1;
        let cfg = TrainConfig {
            stride: 1,
            batch_size: 16,
            epochs: 3,
            patience: 10,
            clip_norm: 5.0,
        };
        let (s1, r1) = train(&ds, &idx, m.clone(), &cfg, 42).unwrap();
        let (s2, r2) = train(&ds, &idx, m.clone(), &cfg, 42).unwrap();
        assert_eq!(r1.curves, r2.curves);
        assert_eq!(s1, s2);
        let (_, r3) = train(&ds, &idx, m.clone(), &cfg, 43).unwrap();
        assert_ne!(r1.curves, r3.curves);
        for c in &r1.curves {
            assert_eq!(c.val_total - (c.val_forecast + m.gamma * c.val_recon), 0.0);
        }
        for w in r1.curves.windows(2) {
            assert!(w[1].best_val_total <= w[0].best_val_total);
        }
        let best = r1.curves[r1.best_epoch - 1].val_total;
        assert_eq!(best, r1.best_val_total());
        // returned weights are the best epoch's
        let v = evaluate_loss(&s1, &ds, &idx, SplitTag::Val, 16).unwrap();
        assert_eq!(v.total, best);
        let mut buf = Vec::new();
        r1.write_curves_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_forecast,train_recon,val_forecast,val_recon,val_total"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let (ds, idx) = setup(200, 2, 1);
        let mut m = small_model(2);
        // a huge step size makes the validation loss bounce
        m.lr = 0.5;
        let cfg = TrainConfig {
            stride: 1,
            batch_size: 32,
            epochs: 40,
            patience: 0,
            clip_norm: 5.0,
        };
        let (_, run) = train(&ds, &idx, m, &cfg, 3).unwrap();
        let n = run.curves.len();
        if run.stopped_early {
            // every epoch before the last improved; the last did not
            for i in 1..n - 1 {
                assert!(run.curves[i].val_total < run.curves[i - 1].best_val_total);
            }
            assert!(run.curves[n - 1].val_total >= run.curves[n - 2].best_val_total);
        } else {
            assert_eq!(n, 40);
        }
    }

    #[test]
    fn empty_validation_is_data_error() {
        let (ds, mut idx) = setup(200, 2, 1);
        idx.entries.retain(|e| e.split != SplitTag::Val);
        let cfg = Preset::Ran.train_config();
        assert!(matches!(
            train(&ds, &idx, small_model(2), &cfg, 0),
            Err(Error::Data(_))
        ));
    }

    use crate::presets::Preset;

    #[test]
    fn tiny_model_overfits_four_windows() {
        let c = small_model(3);
        let c = ModelConfig { l: 8, lr: 1e-2, ..c };
        let b = random_batch(&c, 4, 7);
        let mut s = ModelState::init(c.clone(), 0).unwrap();
        let mut opt = AdamState::new(&s.params().iter().collect::<Vec<_>>());
        let adam = AdamConfig {
            lr: c.lr,
            ..AdamConfig::default()
        };
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let mut g = Graph::new();
            let p = s.bind(&mut g);
            let out = forward(&mut g, &p, &b, Mode::Eval).unwrap();
            let lv = loss_graph(&mut g, &out, &b, c.gamma).unwrap();
            last = g.value(lv.total)[0];
            g.backward(lv.total).unwrap();
            let vars = p.vars;
            s.collect_grads(&g, &vars).unwrap();
            let mut refs: Vec<&mut Tensor<f64>> = s.params_mut().iter_mut().collect();
            clip_grad_norm(&mut refs, 5.0);
            adam_step(&mut refs, &mut opt, &adam).unwrap();
        }
        assert!(last < 0.05, "final loss {last}");
    }

    #[test]
    fn sinusoid_forecast_rmse_below_threshold() {
        let (ds, idx) = setup(600, 2, 5);
        let cfg = TrainConfig {
            stride: 1,
            batch_size: 32,
            epochs: 30,
            patience: 10,
            clip_norm: 5.0,
        };
        let (_, run) = train(&ds, &idx, small_model(2), &cfg, 1).unwrap();
        let best = run.min_val().forecast;
        assert!(best < 0.1, "best val forecast RMSE {best}");
    }
}
