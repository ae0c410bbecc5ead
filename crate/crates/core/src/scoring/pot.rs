use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::data::SplitTag;
use crate::error::Result;
use crate::stats::{quantile_sorted, sorted};

use super::{fit_exponential, CalibrationConfig, Method, ResidualFrame, ThresholdTable};

/// Generalised Pareto tail fitted above `t0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotFit {
    pub t0: f64,
    pub xi: f64,
    pub sigma: f64,
    pub n_exceed: usize,
}

/// Probability-weighted-moment estimates `(xi, sigma)` of a GPD from its
/// exceedances over the initial threshold. `None` when the moments do not
/// give a positive finite scale.
pub fn fit_gpd_pwm<T: Scalar>(exceedances: &[T]) -> Option<(T, T)> {
    let n = exceedances.len();
    if n < 2 {
        return None;
    }
    let y = sorted(exceedances);
    let nf = T::lit(n as f64);
    let a0 = y.iter().copied().sum::<T>() / nf;
    let a1 = y
        .iter()
        .enumerate()
        .map(|(i, &v)| T::lit((n - 1 - i) as f64) / T::lit((n - 1) as f64) * v)
        .sum::<T>()
        / nf;
    let denom = a0 - T::lit(2.0) * a1;
    let k = a0 / denom - T::lit(2.0);
    let sigma = T::lit(2.0) * a0 * a1 / denom;
    if !(sigma > T::zero()) || !sigma.is_finite() || !k.is_finite() {
        return None;
    }
    Some((-k, sigma))
}

/// Tail quantile of level `p` given `n_t` of `n` residuals exceed `t0`.
pub fn pot_tau<T: Scalar>(t0: T, xi: T, sigma: T, n: usize, n_t: usize, p: T) -> T {
    let r = T::lit(n as f64) * (T::one() - p) / T::lit(n_t as f64);
    if xi.abs() < T::lit(1e-9) {
        t0 - sigma * r.ln()
    } else {
        t0 + sigma / xi * (r.powf(-xi) - T::one())
    }
}

/// Peaks-over-threshold calibration. Units that cannot be fitted keep the
/// exponential threshold, with the reason recorded.
pub fn fit_pot(frame: &ResidualFrame, cfg: &CalibrationConfig, split: SplitTag) -> Result<ThresholdTable> {
    let mut table = fit_exponential(frame, cfg, split)?;
    let values = frame.unit_values(split);
    for th in &mut table.entries {
        let n_idx = frame.ne_ids.iter().position(|v| *v == th.ne_id);
        let f_idx = frame.features.iter().position(|v| *v == th.feature);
        let vals = match (n_idx, f_idx) {
            (Some(n), Some(f)) => values.get(&(n, f)).map(Vec::as_slice).unwrap_or(&[]),
            _ => &[],
        };
        let s = sorted(vals);
        let Some(t0) = quantile_sorted(&s, cfg.pot_init_quantile) else {
            th.extras.fallback = Some("no residuals".into());
            continue;
        };
        let exceed: Vec<f64> = s.iter().filter(|&&v| v > t0).map(|&v| v - t0).collect();
        if exceed.len() < cfg.min_exceedances {
            th.extras.fallback = Some(format!(
                "{} exceedances, need {}",
                exceed.len(),
                cfg.min_exceedances
            ));
            continue;
        }
        let Some((xi, sigma)) = fit_gpd_pwm(&exceed) else {
            th.extras.fallback = Some("GPD fit gave a non-positive scale".into());
            continue;
        };
        let tau = pot_tau(t0, xi, sigma, s.len(), exceed.len(), cfg.p);
        if !tau.is_finite() {
            th.extras.fallback = Some("non-finite POT threshold".into());
            continue;
        }
        th.method = Method::Pot;
        th.tau = tau;
        th.extras.pot = Some(PotFit {
            t0,
            xi,
            sigma,
            n_exceed: exceed.len(),
        });
    }
    Ok(table)
}
