use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::data::SplitTag;

use super::ResidualFrame;

const SHIFT: f64 = 1e-12;
const SMALL_SAMPLE: usize = 30;

/// Second derivative of `ln Gamma`.
pub fn trigamma(x: f64) -> f64 {
    if !(x > 0.0) {
        return f64::NAN;
    }
    let mut acc = 0.0;
    let mut z = x;
    while z < 10.0 {
        acc += 1.0 / (z * z);
        z += 1.0;
    }
    let r = 1.0 / z;
    let r2 = r * r;
    acc + r + r2 / 2.0 + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 / 30.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaUnit {
    pub ne_id: String,
    pub feature: String,
    pub n: usize,
    /// Exponential scale (sample mean).
    pub theta: f64,
    pub shape: f64,
    pub scale: f64,
    pub aic_exp: f64,
    pub aic_gamma: f64,
    pub exp_wins: bool,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub small_sample: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GammaReport {
    pub units: Vec<GammaUnit>,
    /// Share of units where the exponential has the lower AIC.
    pub exp_fraction: f64,
    pub warnings: Vec<String>,
}

fn gamma_loglik(x: &[f64], shape: f64, scale: f64) -> f64 {
    let n = x.len() as f64;
    let sum_ln: f64 = x.iter().map(|v| v.ln()).sum();
    let sum: f64 = x.iter().sum();
    (shape - 1.0) * sum_ln - sum / scale - n * shape * scale.ln() - n * ln_gamma(shape)
}

/// Moment-matched shape refined by one Newton step on the profile likelihood.
fn fit_shape(x: &[f64], mean: f64, var: f64) -> f64 {
    let k0 = mean * mean / var;
    let s = mean.ln() - x.iter().map(|v| v.ln()).sum::<f64>() / x.len() as f64;
    let f = k0.ln() - digamma(k0) - s;
    let df = 1.0 / k0 - trigamma(k0);
    let k1 = k0 - f / df;
    if k1.is_finite() && k1 > 0.0 {
        k1
    } else {
        k0
    }
}

fn unit_report(ne_id: &str, feature: &str, raw: &[f64]) -> GammaUnit {
    let x: Vec<f64> = raw.iter().map(|v| v + SHIFT).collect();
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf.max(1.0);
    let var = if n > 1 {
        x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf
    } else {
        0.0
    };
    let aic_exp = 2.0 + 2.0 * nf * (mean.ln() + 1.0);
    let (shape, scale, aic_gamma) = if var > 0.0 && mean > 0.0 {
        let k = fit_shape(&x, mean, var);
        let scale = mean / k;
        (k, scale, 4.0 - 2.0 * gamma_loglik(&x, k, scale))
    } else {
        (f64::NAN, f64::NAN, f64::INFINITY)
    };
    GammaUnit {
        ne_id: ne_id.to_string(),
        feature: feature.to_string(),
        n,
        theta: mean,
        shape,
        scale,
        aic_exp,
        aic_gamma,
        exp_wins: !(aic_gamma < aic_exp),
        small_sample: n < SMALL_SAMPLE,
    }
}

/// Per-unit AIC of an exponential against a Gamma fit of the `split` residuals.
pub fn compare_exp_gamma(frame: &ResidualFrame, split: SplitTag) -> GammaReport {
    let values = frame.unit_values(split);
    let mut report = GammaReport::default();
    for ((n, f), vals) in &values {
        let u = unit_report(&frame.ne_ids[*n], &frame.features[*f], vals);
        if u.small_sample {
            report
                .warnings
                .push(format!("({}, {}): only {} residuals", u.ne_id, u.feature, u.n));
        }
        report.units.push(u);
    }
    if !report.units.is_empty() {
        report.exp_fraction =
            report.units.iter().filter(|u| u.exp_wins).count() as f64 / report.units.len() as f64;
    }
    report
}
