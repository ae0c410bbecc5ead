use crate::autodiff::Scalar;
use crate::data::SplitTag;
use crate::error::Result;
use crate::stats::mean;

use super::{CalibrationConfig, Method, ResidualFrame, Threshold, ThresholdExtras, ThresholdTable};

/// `-theta * ln(1 - p)`: the `p` quantile of `Exp(theta)`.
pub fn exponential_tau<T: Scalar>(theta: T, p: T) -> T {
    -theta * (-p).ln_1p()
}

/// One exponential threshold per (NE, feature) from the residuals of `split`.
///
/// Units with fewer than `cfg.min_samples` residuals share the scale fitted to
/// all residuals of the split pooled together.
pub fn fit_exponential(frame: &ResidualFrame, cfg: &CalibrationConfig, split: SplitTag) -> Result<ThresholdTable> {
    cfg.validate()?;
    let values = frame.unit_values(split);
    let all: Vec<f64> = values.values().flatten().copied().collect();
    let pooled_theta = mean(&all).unwrap_or(0.0);
    let mut table = ThresholdTable {
        p: cfg.p,
        ..ThresholdTable::default()
    };
    for (n, f) in frame.units() {
        let (ne_id, feature) = (&frame.ne_ids[n], &frame.features[f]);
        let vals = values.get(&(n, f)).map(Vec::as_slice).unwrap_or(&[]);
        let mut extras = ThresholdExtras::default();
        let theta = if vals.len() < cfg.min_samples {
            extras.pooled = true;
            table.warnings.push(format!(
                "({ne_id}, {feature}): {} residuals, using pooled scale",
                vals.len()
            ));
            pooled_theta
        } else {
            mean(vals).unwrap_or(0.0)
        };
        if theta <= 0.0 {
            extras.degenerate = true;
            table
                .warnings
                .push(format!("({ne_id}, {feature}): all residuals zero, every positive score flags"));
        }
        table.entries.push(Threshold {
            ne_id: ne_id.clone(),
            feature: feature.clone(),
            method: Method::Exponential,
            theta,
            tau: exponential_tau(theta, cfg.p),
            n: vals.len(),
            extras,
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::tests::frame_from;
    use crate::scoring::{flag_anomalies, ResidualFrame};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Exp};

    fn cfg(p: f64) -> CalibrationConfig {
        let mut c = CalibrationConfig::new(p);
        c.min_samples = 1;
        c
    }

    #[test]
    fn sample_mean_scale() {
        let f = frame_from(&[(vec![1.0, 2.0, 3.0], vec![])]);
        let t = fit_exponential(&f, &cfg(0.99), SplitTag::Val).unwrap();
        assert_eq!(t.entries[0].theta, 2.0);
        assert!((t.entries[0].tau - 9.210340371976182).abs() < 1e-12);
        // independent: the 0.99 quantile of Exp(mean 2) solves 1 - exp(-x/2) = 0.99
        assert!((t.entries[0].tau - 2.0 * 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn small_p_gives_small_tau() {
        assert!(exponential_tau(2.0, 1e-12) < 1e-11);
        assert_eq!(exponential_tau(2.0f32, 0.0), 0.0);
    }

    #[test]
    fn pooled_fallback_and_degenerate_units() {
        let f = frame_from(&[(vec![1.0; 12], vec![]), (vec![4.0; 3], vec![]), (vec![0.0; 10], vec![])]);
        let mut c = cfg(0.9);
        c.min_samples = 10;
        let t = fit_exponential(&f, &c, SplitTag::Val).unwrap();
        let pooled = (12.0 + 12.0) / 25.0;
        assert!(!t.entries[0].extras.pooled);
        assert!(t.entries[1].extras.pooled);
        assert!((t.entries[1].theta - pooled).abs() < 1e-15);
        assert_eq!(t.entries[2].theta, 0.0);
        assert_eq!(t.entries[2].tau, 0.0);
        assert!(t.entries[2].extras.degenerate);
        assert_eq!(t.warnings.len(), 2);
    }

    #[test]
    fn degenerate_threshold_flags_every_positive_score() {
        let f = frame_from(&[(vec![0.0; 10], vec![0.0, 1e-9, 3.0])]);
        let t = fit_exponential(&f, &cfg(0.99), SplitTag::Val).unwrap();
        let d = flag_anomalies(&f, &t, SplitTag::Test).unwrap();
        assert_eq!(d.entries.iter().map(|d| d.flag).collect::<Vec<_>>(), vec![false, true, true]);
    }

    #[test]
    fn flag_rate_matches_tail_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let theta = 0.7;
        let dist = Exp::new(1.0 / theta).unwrap();
        let n = 100_000;
        let val: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let test: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let f: ResidualFrame = frame_from(&[(val, test)]);
        for p in [0.9, 0.99, 0.999] {
            let t = fit_exponential(&f, &cfg(p), SplitTag::Val).unwrap();
            let rate = flag_anomalies(&f, &t, SplitTag::Test).unwrap().flag_rate();
            let q = 1.0 - p;
            // binomial sd of the rate plus the first-order effect of estimating theta
            let sd = (q * (1.0 - q) / n as f64).sqrt() + q * (1.0 / q).ln() / (n as f64).sqrt();
            assert!((rate - q).abs() < 3.0 * sd, "p={p} rate={rate}");
        }
    }

    proptest! {
        #[test]
        fn closed_form_tail(theta in 1e-3f64..1e3, p in 1e-6f64..0.999_999) {
            let tau = exponential_tau(theta, p);
            prop_assert!(((-tau / theta).exp() - (1.0 - p)).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_p_and_theta(theta in 1e-3f64..1e3, p in 1e-3f64..0.99, dp in 1e-4f64..0.009, dt in 1e-3f64..10.0) {
            prop_assert!(exponential_tau(theta, p + dp) > exponential_tau(theta, p));
            prop_assert!(exponential_tau(theta + dt, p) > exponential_tau(theta, p));
        }
    }
}
