use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair of buffers per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[&Tensor<T>]) -> Self {
        Self {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Gradients are zeroed afterwards.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.grad().is_none() {
            return Err(Error::Contract(format!("parameter {i} has no gradient")));
        }
        if state.m[i].len() != p.numel() || state.v[i].len() != p.numel() {
            return Err(Error::Dimension {
                op: "adam_step",
                shapes: vec![p.shape().to_vec(), vec![state.m[i].len()]],
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = b1 * m[j] + (T::one() - b1) * g;
            v[j] = b2 * v[j] + (T::one() - b2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            *w = *w - lr * mhat / (vhat.sqrt() + eps);
        }
        p.zero_grad();
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Tensor<T>], max_norm: T) -> T {
    let sq: T = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter().map(|&x| x * x))
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad() {
                let scaled: Vec<T> = g.iter().map(|&x| x * s).collect();
                p.set_grad(scaled).expect("same length");
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(v: f64, g: f64) -> Tensor<f64> {
        let mut t = Tensor::new(vec![1], vec![v]).unwrap().requiring_grad();
        t.set_grad(vec![g]).unwrap();
        t
    }

    #[test]
    fn zero_grad_leaves_param_and_decays_moments() {
        let mut p = param(3.0, 0.0);
        let mut st = AdamState::new(&[&p]);
        st.m[0][0] = 1.0;
        st.v[0][0] = 1.0;
        adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap();
        assert!((st.m[0][0] - 0.9).abs() < 1e-15);
        assert!((st.v[0][0] - 0.999).abs() < 1e-15);

        let mut q = param(3.0, 0.0);
        let mut st = AdamState::new(&[&q]);
        adam_step(&mut [&mut q], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(q.data()[0], 3.0);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = param(0.0, 1.0);
        let mut st = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap();
        // -lr * 1 / (1 + 1e-8)
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert_eq!(p.grad().unwrap(), &[0.0]);
    }

    #[test]
    fn constant_grad_moves_against_sign() {
        for g in [2.5, -0.7] {
            let mut p = param(1.0, g);
            let mut st = AdamState::new(&[&p]);
            for _ in 0..50 {
                p.set_grad(vec![g]).unwrap();
                adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap();
            }
            assert_eq!((p.data()[0] - 1.0).signum(), -g.signum());
        }
    }

    #[test]
    fn missing_grad_is_contract_error() {
        let mut p = Tensor::<f64>::zeros(vec![2]).requiring_grad();
        let mut st = AdamState::new(&[&p]);
        let err = adam_step(&mut [&mut p], &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut a = param(0.0, 3.0);
        let mut b = param(0.0, 4.0);
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((n - 5.0).abs() < 1e-12);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-12);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-12);
    }
}
