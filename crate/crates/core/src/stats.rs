//! Small descriptive-statistics helpers shared by calibration and alerting.

use crate::autodiff::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::lit(xs.len() as f64))
}

/// Linear-interpolation quantile of already sorted data (the usual "type 7").
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: T) -> Option<T> {
    let n = sorted.len();
    if n == 0 {
        return None;
    }
    let h = T::lit((n - 1) as f64) * q.max(T::zero()).min(T::one());
    let lo = h.floor();
    let i = lo.to_usize().unwrap_or(0).min(n - 1);
    let frac = h - lo;
    if i + 1 >= n {
        return Some(sorted[n - 1]);
    }
    Some(sorted[i] + frac * (sorted[i + 1] - sorted[i]))
}

pub fn sorted<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&x, 0.5), Some(3.0));
        assert_eq!(quantile_sorted(&x, 0.0), Some(1.0));
        assert_eq!(quantile_sorted(&x, 1.0), Some(5.0));
        assert_eq!(quantile_sorted(&x, 0.875), Some(4.5));
        assert_eq!(quantile_sorted::<f64>(&[], 0.5), None);
        assert_eq!(mean(&[1.0f32, 2.0, 3.0]), Some(2.0));
    }
}
