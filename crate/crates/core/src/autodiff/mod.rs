//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! The operator set is deliberately closed: it is exactly what the backbone
//! needs (matmul, same-padded conv1d, broadcasting arithmetic, concat/slice,
//! pointwise nonlinearities, softmax, reductions, FiLM-style modulation,
//! embedding lookup). A [`Graph`] is rebuilt for every forward pass.

mod adam;
mod graph;
mod tensor;

pub use adam::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use graph::{Graph, OpTag, Var, DEFAULT_LEAKY_SLOPE};
pub use tensor::{Scalar, Tensor};


#[cfg(test)]
mod tests {
    use super::gradcheck::check;
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_closed_form() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 2], &[0.0, 0.0, 2f64.ln(), 0.0]));
        let y = g.softmax(x, 1).unwrap();
        let v = g.value(y);
        let want = [0.5, 0.5, 2.0 / 3.0, 1.0 / 3.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matmul_with_ones_gives_row_sums() {
        let mut g = Graph::new();
        let a = g.leaf(&t(&[2, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let b = g.leaf(&t(&[3, 1], &[1.0, 1.0, 1.0]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[1.0, 1.0]);
    }

    #[test]
    fn conv1d_same_padding() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]));
        let w = g.leaf(&t(&[3, 1, 1], &[1.0, 1.0, 1.0]));
        let y = g.conv1d(x, w).unwrap();
        assert_eq!(g.value(y), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_reports_shapes() {
        let mut g = Graph::new();
        let a = g.leaf(&Tensor::<f64>::zeros(vec![2, 3]));
        let b = g.leaf(&Tensor::<f64>::zeros(vec![2, 3]));
        match g.matmul(a, b) {
            Err(Error::Dimension { op, shapes }) => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_tag_is_config_error() {
        assert!(matches!("frobnicate".parse::<OpTag>(), Err(Error::Config(_))));
        assert_eq!(
            "leaky_relu".parse::<OpTag>().unwrap(),
            OpTag::LeakyRelu { slope: 0.2 }
        );
        assert_eq!(
            "softmax(1)".parse::<OpTag>().unwrap(),
            OpTag::Softmax { axis: 1 }
        );
    }

    #[test]
    fn apply_dispatches() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[-1.0, 0.5, 2.0]));
        let y = g.apply(&"relu".parse().unwrap(), &[x]).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.5, 2.0]);
        assert!(g.apply(&OpTag::Add, &[x]).is_err());
    }

    #[test]
    fn grad_of_mean_square() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).requiring_grad());
        let sq = g.square(x);
        let loss = g.mean(sq, None).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn leaky_relu_negative_slope() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1], &[-3.0]).requiring_grad());
        let y = g.leaky_relu(x, 0.2);
        let loss = g.sum(y, None).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn unreachable_leaf_gets_zero_grad() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).requiring_grad());
        let z = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]).requiring_grad());
        let _unused = g.square(z);
        let loss = g.sum(x, None).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(z).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_needs_scalar() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).requiring_grad());
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn write_grad_fills_tensor_slot() {
        let p = t(&[2], &[1.0, -1.0]).requiring_grad();
        let mut g = Graph::new();
        let x = g.leaf(&p);
        let s = g.square(x);
        let loss = g.sum(s, None).unwrap();
        g.backward(loss).unwrap();
        let mut p = p;
        g.write_grad(x, &mut p).unwrap();
        assert_eq!(p.grad().unwrap(), &[2.0, -2.0]);
    }

    #[test]
    fn five_op_graph_matches_finite_differences() {
        let a = t(&[2, 3], &[0.3, -1.2, 0.7, 1.1, 0.2, -0.4]);
        let b = t(&[3, 2], &[0.5, -0.3, 1.4, 0.9, -0.8, 0.1]);
        let errs = check(&[a, b], 1e-5, |g, v| {
            let m = g.matmul(v[0], v[1]).unwrap();
            let s = g.tanh(m);
            let q = g.square(s);
            let sm = g.softmax(q, 1).unwrap();
            let m = g.mean(sm, Some(0)).unwrap();
            g.square(m)
        });
        assert!(errs.iter().all(|&e| e < 1e-4), "{errs:?}");
    }

    #[test]
    fn f32_graph_runs() {
        let mut g = Graph::<f32>::new();
        let x = g.leaf(&Tensor::new(vec![2], vec![1.0f32, -1.0]).unwrap().requiring_grad());
        let y = g.sigmoid(x);
        let l = g.sum(y, None).unwrap();
        g.backward(l).unwrap();
        assert!((g.grad(x).unwrap()[0] - 0.19661193).abs() < 1e-6);
    }

    fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn softmax_rows_are_distributions(v in vals(12)) {
            let mut g = Graph::new();
            let x = g.leaf(&t(&[3, 4], &v));
            let y = g.softmax(x, 1).unwrap();
            for row in g.value(y).chunks(4) {
                prop_assert!(row.iter().all(|&p| p > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn gradcheck_matmul_batched(a in vals(2 * 3 * 4), b in vals(2 * 4 * 2), w in vals(8)) {
            let errs = check(&[t(&[2, 3, 4], &a), t(&[2, 4, 2], &b), t(&[4, 2], &w)], 1e-5, |g, v| {
                let x = g.matmul(v[0], v[1]).unwrap();
                let y = g.matmul(v[0], v[2]).unwrap();
                g.mul(x, y).unwrap()
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_conv1d(x in vals(2 * 5 * 3), w in vals(4 * 3 * 2)) {
            let errs = check(&[t(&[2, 5, 3], &x), t(&[4, 3, 2], &w)], 1e-5, |g, v| {
                let y = g.conv1d(v[0], v[1]).unwrap();
                g.square(y)
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_broadcast_arith(a in vals(2 * 3 * 4), b in vals(3 * 1), c in vals(4)) {
            let errs = check(&[t(&[2, 3, 4], &a), t(&[3, 1], &b), t(&[4], &c)], 1e-5, |g, v| {
                let x = g.add(v[0], v[1]).unwrap();
                let y = g.sub(x, v[2]).unwrap();
                let z = g.mul(y, v[1]).unwrap();
                g.mul(z, v[2]).unwrap()
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_pairwise_broadcast(a in vals(2 * 3 * 2), b in vals(2 * 3 * 2)) {
            let errs = check(&[t(&[2, 3, 1, 2], &a), t(&[2, 1, 3, 2], &b)], 1e-5, |g, v| {
                let s = g.add(v[0], v[1]).unwrap();
                let l = g.leaky_relu(s, 0.2);
                g.square(l)
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_concat_slice(a in vals(2 * 3), b in vals(2 * 2)) {
            let errs = check(&[t(&[2, 3], &a), t(&[2, 2], &b)], 1e-5, |g, v| {
                let c = g.concat(&[v[0], v[1]], 1).unwrap();
                let s = g.slice(c, 1, 1, 3).unwrap();
                let q = g.square(s);
                let c0 = g.concat(&[q, v[0]], 0).unwrap();
                g.sigmoid(c0)
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_pointwise(x in vals(10)) {
            let errs = check(&[t(&[10], &x)], 1e-5, |g, v| {
                let a = g.tanh(v[0]);
                let b = g.relu(v[0]);
                let c = g.sigmoid(v[0]);
                let s = g.square(v[0]);
                let r = g.add(s, a).unwrap();
                let shifted = g.square(r);
                let pos = g.add(shifted, c).unwrap();
                let q = g.sqrt(pos);
                let m = g.mul(q, b).unwrap();
                let sc = g.scale(m, 0.7);
                g.add(sc, a).unwrap()
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_softmax_reductions(x in vals(2 * 3 * 4), w in vals(4)) {
            let errs = check(&[t(&[2, 3, 4], &x), t(&[4], &w)], 1e-5, |g, v| {
                let y = g.mul(v[0], v[1]).unwrap();
                let s0 = g.softmax(y, 1).unwrap();
                let s2 = g.softmax(y, 2).unwrap();
                let p = g.mul(s0, s2).unwrap();
                let m = g.mean(p, Some(1)).unwrap();
                let sq = g.square(m);
                g.sum(sq, Some(0)).unwrap()
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_affine_modulate(x in vals(2 * 3 * 2), gm in vals(2 * 2), bt in vals(2 * 3 * 2)) {
            let errs = check(&[t(&[2, 3, 2], &x), t(&[2, 1, 2], &gm), t(&[2, 3, 2], &bt)], 1e-5, |g, v| {
                let y = g.affine_modulate(v[0], v[1], v[2]).unwrap();
                g.square(y)
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn gradcheck_reshape_transpose_embedding(x in vals(2 * 3 * 4), table in vals(5 * 2)) {
            let errs = check(&[t(&[2, 3, 4], &x), t(&[5, 2], &table)], 1e-5, |g, v| {
                let tr = g.swap_last2(v[0]).unwrap();
                let r = g.reshape(tr, vec![6, 4]).unwrap();
                let e = g.embedding(v[1], &[0, 3, 3, 1]).unwrap();
                let sq = g.square(e);
                let m = g.matmul(r, sq).unwrap();
                g.tanh(m)
            });
            prop_assert!(errs.iter().all(|&e| e < 1e-4), "{:?}", errs);
        }

        #[test]
        fn identical_runs_are_bit_identical(x in vals(12)) {
            let run = || {
                let mut g = Graph::new();
                let a = g.leaf(&t(&[3, 4], &x).requiring_grad());
                let s = g.softmax(a, 1).unwrap();
                let l = g.mean(s, None).unwrap();
                let q = g.square(a);
                let l2 = g.mean(q, None).unwrap();
                let tot = g.add(l, l2).unwrap();
                g.backward(tot).unwrap();
                (g.value(tot).to_vec(), g.grad(a).unwrap().to_vec())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
