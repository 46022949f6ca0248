//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! Forward ops append nodes to a [`Graph`]; [`Graph::backward`] sweeps the
//! tape once in reverse and accumulates gradients additively at fan-out.
//! The layer helpers ([`affine`], [`recurrent_cell`], [`gnn_layer`],
//! [`log_sum_exp`]) and [`adam_step`] are everything the predictor needs.

mod adam;
mod graph;
mod layers;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use graph::{lse, sigmoid, softplus, Gradients, Graph, NormAdjacency, Var};
pub use layers::{affine, gnn_layer, gnn_layer_with, log_sum_exp, recurrent_cell, Activation, LstmVars};
pub use params::{BoundParams, ParamFile, ParamStore, CHECKPOINT_VERSION};
pub use tensor::{Tensor, TensorRecord};

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} needs {} values, got {got}", shape.iter().product::<usize>())]
    ValueCount { shape: Vec<usize>, got: usize },
    #[error("tensors of rank {0} are not supported")]
    Rank(usize),
    #[error("{0} needs a non-empty input")]
    Empty(&'static str),
    #[error("index {index} out of range {len} in {op}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("edge {edge:?} references a node outside 0..{nodes}")]
    EdgeOutOfRange { edge: (usize, usize), nodes: usize },
    #[error("backward already ran on this tape; reset it first")]
    BackwardTwice,
    #[error("backward needs a single-element output, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("unsupported checkpoint version {0}")]
    CheckpointVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of `f` w.r.t. every input tensor.
    fn check_grad(
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        let eval = |ts: &[Tensor<f64>]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&mut g, &vars);
            g.value(out).item()
        };
        let h = 1e-5;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], t.shape());
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(rel < tol, "input {k} coord {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn affine_identity_and_zero_input() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let w = g.constant(Tensor::identity(2));
        let b = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = affine(&mut g, x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let zero = g.constant(Tensor::zeros(&[3, 2]));
        let b2 = g.constant(Tensor::vector(vec![0.5, -1.5]));
        let y = affine(&mut g, zero, w, b2).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.5, 0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let w = g.constant(Tensor::zeros(&[2, 2]));
        let b = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(affine(&mut g, x, w, b), Err(AutodiffError::Shape { .. })));
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2]), random(&mut rng, &[2])];
        check_grad(
            inputs,
            |g, v| {
                let y = affine(g, v[0], v[1], v[2]).unwrap();
                let y = g.square(y);
                g.sum_all(y)
            },
            1e-6,
        );
    }

    fn lstm_params(g: &mut Graph<f64>, rng: &mut ChaCha8Rng, inp: usize, hs: usize) -> LstmVars {
        LstmVars {
            w_input: g.param(random(rng, &[inp, 4 * hs])),
            w_hidden: g.param(random(rng, &[hs, 4 * hs])),
            bias: g.param(random(rng, &[4 * hs])),
            hidden: hs,
        }
    }

    #[test]
    fn lstm_zero_weights_give_zero_hidden() {
        let mut g = Graph::<f64>::new();
        let p = LstmVars {
            w_input: g.constant(Tensor::zeros(&[3, 8])),
            w_hidden: g.constant(Tensor::zeros(&[2, 8])),
            bias: g.constant(Tensor::zeros(&[8])),
            hidden: 2,
        };
        let x = g.constant(Tensor::full(&[1, 3], 0.7));
        let h = g.constant(Tensor::zeros(&[1, 2]));
        let c = g.constant(Tensor::zeros(&[1, 2]));
        let (h, _) = recurrent_cell(&mut g, x, h, c, &p).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_hidden_is_bounded_over_long_unroll() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::<f64>::new();
        let p = lstm_params(&mut g, &mut rng, 2, 4);
        let x = g.constant(Tensor::full(&[1, 2], 5.0));
        let mut h = g.constant(Tensor::zeros(&[1, 4]));
        let mut c = g.constant(Tensor::zeros(&[1, 4]));
        for _ in 0..50 {
            (h, c) = recurrent_cell(&mut g, x, h, c, &p).unwrap();
            assert!(g.value(h).data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn lstm_chain_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (inp, hs) = (3, 3);
        let inputs = vec![
            random(&mut rng, &[inp, 4 * hs]),
            random(&mut rng, &[hs, 4 * hs]),
            random(&mut rng, &[4 * hs]),
            random(&mut rng, &[5, inp]),
        ];
        check_grad(
            inputs,
            |g, v| {
                let p = LstmVars {
                    w_input: v[0],
                    w_hidden: v[1],
                    bias: v[2],
                    hidden: hs,
                };
                let mut h = g.constant(Tensor::zeros(&[1, hs]));
                let mut c = g.constant(Tensor::zeros(&[1, hs]));
                for t in 0..5 {
                    let sel = g.constant(one_hot_row(5, t));
                    let xt = g.matmul(sel, v[3]).unwrap();
                    (h, c) = recurrent_cell(g, xt, h, c, &p).unwrap();
                }
                g.sum_all(h)
            },
            1e-5,
        );
    }

    fn one_hot_row(n: usize, k: usize) -> Tensor<f64> {
        let mut t = Tensor::zeros(&[1, n]);
        t.data_mut()[k] = 1.0;
        t
    }

    #[test]
    fn gnn_two_node_example() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let w = g.constant(Tensor::identity(2));
        let out = gnn_layer(&mut g, h, &[(0, 1)], w, Activation::Relu).unwrap();
        assert_eq!(g.value(out).row(0), &[0.5, 0.5]);
        assert_eq!(g.value(out).row(1), &[0.5, 0.5]);
    }

    #[test]
    fn gnn_single_node_is_identity() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::from_rows(&[vec![0.3, -2.0, 7.0]]).unwrap());
        let w = g.constant(Tensor::identity(3));
        let out = gnn_layer(&mut g, h, &[], w, Activation::Identity).unwrap();
        assert_eq!(g.value(out).data(), &[0.3, -2.0, 7.0]);
    }

    #[test]
    fn gnn_rejects_out_of_range_edges() {
        let mut g = Graph::<f64>::new();
        let h = g.constant(Tensor::zeros(&[2, 2]));
        let w = g.constant(Tensor::identity(2));
        assert!(matches!(
            gnn_layer(&mut g, h, &[(0, 2)], w, Activation::Relu),
            Err(AutodiffError::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn gnn_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = vec![random(&mut rng, &[4, 3]), random(&mut rng, &[3, 2])];
        let edges = [(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)];
        check_grad(
            inputs,
            |g, v| {
                let y = gnn_layer(g, v[0], &edges, v[1], Activation::Tanh).unwrap();
                let y = g.square(y);
                g.sum_all(y)
            },
            1e-6,
        );
    }

    #[test]
    fn log_sum_exp_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = log_sum_exp(&mut g, x).unwrap();
        assert!((g.value(y).item() - std::f64::consts::LN_2).abs() < 1e-15);
        let x = g.constant(Tensor::vector(vec![1000.0, 1000.0]));
        let y = log_sum_exp(&mut g, x).unwrap();
        assert!((g.value(y).item() - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        let x = g.constant(Tensor::vector(vec![3.25; 7]));
        let y = log_sum_exp(&mut g, x).unwrap();
        assert!((g.value(y).item() - (3.25 + 7f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_gradient_is_softmax() {
        let x = vec![0.3, -1.2, 2.0, 0.0];
        let mut g = Graph::<f64>::new();
        let v = g.param(Tensor::vector(x.clone()));
        let y = log_sum_exp(&mut g, v).unwrap();
        let grads = g.backward(y).unwrap();
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        for (gi, xi) in grads.get(v).unwrap().data().iter().zip(&x) {
            assert!((gi - xi.exp() / z).abs() < 1e-12);
        }
        check_grad(vec![Tensor::vector(x)], |g, v| log_sum_exp(g, v[0]).unwrap(), 1e-6);
    }

    #[test]
    fn elementwise_and_reduction_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[3, 4]).map(|v| v.abs() + 0.5);
        check_grad(
            vec![a, b],
            |g, v| {
                let s = g.sigmoid(v[0]);
                let t = g.tanh(v[1]);
                let sp = g.softplus(v[0]);
                let d = g.div(s, v[1]).unwrap();
                let m = g.mul(d, t).unwrap();
                let e = g.exp(sp);
                let l = g.ln(v[1]);
                let q = g.sqrt(v[1]);
                let r = g.relu(v[0]);
                let x = g.add(m, e).unwrap();
                let x = g.sub(x, l).unwrap();
                let x = g.add(x, q).unwrap();
                let x = g.add(x, r).unwrap();
                let x = g.mul_scalar(x, 0.7);
                let x = g.add_scalar(x, 2.0);
                let x = g.neg(x);
                let cat = g.concat_cols(&[x, v[0]]).unwrap();
                let sl = g.slice_cols(cat, 2, 4).unwrap();
                let ls = g.log_softmax_rows(sl).unwrap();
                let pk = g.pick_cols(ls, &[0, 3, 1]).unwrap();
                let rs = g.sum_cols(sl);
                let lse = g.log_sum_exp_rows(cat).unwrap();
                let tot = g.add(pk, rs).unwrap();
                let tot = g.add(tot, lse).unwrap();
                let pooled = g.mean_pool_groups(cat, 3).unwrap();
                let p = g.mean_all(pooled);
                let s = g.sum_all(tot);
                g.add(s, p).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let z = g.add(y, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), 7.0);
    }

    #[test]
    fn backward_twice_is_rejected_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.square(x);
        g.backward(y).unwrap();
        assert!(matches!(g.backward(y), Err(AutodiffError::BackwardTwice)));
        g.reset();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.square(x);
        assert_eq!(g.backward(y).unwrap().get(x).unwrap().item(), 4.0);
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn strict_mode_panics_on_nan() {
        let mut g = Graph::<f64>::with_strict_finite(true);
        let x = g.constant(Tensor::scalar(-1.0));
        g.ln(x);
    }

    #[test]
    fn lenient_mode_records_first_non_finite() {
        let mut g = Graph::<f64>::with_strict_finite(false);
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.ln(x);
        assert_eq!(g.first_non_finite(), Some((y.id(), "ln")));
    }

    #[test]
    fn works_in_single_precision() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::vector(vec![0.0f32, 0.0]));
        let y = log_sum_exp(&mut g, x).unwrap();
        assert!((g.value(y).item() - std::f32::consts::LN_2).abs() < 1e-6);
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.5f32, 0.5]);
    }

    #[test]
    fn checkpoint_is_byte_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f64>::new();
        store.init_weight("b.w", 3, 4, &mut rng);
        store.init_bias("a.b", 4);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.json"), dir.path().join("2.json"));
        store.save_json(&p1).unwrap();
        let loaded = ParamStore::<f64>::load_json(&p1).unwrap();
        assert_eq!(loaded, store);
        loaded.save_json(&p2).unwrap();
        assert_eq!(std::fs::read(p1).unwrap(), std::fs::read(p2).unwrap());
    }
}
