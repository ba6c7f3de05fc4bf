use dimvl_tensor::finite_diff::{numeric_grad, relative_error, DEFAULT_STEP};
use dimvl_tensor::{Graph, Result, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Builds `loss = build(graph, inputs)` and compares the tape gradient of every
/// input with central differences.
fn check<F>(inputs: &[Tensor], tol: f64, build: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |ts: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone()).unwrap()).collect();
        let loss = build(&mut g, &vars).unwrap();
        g.value(loss).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone()).unwrap()).collect();
    let loss = build(&mut g, &vars).unwrap();
    g.backward(loss).unwrap();
    for (i, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = numeric_grad(&inputs[i], DEFAULT_STEP, |probe| {
            let mut ts = inputs.to_vec();
            ts[i] = probe.clone();
            eval(&ts)
        });
        let err = relative_error(analytic.data(), numeric.data());
        assert!(err <= tol, "input {i}: relative error {err:e} > {tol:e}");
    }
}

/// Contracts an output against fixed random weights so the loss exercises every entry.
fn weighted_sum(g: &mut Graph, x: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let w = random(g.value(x).shape(), &mut rng);
    let w = g.constant(w)?;
    let p = g.mul(x, w)?;
    g.sum(p)
}

#[test]
fn matmul_identity_and_selector() {
    let mut g = Graph::new();
    let i2 = g.constant(Tensor::identity(2)).unwrap();
    let m = g
        .constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
        .unwrap();
    let out = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let a = g.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
    let b = g.constant(Tensor::matrix(2, 1, vec![2.0, 5.0]).unwrap()).unwrap();
    let out = g.matmul(a, b).unwrap();
    assert_eq!(g.value(out).data(), &[2.0]);
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(g.matmul(a, b), Err(TensorError::Shape { .. })));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 3], &mut rng);
        let b = random(&[3, 3], &mut rng);
        check(&[a, b], 1e-6, |g, v| {
            let p = g.matmul(v[0], v[1])?;
            g.sum(p)
        });
    }
}

#[test]
fn matmul_t_and_transpose_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[5, 4], &mut rng);
        check(&[a, b], 1e-6, |g, v| {
            let p = g.matmul_t(v[0], v[1])?;
            let t = g.transpose(p)?;
            weighted_sum(g, t, seed)
        });
    }
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![0.0, 0.0]).unwrap()).unwrap();
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);

    let x = g.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap()).unwrap();
    let y = g.softmax(x, 0).unwrap();
    let d = g.value(y).data();
    assert_eq!(d[0], 1.0);
    assert!(d[1] < 1e-300);
}

#[test]
fn softmax_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[5], &mut rng);
        check(&[x], 1e-6, |g, v| {
            let y = g.softmax(v[0], 0)?;
            weighted_sum(g, y, seed)
        });
        let x = random(&[3, 4], &mut rng);
        for axis in [0, 1] {
            check(&[x.clone()], 1e-6, |g, v| {
                let y = g.softmax(v[0], axis)?;
                weighted_sum(g, y, seed)
            });
        }
    }
}

#[test]
fn layer_norm_examples() {
    let mut g = Graph::new();
    let gain = g.constant(Tensor::filled(&[3], 1.0)).unwrap();
    let bias = g.constant(Tensor::zeros(&[3])).unwrap();
    let x = g.constant(Tensor::matrix(1, 3, vec![5.0; 3]).unwrap()).unwrap();
    let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);

    // [1,-1]: mean 0, variance 1, so the output is x / sqrt(1 + eps).
    let eps = 1e-5;
    let gain = g.constant(Tensor::filled(&[2], 1.0)).unwrap();
    let bias = g.constant(Tensor::zeros(&[2])).unwrap();
    let x = g.constant(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap()).unwrap();
    let y = g.layer_norm(x, gain, bias, eps).unwrap();
    let expect = 1.0 / (1.0f64 + eps).sqrt();
    let d = g.value(y).data();
    assert!((d[0] - expect).abs() < 1e-15 && (d[1] + expect).abs() < 1e-15);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[3, 6], &mut rng);
        let gain = random(&[6], &mut rng);
        let bias = random(&[6], &mut rng);
        check(&[x, gain, bias], 1e-5, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-12)?;
            weighted_sum(g, y, seed)
        });
    }
}

#[test]
fn gelu_and_cross_entropy_values() {
    assert_eq!(dimvl_tensor::gelu(0.0), 0.0);
    let mut g = Graph::new();
    let logits = g.constant(Tensor::vector(vec![0.3; 4]).unwrap()).unwrap();
    for target in 0..4 {
        let l = g.cross_entropy(logits, &[target]).unwrap();
        assert!((g.value(l).item().unwrap() - 4f64.ln()).abs() < 1e-12);
    }
    assert!(matches!(
        g.cross_entropy(logits, &[4]),
        Err(TensorError::Index { index: 4, .. })
    ));
}

#[test]
fn elementwise_and_loss_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[3, 4], &mut rng);
        let b = random(&[3, 4], &mut rng);
        let bias = random(&[4], &mut rng);
        let s = random(&[1], &mut rng);
        check(&[a, b, bias, s], 1e-6, |g, v| {
            let x = g.mul(v[0], v[1])?;
            let x = g.add(x, v[0])?;
            let x = g.add_bias(x, v[2])?;
            let x = g.gelu(x)?;
            let x = g.scale_by(x, v[3])?;
            let x = g.scale(x, 0.7)?;
            weighted_sum(g, x, seed)
        });

        let logits = random(&[4, 6], &mut rng);
        check(&[logits], 1e-6, |g, v| g.cross_entropy(v[0], &[0, 5, 2, 2]));

        let scores = random(&[5], &mut rng);
        check(&[scores], 1e-6, |g, v| {
            g.bce_with_logits(v[0], &[0.0, 1.0, 0.0, 0.0, 0.0])
        });
    }
}

#[test]
fn indexing_op_gradients() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random(&[5, 3], &mut rng);
        let other = random(&[2, 3], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let w_alt = random(&[3, 4], &mut rng);
        check(&[table, other, w, w_alt], 1e-6, |g, v| {
            let rows = g.embedding_lookup(v[0], &[4, 1, 1, 0])?;
            let rows = g.scatter_add_rows(rows, v[1], &[3, 1])?;
            let both = g.concat(&[rows, v[1]], 0)?;
            let picked = g.gather_rows(both, &[5, 0, 2, 3])?;
            let y = g.routed_matmul(picked, v[2], v[3], &[true, false, false, true])?;
            let left = g.slice_cols(y, 0, 2)?;
            let right = g.slice_cols(y, 2, 2)?;
            let joined = g.concat(&[right, left], 1)?;
            let m = g.mean(joined)?;
            let s = weighted_sum(g, joined, seed)?;
            g.add(m, s)
        });
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_contracts() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    assert!(matches!(g.backward(x), Err(TensorError::Contract(_))));

    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(TensorError::Contract(_))));
    g.zero_grad();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
    let x = g.param(Tensor::vector(vec![3.0, 4.0]).unwrap()).unwrap();
    let y = g.mul(c, x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn non_finite_results_are_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1e300]).unwrap()).unwrap();
    assert!(matches!(g.scale(x, 1e300), Err(TensorError::NonFinite { .. })));
    assert!(matches!(
        g.leaf(Tensor::vector(vec![f64::NAN]).unwrap(), false),
        Err(TensorError::NonFinite { .. })
    ));
}

#[test]
fn bias_broadcast_is_the_only_broadcast() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
    let row = g.constant(Tensor::zeros(&[1, 3])).unwrap();
    assert!(g.add(a, row).is_err());
    let bias = g.constant(Tensor::zeros(&[3])).unwrap();
    assert!(g.add_bias(a, bias).is_ok());
    let wrong = g.constant(Tensor::zeros(&[2])).unwrap();
    assert!(g.add_bias(a, wrong).is_err());
}

#[test]
fn recording_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let a = g.param(random(&[4, 5], &mut rng)).unwrap();
        let b = g.param(random(&[5, 3], &mut rng)).unwrap();
        let y = g.matmul(a, b).unwrap();
        let y = g.softmax(y, 1).unwrap();
        let l = g.cross_entropy(y, &[0, 1, 2, 0]).unwrap();
        g.backward(l).unwrap();
        (g.value(l).clone(), g.grad(a).unwrap(), g.grad(b).unwrap())
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, values).unwrap()).unwrap();
        let y = g.softmax(x, 1).unwrap();
        for r in 0..3 {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }
    }
}
