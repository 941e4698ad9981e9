use autodiff::gradcheck::check_fn;
use autodiff::{AdError, Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Builds `f` on a fresh graph for a single input and checks its gradient against central differences.
fn check_unary(x: Tensor, f: impl Fn(&mut Graph, Var) -> autodiff::Result<Var>) {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_grad());
    let y = f(&mut g, xv).unwrap();
    let w = weights(g.value(y).numel());
    let loss = weighted_sum(&mut g, y, &w);
    g.backward(loss).unwrap();
    let analytic = g.grad(xv).unwrap().to_vec();
    let res = check_fn(&x.data, &analytic, H, |p| {
        let mut g = Graph::new();
        let xv = g.leaf(Tensor::new(x.shape.clone(), p.to_vec()).unwrap());
        let y = f(&mut g, xv)?;
        let l = weighted_sum(&mut g, y, &w);
        g.value(l).item()
    })
    .unwrap();
    assert!(res.max_rel_err < TOL, "max relative error {}", res.max_rel_err);
}

fn check_binary(a: Tensor, b: Tensor, f: impl Fn(&mut Graph, Var, Var) -> autodiff::Result<Var>) {
    let mut g = Graph::new();
    let av = g.leaf(a.clone().with_grad());
    let bv = g.leaf(b.clone().with_grad());
    let y = f(&mut g, av, bv).unwrap();
    let w = weights(g.value(y).numel());
    let loss = weighted_sum(&mut g, y, &w);
    g.backward(loss).unwrap();
    let mut analytic = g.grad(av).unwrap().to_vec();
    analytic.extend_from_slice(g.grad(bv).unwrap());
    let mut x = a.data.clone();
    x.extend_from_slice(&b.data);
    let na = a.numel();
    let res = check_fn(&x, &analytic, H, |p| {
        let mut g = Graph::new();
        let av = g.leaf(Tensor::new(a.shape.clone(), p[..na].to_vec()).unwrap());
        let bv = g.leaf(Tensor::new(b.shape.clone(), p[na..].to_vec()).unwrap());
        let y = f(&mut g, av, bv)?;
        let l = weighted_sum(&mut g, y, &w);
        g.value(l).item()
    })
    .unwrap();
    assert!(res.max_rel_err < TOL, "max relative error {}", res.max_rel_err);
}

/// Fixed non-uniform weights so that every output element influences the scalar loss differently.
fn weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.3 + ((i * 7 + 3) % 11) as f64 * 0.17).collect()
}

fn weighted_sum(g: &mut Graph, y: Var, w: &[f64]) -> Var {
    let shape = g.shape(y).to_vec();
    let wv = g.constant(Tensor::new(shape, w.to_vec()).unwrap());
    let p = g.mul(y, wv).unwrap();
    g.sum(p)
}

#[test]
fn matmul_hand_example() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 1]);
    assert_eq!(g.data(c), &[2.0, 4.0]);
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let i = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let m = Tensor::from_rows(&[vec![1.5, -2.0, 0.25], vec![3.0, 7.0, -1.0]]).unwrap();
    let mv = g.constant(m.clone());
    let c = g.matmul(i, mv).unwrap();
    assert_eq!(g.data(c), m.data.as_slice());
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(g.matmul(a, b), Err(AdError::Shape(_))));
}

#[test]
fn grad_of_sum_of_product_is_column_sums_of_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 2], -1.0, 1.0);
    let mut g = Graph::new();
    let av = g.leaf(a.clone().with_grad());
    let bv = g.constant(b.clone());
    let c = g.matmul(av, bv).unwrap();
    let s = g.sum(c);
    g.backward(s).unwrap();
    let ga = g.grad(av).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let row_sum = b.data[k * 2] + b.data[k * 2 + 1];
            assert!((ga[i * 4 + k] - row_sum).abs() < 1e-14);
        }
    }
    check_binary(a, b, |g, a, b| g.matmul(a, b));
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3]));
    let y = g.softmax(x);
    for v in g.data(y) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn tanh_at_origin() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(0.0).with_grad());
    let y = g.tanh(x);
    assert_eq!(g.data(y), &[0.0]);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[2, 5], 3.7));
    let y = g.layer_norm(x);
    assert!(g.data(y).iter().all(|&v| v == 0.0));
}

#[test]
fn log_rejects_non_positive() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(g.log(x), Err(AdError::Domain(_))));
}

#[test]
fn sum_of_squares_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).with_grad());
    let sq = g.square(x).unwrap();
    let l = g.sum(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
}

#[test]
fn constant_loss_gives_zero_grads() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
    let c = g.leaf(Tensor::scalar(5.0).with_grad());
    let _unused = g.exp(x);
    g.backward(c).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
    assert!(matches!(g.backward(x), Err(AdError::Contract(_))));
}

#[test]
fn repeated_backward_accumulates_until_zeroed() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, -2.0]).with_grad());
    let sq = g.square(x).unwrap();
    let l = g.sum(sq);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[4.0, -8.0]);
    g.zero_grads();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0]);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&mut rng, &[2, 3, 4], -1.5, 1.5);
    check_unary(x.clone(), |g, x| Ok(g.tanh(x)));
    check_unary(x.clone(), |g, x| Ok(g.exp(x)));
    check_unary(x.clone(), |g, x| Ok(g.sigmoid(x)));
    check_unary(x.clone(), |g, x| Ok(g.scale(x, -2.5)));
    check_unary(x.clone(), |g, x| Ok(g.add_scalar(x, 0.7)));
    check_unary(x.clone(), |g, x| g.square(x));
    check_unary(x.clone(), |g, x| Ok(g.softmax(x)));
    check_unary(x.clone(), |g, x| Ok(g.log_softmax(x)));
    check_unary(x.clone(), |g, x| Ok(g.logsumexp(x)));
    check_unary(x.clone(), |g, x| Ok(g.layer_norm(x)));
    check_unary(x.clone(), |g, x| Ok(g.sum_last(x)));
    check_unary(x.clone(), |g, x| Ok(g.mean(x)));
    check_unary(x.clone(), |g, x| g.mean_axis(x, 1));
    check_unary(x.clone(), |g, x| g.transpose_last(x));
    check_unary(x.clone(), |g, x| g.reshape(x, &[6, 4]));
    check_unary(x.clone(), |g, x| g.permute(x, &[2, 0, 1]));
    check_unary(x.clone(), |g, x| g.slice(x, 1, 1, 2));
    check_unary(x.clone(), |g, x| {
        let a = g.slice(x, 2, 0, 1)?;
        let b = g.tanh(x);
        g.concat(&[a, b], 2)
    });
    let pos = random(&mut rng, &[3, 4], 0.2, 2.0);
    check_unary(pos, |g, x| g.log(x));
    let away_from_kink = Tensor::vector(vec![-1.0, -0.3, 0.4, 1.2]);
    check_unary(away_from_kink, |g, x| Ok(g.relu(x)));
}

#[test]
fn binary_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[2, 3, 4], 0.5, 1.5);
    let row = random(&mut rng, &[4], 0.5, 1.5);
    let s = random(&mut rng, &[], 0.5, 1.5);
    for rhs in [b, row, s] {
        check_binary(a.clone(), rhs.clone(), |g, a, b| g.add(a, b));
        check_binary(a.clone(), rhs.clone(), |g, a, b| g.sub(a, b));
        check_binary(a.clone(), rhs.clone(), |g, a, b| g.mul(a, b));
        check_binary(a.clone(), rhs.clone(), |g, a, b| g.div(a, b));
    }
    let x = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let y = random(&mut rng, &[2, 4, 5], -1.0, 1.0);
    check_binary(x, y, |g, a, b| g.bmm(a, b));
    let x = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let w = random(&mut rng, &[4, 3], -1.0, 1.0);
    check_binary(x, w, |g, a, b| g.matmul(a, b));
}

#[test]
fn composed_attention_block_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let k = random(&mut rng, &[2, 3, 4], -1.0, 1.0);
    check_binary(q, k, |g, q, k| {
        let kt = g.transpose_last(k)?;
        let s = g.bmm(q, kt)?;
        let s = g.scale(s, 0.5);
        let p = g.softmax(s);
        let o = g.bmm(p, k)?;
        let o = g.layer_norm(o);
        let o = g.tanh(o);
        let l = g.logsumexp(o);
        let l = g.exp(l);
        g.log(l)
    });
}

#[test]
fn identical_inputs_give_bit_identical_results() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = random(&mut rng, &[3, 5], -1.0, 1.0);
        let w = random(&mut rng, &[5, 5], -1.0, 1.0);
        let mut g = Graph::new();
        let av = g.leaf(a.with_grad());
        let wv = g.leaf(w.with_grad());
        let h = g.matmul(av, wv).unwrap();
        let h = g.layer_norm(h);
        let p = g.log_softmax(h);
        let l = g.mean(p);
        g.backward(l).unwrap();
        (g.data(l).to_vec(), g.grad(av).unwrap().to_vec(), g.grad(wv).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn every_reachable_leaf_gets_a_gradient() {
    let mut g = Graph::new();
    let a = g.leaf(Tensor::vector(vec![0.3, 0.1]).with_grad());
    let b = g.leaf(Tensor::vector(vec![1.0, 2.0]).with_grad());
    let c = g.constant(Tensor::vector(vec![1.0, 1.0]));
    let x = g.mul(a, c).unwrap();
    let y = g.relu(b);
    let y = g.scale(y, 0.0);
    let z = g.add(x, y).unwrap();
    let l = g.sum(z);
    g.backward(l).unwrap();
    assert!(g.grad(a).is_some());
    assert!(g.grad(b).is_some());
    assert!(g.grad(c).is_none());
    assert!(g.value(a).is_consistent());
}
