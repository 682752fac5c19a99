//! Independent oracles shared by the integration and acceptance tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use bicurnet::nn::{Activation, Layer};
use ndarray::{ArrayD, IxDyn};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

/// Worst relative error of one gradient tensor group.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub layer: &'static str,
    pub tensor: String,
    pub rel_err: f64,
}

fn loss(layer: &Layer, x: &ArrayD<f64>, r: &ArrayD<f64>, train: bool) -> f64 {
    let mut l = layer.clone();
    let y = l.forward(x.clone(), train).expect("forward");
    y.iter().zip(r.iter()).map(|(a, b)| a * b).sum()
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Compares the analytic input and parameter gradients of `L = Σ r ⊙ f(x)`
/// with central differences. The layer is cloned before every evaluation
/// so stochastic layers replay the same draw.
pub fn check_layer<R: Rng>(layer: &Layer, x: &ArrayD<f64>, train: bool, rng: &mut R) -> Vec<GradCheck> {
    let out_shape = layer.output_shape(x.shape()).expect("shape");
    let r = ArrayD::from_shape_simple_fn(IxDyn(&out_shape), || rng.random_range(-1.0..1.0));

    let mut l = layer.clone();
    l.forward(x.clone(), train).expect("forward");
    for p in l.params_mut() {
        p.zero_grad();
    }
    let dx = l.backward(r.clone()).expect("backward");

    let mut out = Vec::new();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.as_slice_mut().unwrap()[i] += FD_STEP;
        xm.as_slice_mut().unwrap()[i] -= FD_STEP;
        numeric.push((loss(layer, &xp, &r, train) - loss(layer, &xm, &r, train)) / (2.0 * FD_STEP));
    }
    out.push(GradCheck { layer: layer.kind(), tensor: "input".into(), rel_err: rel_err(dx.as_slice().unwrap(), &numeric) });

    let n_params = layer.params().len();
    for k in 0..n_params {
        let analytic: Vec<f64> = l.params()[k].grad.iter().copied().collect();
        let len = layer.params()[k].len();
        let mut numeric = Vec::with_capacity(len);
        for i in 0..len {
            let mut lp = layer.clone();
            let mut lm = layer.clone();
            lp.params_mut()[k].value.as_slice_mut().unwrap()[i] += FD_STEP;
            lm.params_mut()[k].value.as_slice_mut().unwrap()[i] -= FD_STEP;
            numeric.push((loss(&lp, x, &r, train) - loss(&lm, x, &r, train)) / (2.0 * FD_STEP));
        }
        out.push(GradCheck { layer: layer.kind(), tensor: layer.params()[k].name.clone(), rel_err: rel_err(&analytic, &numeric) });
    }
    out
}

fn with_activation(layer: &Layer, a: Activation) -> Option<Layer> {
    let mut l = layer.clone();
    match &mut l {
        Layer::DwsConv1d(c) => c.activation = a,
        Layer::Conv1d(c) => c.activation = a,
        Layer::Cam(c) => c.activation = a,
        Layer::Dense(d) => d.activation = a,
        _ => return None,
    }
    Some(l)
}

fn activation(layer: &Layer) -> Option<Activation> {
    match layer {
        Layer::DwsConv1d(c) => Some(c.activation),
        Layer::Conv1d(c) => Some(c.activation),
        Layer::Cam(c) => Some(c.activation),
        Layer::Dense(d) => Some(d.activation),
        _ => None,
    }
}

/// Distance of the input from the nearest non-differentiable point: ReLU
/// pre-activations at zero or tied maxima in a pooling window.
pub fn kink_margin(layer: &Layer, x: &ArrayD<f64>) -> f64 {
    match layer {
        Layer::MaxPool1d(p) if p.pool < 2 => f64::INFINITY,
        Layer::MaxPool1d(p) => {
            let s = x.shape();
            let mut m = f64::INFINITY;
            for b in 0..s[0] {
                for t in 0..(s[1] - p.pool) / p.stride + 1 {
                    for c in 0..s[2] {
                        let mut v: Vec<f64> = (0..p.pool).map(|i| x[[b, t * p.stride + i, c]]).collect();
                        v.sort_by(|a, b| b.total_cmp(a));
                        m = m.min(v[0] - v[1]);
                    }
                }
            }
            m
        }
        Layer::Cam(_) => f64::INFINITY,
        _ if activation(layer) == Some(Activation::Relu) => {
            let mut lin = with_activation(layer, Activation::Linear).expect("has activation");
            let z = lin.forward(x.clone(), false).expect("forward");
            z.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
        }
        _ => f64::INFINITY,
    }
}

const ACTIVATIONS: [Activation; 4] = [Activation::Relu, Activation::Swish, Activation::Sigmoid, Activation::Linear];
const KINK_MARGIN: f64 = 1e-3;

fn uniform<R: Rng>(shape: &[usize], rng: &mut R) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
}

/// Draws inputs until none sits within `KINK_MARGIN` of a kink.
fn smooth_input<R: Rng>(layer: &Layer, shape: &[usize], rng: &mut R) -> ArrayD<f64> {
    for _ in 0..200 {
        let x = uniform(shape, rng);
        if kink_margin(layer, &x) > KINK_MARGIN {
            return x;
        }
    }
    panic!("no smooth input found for {}", layer.kind());
}

/// Checks every layer type on shapes and activations drawn from `seed`.
pub fn audit_seed(seed: u64) -> Vec<GradCheck> {
    use bicurnet::nn::{Cam, Conv1d, Dense, Dropout, DwsConv1d, Flatten, MaxPool1d};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=3);
    let n = rng.random_range(6..=14);
    let c = rng.random_range(1..=5);
    let k = rng.random_range(1..=4);
    let f = rng.random_range(1..=4);
    let act = ACTIVATIONS[seed as usize % 4];
    let cam_act = [Activation::Sigmoid, Activation::Swish, Activation::Linear][seed as usize % 3];
    let pool = rng.random_range(1..=3);
    let stride = rng.random_range(1..=pool);
    let l2 = rng.random_range(0.0..0.01);
    let width = rng.random_range(1..=12);
    let units = rng.random_range(1..=6);

    let randomize = |l: &mut Layer, rng: &mut rand_chacha::ChaCha8Rng| {
        for p in l.params_mut() {
            p.value.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
    };
    let cases: Vec<(Layer, Vec<usize>, bool)> = vec![
        (Layer::DwsConv1d(DwsConv1d::new(c, k, f, l2, act, &mut rng)), vec![b, n, c], false),
        (Layer::Conv1d(Conv1d::new(c, k, f, l2, act, &mut rng)), vec![b, n, c], false),
        (Layer::MaxPool1d(MaxPool1d::new(pool, stride)), vec![b, n, c], false),
        (Layer::Cam(Cam::new(c, c, l2, cam_act, &mut rng).expect("cam")), vec![b, n, c], false),
        (Layer::Flatten(Flatten::new()), vec![b, n, c], false),
        (Layer::Dropout(Dropout::new(0.4, seed).expect("dropout")), vec![b, width], true),
        (Layer::Dense(Dense::new("dense", width, units, l2, act, &mut rng)), vec![b, width], false),
    ];
    let mut out = Vec::new();
    for (mut layer, shape, train) in cases {
        randomize(&mut layer, &mut rng);
        let x = smooth_input(&layer, &shape, &mut rng);
        out.extend(check_layer(&layer, &x, train, &mut rng));
    }
    out
}

/// Composite Simpson rule on `[a, b]` with `n` (even) intervals.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    assert!(n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Gram matrix `∫ Bᵢ Bⱼ dΩ` over the spherical cap `θ ≤ theta_max`, with a
/// Simpson rule in θ and the periodic trapezoid rule in φ.
pub fn cap_gram(basis: &dyn Fn(usize, f64, f64) -> f64, n_basis: usize, theta_max: f64, n_theta: usize, n_phi: usize) -> Vec<Vec<f64>> {
    let mut g = vec![vec![0.0; n_basis]; n_basis];
    let dphi = 2.0 * PI / n_phi as f64;
    let h = theta_max / n_theta as f64;
    for it in 0..=n_theta {
        let theta = it as f64 * h;
        let w_theta = if it == 0 || it == n_theta {
            1.0
        } else if it % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0
            * theta.sin();
        if w_theta == 0.0 {
            continue;
        }
        for ip in 0..n_phi {
            let phi = ip as f64 * dphi;
            let v: Vec<f64> = (0..n_basis).map(|k| basis(k, theta, phi)).collect();
            let w = w_theta * dphi;
            for i in 0..n_basis {
                for j in 0..n_basis {
                    g[i][j] += w * v[i] * v[j];
                }
            }
        }
    }
    g
}

pub fn max_identity_deviation(g: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            m = m.max((v - target).abs());
        }
    }
    m
}

/// Textbook Pearson correlation evaluated term by term.
pub fn brute_pcc(a: &[f64], p: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mp = p.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vp = 0.0;
    for i in 0..a.len() {
        num += (a[i] - ma) * (p[i] - mp);
        va += (a[i] - ma) * (a[i] - ma);
        vp += (p[i] - mp) * (p[i] - mp);
    }
    num / (va * vp).sqrt()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}
