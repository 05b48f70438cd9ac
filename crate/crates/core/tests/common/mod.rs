//! Gradient-check helpers shared by the `gradcheck` and `acceptance` targets.
//!
//! Checks use central differences with step 1e-4 and the relative error
//! `|g_analytic - g_numeric| / max(|g_analytic|, |g_numeric|)` over all
//! coordinates (Euclidean norms). Inputs that put a kink of `|.|` within
//! 1e-3 of a sample are redrawn: central differences straddling a kink
//! measure the average of the two slopes.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sasreg::autograd::{Graph, Var};
use sasreg::losses::kernels::{self, Measured, SsimConfig};
use sasreg::losses::{align_loss_var, cycle_loss_var, scene_loss_var, total_loss_var, LossWeights};
use sasreg::tensor::Tensor;

pub const TRIALS: usize = 20;
pub const STEP: f64 = 1e-4;
pub const TOL: f64 = 1e-3;

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(n)).max(1e-12)
}

pub fn numeric(x: &[f64], f: &dyn Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + STEP;
            let up = f(&p);
            p[i] = x[i] - STEP;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_vec(shape, uniform(rng, shape.iter().product(), lo, hi))
}

/// Every neighbour difference of `x - y` is at least `gap` in size.
pub fn kink_free(x: &[f64], y: &[f64], h: usize, w: usize, gap: f64) -> bool {
    let d = |a: usize, b: usize| ((x[a] - x[b]) - (y[a] - y[b])).abs();
    (0..h).all(|i| (0..w - 1).all(|j| d(i * w + j + 1, i * w + j) > gap))
        && (0..h - 1).all(|i| (0..w).all(|j| d((i + 1) * w + j, i * w + j) > gap))
}

/// Worst relative error of both argument gradients of a kernel.
pub fn kernel_worst(
    seed: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>),
    f: impl Fn(&[f64], &[f64], bool) -> Measured,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let (x, y) = draw(&mut rng);
        let m = f(&x, &y, true);
        let nx = numeric(&x, &|p| f(p, &y, false).value);
        let ny = numeric(&y, &|p| f(&x, p, false).value);
        worst = worst
            .max(rel_err(m.grad_x.as_ref().unwrap(), &nx))
            .max(rel_err(m.grad_y.as_ref().unwrap(), &ny));
    }
    worst
}

/// Worst relative error of a scalar graph's gradient w.r.t. every leaf,
/// against finite differences of the rebuilt graph.
pub fn graph_worst(
    seed: u64,
    draw: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let leaves = draw(&mut rng);
        let mut g = Graph::new();
        let vars: Vec<Var> = leaves.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        for (k, leaf) in leaves.iter().enumerate() {
            let eval = |p: &[f64]| {
                let mut g = Graph::new();
                let vars: Vec<Var> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            g.input(Tensor::from_vec(t.shape(), p.to_vec()))
                        } else {
                            g.input(t.clone())
                        }
                    })
                    .collect();
                let out = build(&mut g, &vars);
                g.scalar(out)
            };
            let n = numeric(leaf.data(), &eval);
            let a = grads
                .get(vars[k])
                .map(|t| t.data().to_vec())
                .unwrap_or(vec![0.0; leaf.numel()]);
            worst = worst.max(rel_err(&a, &n));
        }
    }
    worst
}

fn pair(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    (uniform(rng, 64, 0.0, 1.0), uniform(rng, 64, 0.0, 1.0))
}

/// A batch of two 8x8 single-channel images per operand.
fn images(rng: &mut ChaCha8Rng, n: usize) -> Vec<Tensor<f64>> {
    (0..n).map(|_| rand_tensor(rng, [2, 1, 8, 8], 0.05, 0.95)).collect()
}

fn maps(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_tensor(rng, [2, 3, 8, 8], -1.0, 1.0)
}

/// Worst relative error of every loss and loss building block.
pub fn loss_gradient_checks() -> Vec<(&'static str, f64)> {
    let cfg = SsimConfig::default();
    let w = LossWeights::default();
    vec![
        ("mse", kernel_worst(1, pair, kernels::mse)),
        (
            "cosine",
            kernel_worst(
                2,
                |r| (uniform(r, 64, -1.0, 1.0), uniform(r, 64, -1.0, 1.0)),
                kernels::cosine,
            ),
        ),
        ("ncc", kernel_worst(3, pair, |x, y, g| kernels::ncc(x, y, g).unwrap())),
        (
            "ssim",
            kernel_worst(4, pair, |x, y, g| kernels::ssim(x, y, 8, 8, &cfg, g)),
        ),
        (
            "gradient_l1",
            kernel_worst(
                5,
                |r| loop {
                    let (x, y) = pair(r);
                    if kink_free(&x, &y, 8, 8, 1e-3) {
                        return (x, y);
                    }
                },
                |x, y, g| kernels::gradient_l1(x, y, 8, 8, g),
            ),
        ),
        (
            "scene_loss",
            graph_worst(
                6,
                |r| vec![maps(r), maps(r)],
                |g, v| scene_loss_var(g, v[0], v[1], w.lambda_cos).0,
            ),
        ),
        (
            "cycle_loss",
            graph_worst(
                7,
                |r| images(r, 4),
                |g, v| cycle_loss_var(g, v[0], v[1], v[2], v[3], w.lambda_ssim, &cfg).0,
            ),
        ),
        (
            "align_loss",
            graph_worst(
                8,
                |r| loop {
                    let v = images(r, 2);
                    if (0..2).all(|n| kink_free(v[0].item(n), v[1].item(n), 8, 8, 1e-3)) {
                        return v;
                    }
                },
                |g, v| align_loss_var(g, v[0], v[1], w.lambda_ncc, w.lambda_grad).0,
            ),
        ),
        (
            "total_loss",
            graph_worst(
                9,
                |r| loop {
                    let mut v = images(r, 4);
                    v.push(maps(r));
                    v.push(maps(r));
                    v.push(rand_tensor(r, [2, 1, 8, 8], 0.05, 0.95));
                    if (0..2).all(|n| kink_free(v[6].item(n), v[0].item(n), 8, 8, 1e-3)) {
                        return v;
                    }
                },
                |g, v| {
                    let scene = scene_loss_var(g, v[4], v[5], w.lambda_cos);
                    let cycle = cycle_loss_var(g, v[0], v[1], v[2], v[3], w.lambda_ssim, &cfg);
                    let align = align_loss_var(g, v[6], v[0], w.lambda_ncc, w.lambda_grad);
                    total_loss_var(g, scene, cycle, align, &w).0.total
                },
            ),
        ),
    ]
}
