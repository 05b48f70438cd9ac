//! Batch losses recorded on an autograd [`Graph`].

use super::{
    align_sample, cycle_sample, scene_sample, total_loss, AlignStats, CycleStats, LossBreakdown, LossWeights,
    SceneStats, SsimConfig,
};
use crate::autograd::{Graph, Var};
use crate::tensor::{Real, Tensor};

fn item_f64<T: Real>(t: &Tensor<T>, n: usize) -> Vec<f64> {
    t.item(n).iter().map(|v| v.as_f64()).collect()
}

fn write_item<T: Real>(t: &mut Tensor<T>, n: usize, grad: &[f64], scale: f64) {
    for (d, g) in t.item_mut(n).iter_mut().zip(grad) {
        *d = T::lit(g * scale);
    }
}

/// Scene loss over a batch of `[n, c, h, w]` scene maps.
pub fn scene_loss_var<T: Real>(g: &mut Graph<T>, s_odd: Var, s_even: Var, lambda_cos: f64) -> (Var, SceneStats) {
    let (vo, ve) = (g.value(s_odd), g.value(s_even));
    assert_eq!(vo.shape(), ve.shape(), "scene map shapes differ");
    let n = vo.batch();
    let inv = 1.0 / n as f64;
    let mut go = Tensor::zeros(vo.shape());
    let mut ge = Tensor::zeros(ve.shape());
    let mut stats = SceneStats::default();
    for i in 0..n {
        let s = scene_sample(&item_f64(vo, i), &item_f64(ve, i), lambda_cos, true);
        write_item(&mut go, i, s.grad_odd.as_deref().unwrap(), inv);
        write_item(&mut ge, i, s.grad_even.as_deref().unwrap(), inv);
        stats.value += s.stats.value * inv;
        stats.mse += s.stats.mse * inv;
        stats.cos += s.stats.cos * inv;
    }
    let var = g.scalar_fn(vec![s_odd, s_even], T::lit(stats.value), vec![go, ge]);
    (var, stats)
}

/// Cycle loss over `[n, 1, h, w]` inputs and reconstructions.
pub fn cycle_loss_var<T: Real>(
    g: &mut Graph<T>,
    input_odd: Var,
    input_even: Var,
    recon_odd: Var,
    recon_even: Var,
    lambda_ssim: f64,
    ssim_cfg: &SsimConfig,
) -> (Var, CycleStats) {
    let vars = [input_odd, input_even, recon_odd, recon_even];
    let shape = g.value(input_odd).shape();
    for v in vars {
        assert_eq!(g.value(v).shape(), shape, "cycle loss operand shapes differ");
    }
    let [n, c, h, w] = shape;
    assert_eq!(c, 1, "cycle loss expects single-channel images");
    let inv = 1.0 / n as f64;
    let mut grads: Vec<Tensor<T>> = (0..4).map(|_| Tensor::zeros(shape)).collect();
    let mut stats = CycleStats::default();
    for i in 0..n {
        let items: Vec<Vec<f64>> = vars.iter().map(|v| item_f64(g.value(*v), i)).collect();
        let s = cycle_sample(
            &items[0],
            &items[1],
            &items[2],
            &items[3],
            h,
            w,
            lambda_ssim,
            ssim_cfg,
            true,
        );
        for (t, gr) in grads.iter_mut().zip(s.grads.as_ref().unwrap()) {
            write_item(t, i, gr, inv);
        }
        stats.value += s.stats.value * inv;
        stats.mse_odd += s.stats.mse_odd * inv;
        stats.mse_even += s.stats.mse_even * inv;
        stats.ssim_odd += s.stats.ssim_odd * inv;
        stats.ssim_even += s.stats.ssim_even * inv;
    }
    let var = g.scalar_fn(vars.to_vec(), T::lit(stats.value), grads);
    (var, stats)
}

/// Alignment loss between translated images and their targets, `[n, 1, h, w]`.
pub fn align_loss_var<T: Real>(
    g: &mut Graph<T>,
    translated: Var,
    target: Var,
    lambda_ncc: f64,
    lambda_grad: f64,
) -> (Var, AlignStats) {
    let shape = g.value(translated).shape();
    assert_eq!(g.value(target).shape(), shape, "alignment operand shapes differ");
    let [n, c, h, w] = shape;
    assert_eq!(c, 1, "alignment loss expects single-channel images");
    let inv = 1.0 / n as f64;
    let mut gt = Tensor::zeros(shape);
    let mut gr = Tensor::zeros(shape);
    let mut stats = AlignStats::default();
    let (mut ncc_sum, mut ncc_count) = (0.0, 0usize);
    for i in 0..n {
        let a = item_f64(g.value(translated), i);
        let b = item_f64(g.value(target), i);
        let s = align_sample(&a, &b, h, w, lambda_ncc, lambda_grad, true);
        let [d_t, d_r] = s.grads.as_ref().unwrap();
        write_item(&mut gt, i, d_t, inv);
        write_item(&mut gr, i, d_r, inv);
        stats.value += s.stats.value * inv;
        stats.mse += s.stats.mse * inv;
        stats.grad += s.stats.grad * inv;
        if let Some(r) = s.stats.ncc {
            ncc_sum += r;
            ncc_count += 1;
        }
    }
    stats.ncc = (ncc_count > 0).then(|| ncc_sum / ncc_count as f64);
    let var = g.scalar_fn(vec![translated, target], T::lit(stats.value), vec![gt, gr]);
    (var, stats)
}

/// Handles of the component and total loss nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub scene: Var,
    pub cycle: Var,
    pub align: Var,
}

/// Weighted total; the breakdown's `total` is recomputed in `f64` so the
/// audit identity holds exactly.
pub fn total_loss_var<T: Real>(
    g: &mut Graph<T>,
    scene: (Var, SceneStats),
    cycle: (Var, CycleStats),
    align: (Var, AlignStats),
    weights: &LossWeights,
) -> (LossVars, LossBreakdown) {
    let total = g.weighted_sum(vec![
        (scene.0, T::lit(weights.lambda_scene)),
        (cycle.0, T::lit(weights.lambda_cycle)),
        (align.0, T::lit(weights.lambda_align)),
    ]);
    let vars = LossVars {
        total,
        scene: scene.0,
        cycle: cycle.0,
        align: align.0,
    };
    (vars, total_loss(scene.1, cycle.1, align.1, weights))
}
