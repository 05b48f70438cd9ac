//! Training objectives.
//!
//! - scene: `MSE(S_o, S_e) + l_cos * (1 - cos(S_o, S_e))`
//! - cycle: `MSE_o + MSE_e + l_ssim * (2 - SSIM_o - SSIM_e)`
//! - align: `MSE + l_ncc * (1 - NCC) + l_grad * L_grad`
//! - total: `l_scene * scene + l_cycle * cycle + l_align * align`
//!
//! Every term is computed per sample and averaged over the batch. MSE is a
//! mean over elements.

mod graph;
pub mod kernels;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
pub use graph::{align_loss_var, cycle_loss_var, scene_loss_var, total_loss_var, LossVars};
pub use kernels::SsimConfig;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss weight {name} must be finite and non-negative, got {value}")]
    InvalidWeight { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_scene: f64,
    pub lambda_cycle: f64,
    pub lambda_align: f64,
    pub lambda_cos: f64,
    pub lambda_ssim: f64,
    pub lambda_ncc: f64,
    pub lambda_grad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_scene: 1.0,
            lambda_cycle: 0.5,
            lambda_align: 2.0,
            lambda_cos: 0.1,
            lambda_ssim: 0.5,
            lambda_ncc: 0.5,
            lambda_grad: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let named = [
            ("lambda_scene", self.lambda_scene),
            ("lambda_cycle", self.lambda_cycle),
            ("lambda_align", self.lambda_align),
            ("lambda_cos", self.lambda_cos),
            ("lambda_ssim", self.lambda_ssim),
            ("lambda_ncc", self.lambda_ncc),
            ("lambda_grad", self.lambda_grad),
        ];
        for (name, value) in named {
            if !value.is_finite() || value < 0.0 {
                return Err(LossError::InvalidWeight { name, value });
            }
        }
        Ok(())
    }
}

/// Component values and their audit sub-terms, all batch means.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub scene: f64,
    pub cycle: f64,
    pub align: f64,
    pub total: f64,
    pub scene_mse: f64,
    pub scene_cos: f64,
    pub cycle_mse_odd: f64,
    pub cycle_mse_even: f64,
    pub cycle_ssim_odd: f64,
    pub cycle_ssim_even: f64,
    pub align_mse: f64,
    /// `None` when every sample had a constant image.
    pub align_ncc: Option<f64>,
    pub align_grad: f64,
    /// The weights `total` was formed with (after ablation).
    pub lambda_scene: f64,
    pub lambda_cycle: f64,
    pub lambda_align: f64,
}

impl LossBreakdown {
    /// `lambda_scene * scene + lambda_cycle * cycle + lambda_align * align`
    /// recomputed from the stored fields.
    pub fn recomputed_total(&self) -> f64 {
        self.lambda_scene * self.scene + self.lambda_cycle * self.cycle + self.lambda_align * self.align
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SceneStats {
    pub value: f64,
    pub mse: f64,
    pub cos: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CycleStats {
    pub value: f64,
    pub mse_odd: f64,
    pub mse_even: f64,
    pub ssim_odd: f64,
    pub ssim_even: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlignStats {
    pub value: f64,
    pub mse: f64,
    pub ncc: Option<f64>,
    pub grad: f64,
}

/// Composes component values into a breakdown.
pub fn total_loss(scene: SceneStats, cycle: CycleStats, align: AlignStats, weights: &LossWeights) -> LossBreakdown {
    let mut b = LossBreakdown {
        scene: scene.value,
        cycle: cycle.value,
        align: align.value,
        total: 0.0,
        scene_mse: scene.mse,
        scene_cos: scene.cos,
        cycle_mse_odd: cycle.mse_odd,
        cycle_mse_even: cycle.mse_even,
        cycle_ssim_odd: cycle.ssim_odd,
        cycle_ssim_even: cycle.ssim_even,
        align_mse: align.mse,
        align_ncc: align.ncc,
        align_grad: align.grad,
        lambda_scene: weights.lambda_scene,
        lambda_cycle: weights.lambda_cycle,
        lambda_align: weights.lambda_align,
    };
    b.total = b.recomputed_total();
    b
}

/// One sample's scene term with gradients w.r.t. both maps.
pub(crate) struct SceneSample {
    pub stats: SceneStats,
    pub grad_odd: Option<Vec<f64>>,
    pub grad_even: Option<Vec<f64>>,
}

pub(crate) fn scene_sample(s_odd: &[f64], s_even: &[f64], lambda_cos: f64, want_grad: bool) -> SceneSample {
    let m = kernels::mse(s_odd, s_even, want_grad);
    let c = kernels::cosine(s_odd, s_even, want_grad);
    let combine = |a: Option<Vec<f64>>, b: Option<Vec<f64>>| {
        a.zip(b)
            .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x - lambda_cos * y).collect())
    };
    SceneSample {
        stats: SceneStats {
            value: m.value + lambda_cos * (1.0 - c.value),
            mse: m.value,
            cos: c.value,
        },
        grad_odd: combine(m.grad_x, c.grad_x),
        grad_even: combine(m.grad_y, c.grad_y),
    }
}

pub(crate) struct CycleSample {
    pub stats: CycleStats,
    /// Gradients w.r.t. `[input_odd, input_even, recon_odd, recon_even]`.
    pub grads: Option<[Vec<f64>; 4]>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn cycle_sample(
    input_odd: &[f64],
    input_even: &[f64],
    recon_odd: &[f64],
    recon_even: &[f64],
    h: usize,
    w: usize,
    lambda_ssim: f64,
    ssim_cfg: &SsimConfig,
    want_grad: bool,
) -> CycleSample {
    let mo = kernels::mse(recon_odd, input_odd, want_grad);
    let me = kernels::mse(recon_even, input_even, want_grad);
    let so = kernels::ssim(recon_odd, input_odd, h, w, ssim_cfg, want_grad);
    let se = kernels::ssim(recon_even, input_even, h, w, ssim_cfg, want_grad);
    let stats = CycleStats {
        value: mo.value + me.value + lambda_ssim * (2.0 - so.value - se.value),
        mse_odd: mo.value,
        mse_even: me.value,
        ssim_odd: so.value,
        ssim_even: se.value,
    };
    let grads = want_grad.then(|| {
        let mix = |m: &Option<Vec<f64>>, s: &Option<Vec<f64>>| -> Vec<f64> {
            let (m, s) = (m.as_ref().unwrap(), s.as_ref().unwrap());
            m.iter().zip(s).map(|(a, b)| a - lambda_ssim * b).collect()
        };
        [
            mix(&mo.grad_y, &so.grad_y),
            mix(&me.grad_y, &se.grad_y),
            mix(&mo.grad_x, &so.grad_x),
            mix(&me.grad_x, &se.grad_x),
        ]
    });
    CycleSample { stats, grads }
}

pub(crate) struct AlignSample {
    pub stats: AlignStats,
    /// Gradients w.r.t. `[translated, target]`.
    pub grads: Option<[Vec<f64>; 2]>,
}

pub(crate) fn align_sample(
    translated: &[f64],
    target: &[f64],
    h: usize,
    w: usize,
    lambda_ncc: f64,
    lambda_grad: f64,
    want_grad: bool,
) -> AlignSample {
    let m = kernels::mse(translated, target, want_grad);
    let n = kernels::ncc(translated, target, want_grad);
    let g = kernels::gradient_l1(translated, target, h, w, want_grad);
    let ncc_term = match &n {
        Some(n) => lambda_ncc * (1.0 - n.value),
        None => {
            log::warn!("alignment NCC undefined for a constant image; term contributes 0");
            0.0
        }
    };
    let stats = AlignStats {
        value: m.value + ncc_term + lambda_grad * g.value,
        mse: m.value,
        ncc: n.as_ref().map(|n| n.value),
        grad: g.value,
    };
    let grads = want_grad.then(|| {
        let build = |gm: &Option<Vec<f64>>, gn: Option<&Vec<f64>>, gg: &Option<Vec<f64>>| -> Vec<f64> {
            let (gm, gg) = (gm.as_ref().unwrap(), gg.as_ref().unwrap());
            (0..gm.len())
                .map(|i| gm[i] - gn.map_or(0.0, |v| lambda_ncc * v[i]) + lambda_grad * gg[i])
                .collect()
        };
        [
            build(&m.grad_x, n.as_ref().and_then(|n| n.grad_x.as_ref()), &g.grad_x),
            build(&m.grad_y, n.as_ref().and_then(|n| n.grad_y.as_ref()), &g.grad_y),
        ]
    });
    AlignSample { stats, grads }
}

/// Scene loss between two maps of any equal shape (one sample).
pub fn scene_loss(s_odd: &[f64], s_even: &[f64], lambda_cos: f64) -> SceneStats {
    scene_sample(s_odd, s_even, lambda_cos, false).stats
}

pub fn cycle_loss(
    input_odd: &Image,
    input_even: &Image,
    recon_odd: &Image,
    recon_even: &Image,
    lambda_ssim: f64,
) -> CycleStats {
    let (h, w) = input_odd.dims();
    cycle_sample(
        input_odd.data(),
        input_even.data(),
        recon_odd.data(),
        recon_even.data(),
        h,
        w,
        lambda_ssim,
        &SsimConfig::default(),
        false,
    )
    .stats
}

pub fn align_loss(translated: &Image, target: &Image, lambda_ncc: f64, lambda_grad: f64) -> AlignStats {
    let (h, w) = target.dims();
    align_sample(translated.data(), target.data(), h, w, lambda_ncc, lambda_grad, false).stats
}

/// Differentiable SSIM of two images (value only).
pub fn ssim(x: &Image, y: &Image) -> f64 {
    let (h, w) = x.dims();
    kernels::ssim(x.data(), y.data(), h, w, &SsimConfig::default(), false).value
}
