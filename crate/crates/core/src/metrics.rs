//! Evaluation metrics and per-dataset reports.
//!
//! SSIM and NCC reuse the loss kernels without gradients. Aggregate standard
//! deviations use the sample (n - 1) convention; a single value has std 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{deinterleave, interleave, Frame};
use crate::image::Image;
use crate::losses::kernels::{self, SsimConfig};
use crate::model::{ModelError, SasNet};
use crate::tensor::Real;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("image shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("NCC is undefined for a constant image")]
    ConstantImage,
    #[error("width {0} is odd")]
    OddWidth(usize),
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("{0} predictions for {1} frames")]
    CountMismatch(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn same_shape(x: &Image, y: &Image) -> Result<(), MetricError> {
    if x.dims() != y.dims() {
        return Err(MetricError::ShapeMismatch(x.dims(), y.dims()));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)`; identical images give `+inf`.
pub fn psnr(x: &Image, y: &Image, peak: f64) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    let mse = kernels::mse(x.data(), y.data(), false).value;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub fn ncc(x: &Image, y: &Image) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    kernels::ncc(x.data(), y.data(), false)
        .map(|m| m.value)
        .ok_or(MetricError::ConstantImage)
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64, MetricError> {
    same_shape(x, y)?;
    let (h, w) = x.dims();
    Ok(kernels::ssim(x.data(), y.data(), h, w, &SsimConfig::default(), false).value)
}

pub const VCI_TAU: f64 = 0.05;
pub const VCI_TAU_MAX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vci {
    /// Clamped to `[0, 1]`.
    pub value: f64,
    /// Before clamping.
    pub raw: f64,
}

/// Vascular continuity of an interleaved frame.
///
/// At every interior column boundary `(j, j + 1)` the edge response is the
/// horizontal difference smoothed vertically with `[1, 2, 1]`, divided by
/// its maximum gain 4 so it lies in `[0, 1]`. Responses are summed where
/// either side of the boundary is a vessel pixel (`v > tau`), normalised by
/// the vessel pixel count and `tau_max`, and subtracted from 1. Frames
/// without vessel pixels score 1.
pub fn vci(interleaved: &Image, tau: f64, tau_max: f64) -> Result<Vci, MetricError> {
    let (h, w) = interleaved.dims();
    if w % 2 != 0 {
        return Err(MetricError::OddWidth(w));
    }
    let vessel_pixels = interleaved.data().iter().filter(|&&v| v > tau).count();
    if vessel_pixels == 0 {
        return Ok(Vci { value: 1.0, raw: 1.0 });
    }
    let diff = |i: isize, j: usize| {
        let i = i.clamp(0, h as isize - 1) as usize;
        interleaved.get(i, j + 1) - interleaved.get(i, j)
    };
    let mut energy = 0.0;
    for i in 0..h {
        for j in 0..w.saturating_sub(1) {
            if interleaved.get(i, j) > tau || interleaved.get(i, j + 1) > tau {
                let ii = i as isize;
                let e = (diff(ii - 1, j) + 2.0 * diff(ii, j) + diff(ii + 1, j)).abs() / 4.0;
                energy += e;
            }
        }
    }
    let raw = 1.0 - energy / (tau_max * vessel_pixels as f64);
    Ok(Vci {
        value: raw.clamp(0.0, 1.0),
        raw,
    })
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std, n })
    }
}

/// NCC of each consecutive pair.
pub fn interframe_ncc_values(frames: &[Image]) -> Result<Vec<f64>, MetricError> {
    if frames.len() < 2 {
        return Err(MetricError::TooFewFrames {
            needed: 2,
            got: frames.len(),
        });
    }
    frames.windows(2).map(|p| ncc(&p[0], &p[1])).collect()
}

pub fn interframe_ncc(frames: &[Image]) -> Result<Aggregate, MetricError> {
    let values = interframe_ncc_values(frames)?;
    Ok(Aggregate::of(&values).expect("at least one pair"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame_id: String,
    pub ssim: f64,
    /// `None` when the prediction is exact (infinite PSNR).
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    /// `None` when either image is constant.
    pub ncc: Option<f64>,
    pub vci_before: f64,
    pub vci_after: f64,
    pub vci_before_raw: f64,
    pub vci_after_raw: f64,
    /// Unregistered reference: the raw even half against the odd half.
    pub baseline_ssim: f64,
    pub baseline_ncc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub ssim: Option<Aggregate>,
    /// Over finite values only.
    pub psnr_db: Option<Aggregate>,
    pub psnr_infinite_count: usize,
    pub ncc: Option<Aggregate>,
    pub vci_before: Option<Aggregate>,
    pub vci_after: Option<Aggregate>,
    pub baseline_ssim: Option<Aggregate>,
    pub baseline_ncc: Option<Aggregate>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub method: String,
    pub std_convention: String,
    pub per_frame: Vec<FrameMetrics>,
    pub aggregate: AggregateMetrics,
    /// Over consecutive corrected interleaved frames.
    pub interframe_ncc: Option<Aggregate>,
}

impl AggregateMetrics {
    pub fn from_frames(per_frame: &[FrameMetrics]) -> Self {
        let col = |f: &dyn Fn(&FrameMetrics) -> Option<f64>| -> Option<Aggregate> {
            Aggregate::of(&per_frame.iter().filter_map(f).collect::<Vec<_>>())
        };
        Self {
            ssim: col(&|m| Some(m.ssim)),
            psnr_db: col(&|m| m.psnr_db),
            psnr_infinite_count: per_frame.iter().filter(|m| m.psnr_infinite).count(),
            ncc: col(&|m| m.ncc),
            vci_before: col(&|m| Some(m.vci_before)),
            vci_after: col(&|m| Some(m.vci_after)),
            baseline_ssim: col(&|m| Some(m.baseline_ssim)),
            baseline_ncc: col(&|m| m.baseline_ncc),
        }
    }
}

/// Metrics of one frame given its registered even half.
pub fn frame_metrics(frame: &Frame, registered_even: &Image) -> Result<FrameMetrics, MetricError> {
    let target = &frame.odd_half;
    same_shape(registered_even, target)?;
    let p = psnr(registered_even, target, 1.0)?;
    let corrected = interleave(target, registered_even)
        .map_err(|_| MetricError::ShapeMismatch(target.dims(), registered_even.dims()))?;
    let before = vci(&frame.interleaved, VCI_TAU, VCI_TAU_MAX)?;
    let after = vci(&corrected, VCI_TAU, VCI_TAU_MAX)?;
    Ok(FrameMetrics {
        frame_id: frame.frame_id.clone(),
        ssim: ssim(registered_even, target)?,
        psnr_db: p.is_finite().then_some(p),
        psnr_infinite: p.is_infinite(),
        ncc: ncc(registered_even, target).ok(),
        vci_before: before.value,
        vci_after: after.value,
        vci_before_raw: before.raw,
        vci_after_raw: after.raw,
        baseline_ssim: ssim(&frame.even_half, target)?,
        baseline_ncc: ncc(&frame.even_half, target).ok(),
    })
}

/// Builds a report from precomputed registered even halves.
pub fn evaluate_predictions(
    method: &str,
    frames: &[Frame],
    registered_even: &[Image],
) -> Result<MetricsReport, MetricError> {
    if frames.len() != registered_even.len() {
        return Err(MetricError::CountMismatch(registered_even.len(), frames.len()));
    }
    let per_frame = frames
        .iter()
        .zip(registered_even)
        .map(|(f, r)| frame_metrics(f, r))
        .collect::<Result<Vec<_>, _>>()?;
    let interframe = if frames.len() >= 2 {
        let corrected: Vec<Image> = frames
            .iter()
            .zip(registered_even)
            .map(|(f, r)| interleave(&f.odd_half, r).expect("shapes checked"))
            .collect();
        interframe_ncc(&corrected).ok()
    } else {
        None
    };
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method: method.to_string(),
        std_convention: "sample (n-1); 0 for a single value".to_string(),
        aggregate: AggregateMetrics::from_frames(&per_frame),
        per_frame,
        interframe_ncc: interframe,
    })
}

/// Registers every frame with `net` and scores it against its odd half.
pub fn evaluate_dataset<T: Real>(
    method: &str,
    frames: &[Frame],
    net: &SasNet<T>,
) -> Result<MetricsReport, MetricError> {
    let registered = frames
        .iter()
        .map(|f| net.register(&f.odd_half, &f.even_half))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(method, frames, &registered)
}

/// Splits an interleaved corrected frame back into halves (for reports that
/// start from written images).
pub fn halves(interleaved: &Image) -> Result<(Image, Image), MetricError> {
    deinterleave(interleaved).map_err(|_| MetricError::OddWidth(interleaved.width()))
}
