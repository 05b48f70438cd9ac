//! Synthetic bidirectional raster scans with known ground truth.
//!
//! The acquisition model is `I = clip(gain * blur(shift(S)) + offset + noise)`:
//! a sub-pixel column shift (scanner hysteresis), a Gaussian system response,
//! an affine intensity response and additive Gaussian noise. The odd-line
//! domain fills the 0-based even columns of an interleaved frame, the
//! even-line domain the 0-based odd columns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::Image;
use crate::seed;

pub const MIN_PHANTOM_DIM: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("phantom dimensions {height}x{width} are below the minimum of {min}x{min}")]
    DimensionTooSmall { height: usize, width: usize, min: usize },
    #[error("vessel count must be at least 1")]
    NoVessels,
    #[error("invalid acquisition parameters: {0}")]
    InvalidParams(String),
}

/// Ground-truth absorption map with vessel-like structures in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomScene {
    pub intensity: Image,
    pub seed: u64,
    pub vessel_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub gain: f64,
    pub offset: f64,
    /// Column displacement in pixels; positive moves content to the right.
    pub column_shift: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl AcquisitionParams {
    pub const IDENTITY: Self = Self {
        gain: 1.0,
        offset: 0.0,
        column_shift: 0.0,
        blur_sigma: 0.0,
        noise_sigma: 0.0,
    };

    pub fn affine(gain: f64, offset: f64) -> Self {
        Self {
            gain,
            offset,
            ..Self::IDENTITY
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let all = [
            self.gain,
            self.offset,
            self.column_shift,
            self.blur_sigma,
            self.noise_sigma,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(SimError::InvalidParams("parameters must be finite".into()));
        }
        if self.gain <= 0.0 {
            return Err(SimError::InvalidParams(format!(
                "gain must be positive, got {}",
                self.gain
            )));
        }
        if self.blur_sigma < 0.0 {
            return Err(SimError::InvalidParams(format!(
                "blur_sigma must be non-negative, got {}",
                self.blur_sigma
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(SimError::InvalidParams(format!(
                "noise_sigma must be non-negative, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Hidden variables of one simulated frame. Both directions observe the
/// same scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGroundTruth {
    pub scene: PhantomScene,
    pub params_odd: AcquisitionParams,
    pub params_even: AcquisitionParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPair {
    /// Full-width render under the odd-line (forward) acquisition.
    pub odd: Image,
    /// Full-width render under the even-line (backward) acquisition.
    pub even: Image,
    pub interleaved: Image,
}

/// Sidecar JSON written next to each synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub gain_odd: f64,
    pub offset_odd: f64,
    pub shift_odd: f64,
    pub gain_even: f64,
    pub offset_even: f64,
    pub shift_even: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub phantom_seed: Option<u64>,
    #[serde(default)]
    pub vessel_count: Option<usize>,
}

impl GroundTruthRecord {
    pub fn from_ground_truth(gt: &SimGroundTruth) -> Self {
        Self {
            gain_odd: gt.params_odd.gain,
            offset_odd: gt.params_odd.offset,
            shift_odd: gt.params_odd.column_shift,
            gain_even: gt.params_even.gain,
            offset_even: gt.params_even.offset,
            shift_even: gt.params_even.column_shift,
            blur_sigma: gt.params_odd.blur_sigma,
            noise_sigma: gt.params_odd.noise_sigma,
            seed: gt.seed,
            phantom_seed: Some(gt.scene.seed),
            vessel_count: Some(gt.scene.vessel_count),
        }
    }

    pub fn params_odd(&self) -> AcquisitionParams {
        AcquisitionParams {
            gain: self.gain_odd,
            offset: self.offset_odd,
            column_shift: self.shift_odd,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
        }
    }

    pub fn params_even(&self) -> AcquisitionParams {
        AcquisitionParams {
            gain: self.gain_even,
            offset: self.offset_even,
            column_shift: self.shift_even,
            blur_sigma: self.blur_sigma,
            noise_sigma: self.noise_sigma,
        }
    }
}

/// Vessel radius range (Gaussian cross-section sigma, pixels).
const VESSEL_SIGMA: (f64, f64) = (1.5, 3.0);
const VESSEL_AMPLITUDE: (f64, f64) = (0.55, 1.0);

/// Random smooth vessels on a dark background. Each vessel is a
/// Catmull-Rom spline through four control points entering and leaving
/// through the image border, rendered as a tube with Gaussian profile.
pub fn generate_phantom(height: usize, width: usize, seed: u64, vessel_count: usize) -> Result<PhantomScene, SimError> {
    if height < MIN_PHANTOM_DIM || width < MIN_PHANTOM_DIM {
        return Err(SimError::DimensionTooSmall {
            height,
            width,
            min: MIN_PHANTOM_DIM,
        });
    }
    if vessel_count == 0 {
        return Err(SimError::NoVessels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut intensity = Image::zeros(height, width);
    let mut dist2 = vec![f64::INFINITY; height * width];
    for _ in 0..vessel_count {
        let sigma = rng.random_range(VESSEL_SIGMA.0..VESSEL_SIGMA.1);
        let amplitude = rng.random_range(VESSEL_AMPLITUDE.0..VESSEL_AMPLITUDE.1);
        let path = vessel_path(&mut rng, height as f64, width as f64);
        dist2.fill(f64::INFINITY);
        let reach = 4.0 * sigma;
        for seg in path.windows(2) {
            splat_segment(&mut dist2, height, width, seg[0], seg[1], reach);
        }
        let inv = 1.0 / (2.0 * sigma * sigma);
        for (v, &d2) in intensity.data_mut().iter_mut().zip(&dist2) {
            if d2.is_finite() {
                *v = v.max(amplitude * (-d2 * inv).exp());
            }
        }
    }
    Ok(PhantomScene {
        intensity,
        seed,
        vessel_count,
    })
}

type Point = (f64, f64);

fn border_point(rng: &mut ChaCha8Rng, side: u32, h: f64, w: f64) -> Point {
    match side {
        0 => (0.0, rng.random_range(0.0..w)),
        1 => (h - 1.0, rng.random_range(0.0..w)),
        2 => (rng.random_range(0.0..h), 0.0),
        _ => (rng.random_range(0.0..h), w - 1.0),
    }
}

fn vessel_path(rng: &mut ChaCha8Rng, h: f64, w: f64) -> Vec<Point> {
    let side = rng.random_range(0..4u32);
    // exit through the opposite side most of the time, an adjacent one otherwise
    let exit = if rng.random_bool(0.7) { side ^ 1 } else { (side + 2) % 4 };
    let p0 = border_point(rng, side, h, w);
    let p3 = border_point(rng, exit, h, w);
    let mut interior = |t: f64| {
        let base = (p0.0 + t * (p3.0 - p0.0), p0.1 + t * (p3.1 - p0.1));
        let jitter = 0.25 * h.min(w);
        (
            (base.0 + rng.random_range(-jitter..jitter)).clamp(0.0, h - 1.0),
            (base.1 + rng.random_range(-jitter..jitter)).clamp(0.0, w - 1.0),
        )
    };
    let p1 = interior(1.0 / 3.0);
    let p2 = interior(2.0 / 3.0);
    let ctrl = [
        (2.0 * p0.0 - p1.0, 2.0 * p0.1 - p1.1),
        p0,
        p1,
        p2,
        p3,
        (2.0 * p3.0 - p2.0, 2.0 * p3.1 - p2.1),
    ];
    let mut pts = Vec::new();
    for k in 0..3 {
        let (a, b, c, d) = (ctrl[k], ctrl[k + 1], ctrl[k + 2], ctrl[k + 3]);
        let len = ((c.0 - b.0).powi(2) + (c.1 - b.1).powi(2)).sqrt();
        let steps = (len / 0.5).ceil().max(2.0) as usize;
        for s in 0..steps {
            let t = s as f64 / steps as f64;
            pts.push(catmull_rom(a, b, c, d, t));
        }
    }
    pts.push(p3);
    pts
}

fn catmull_rom(p0: Point, p1: Point, p2: Point, p3: Point, t: f64) -> Point {
    let t2 = t * t;
    let t3 = t2 * t;
    let f = |a: f64, b: f64, c: f64, d: f64| {
        0.5 * (2.0 * b + (-a + c) * t + (2.0 * a - 5.0 * b + 4.0 * c - d) * t2 + (-a + 3.0 * b - 3.0 * c + d) * t3)
    };
    (f(p0.0, p1.0, p2.0, p3.0), f(p0.1, p1.1, p2.1, p3.1))
}

fn splat_segment(dist2: &mut [f64], h: usize, w: usize, a: Point, b: Point, reach: f64) {
    let i0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
    let i1 = ((a.0.max(b.0) + reach).ceil() as usize).min(h - 1);
    let j0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
    let j1 = ((a.1.max(b.1) + reach).ceil() as usize).min(w - 1);
    if a.0.min(b.0) - reach > (h - 1) as f64 || a.1.min(b.1) - reach > (w - 1) as f64 {
        return;
    }
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    for i in i0..=i1 {
        for j in j0..=j1 {
            let (py, px) = (i as f64 - a.0, j as f64 - a.1);
            let t = if len2 > 0.0 {
                ((py * dy + px * dx) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ey, ex) = (py - t * dy, px - t * dx);
            let d2 = ey * ey + ex * ex;
            let slot = &mut dist2[i * w + j];
            if d2 < *slot {
                *slot = d2;
            }
        }
    }
}

/// Shifts every row by `shift` columns (`out[j] = in[j - shift]`) with linear
/// interpolation and edge replication.
pub fn shift_columns(img: &Image, shift: f64) -> Image {
    if shift == 0.0 {
        return img.clone();
    }
    let (h, w) = img.dims();
    let mut out = Image::zeros(h, w);
    for j in 0..w {
        let x = j as f64 - shift;
        let x0 = x.floor();
        let t = x - x0;
        let x0 = x0 as isize;
        for i in 0..h {
            let a = img.get_clamped(i as isize, x0);
            let b = img.get_clamped(i as isize, x0 + 1);
            out.set(i, j, (1.0 - t) * a + t * b);
        }
    }
    out
}

pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (h, w) = img.dims();
    let horizontal = Image::from_fn(h, w, |i, j| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * img.get_clamped(i as isize, j as isize + t as isize - r))
            .sum()
    });
    Image::from_fn(h, w, |i, j| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * horizontal.get_clamped(i as isize + t as isize - r, j as isize))
            .sum()
    })
}

/// One scan-direction acquisition of `scene`: shift, blur, affine response,
/// noise, clip to `[0, 1]`.
pub fn render(scene: &PhantomScene, params: &AcquisitionParams, noise_seed: u64) -> Result<Image, SimError> {
    params.validate()?;
    let shifted = shift_columns(&scene.intensity, params.column_shift);
    let blurred = gaussian_blur(&shifted, params.blur_sigma);
    let mut out = blurred.map(|v| params.gain * v + params.offset);
    if params.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let normal = Normal::new(0.0, params.noise_sigma).map_err(|e| SimError::InvalidParams(e.to_string()))?;
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out.clip_unit())
}

/// Noise seeds of the two directions, derived from the frame seed.
pub fn noise_seeds(frame_seed: u64) -> (u64, u64) {
    (seed::derive(frame_seed, 0x0dd), seed::derive(frame_seed, 0xe7e))
}

/// Interleaves full-width renders: even columns from `odd`, odd columns from `even`.
pub fn interleave_renders(odd: &Image, even: &Image) -> Image {
    assert_eq!(odd.dims(), even.dims(), "render dimension mismatch");
    Image::from_fn(odd.height(), odd.width(), |i, j| {
        if j % 2 == 0 {
            odd.get(i, j)
        } else {
            even.get(i, j)
        }
    })
}

pub fn simulate_pair(gt: &SimGroundTruth) -> Result<SimulatedPair, SimError> {
    let (seed_odd, seed_even) = noise_seeds(gt.seed);
    let odd = render(&gt.scene, &gt.params_odd, seed_odd)?;
    let even = render(&gt.scene, &gt.params_even, seed_even)?;
    let interleaved = interleave_renders(&odd, &even);
    Ok(SimulatedPair { odd, even, interleaved })
}

/// Analytic inverse of the even-direction acquisition followed by the
/// odd-direction one: undo gain/offset, move by the shift difference, add
/// any extra blur the odd direction has, reapply odd gain/offset.
///
/// Exact for noise-free inputs up to interpolation error and clipping. The
/// odd direction may not be sharper than the even one.
pub fn analytic_reregister(
    even: &Image,
    params_even: &AcquisitionParams,
    params_odd: &AcquisitionParams,
) -> Result<Image, SimError> {
    params_even.validate()?;
    params_odd.validate()?;
    if params_odd.blur_sigma < params_even.blur_sigma {
        return Err(SimError::InvalidParams(format!(
            "cannot sharpen: odd blur {} < even blur {}",
            params_odd.blur_sigma, params_even.blur_sigma
        )));
    }
    let structure = even.map(|v| (v - params_even.offset) / params_even.gain);
    let moved = shift_columns(&structure, params_odd.column_shift - params_even.column_shift);
    let extra_blur = (params_odd.blur_sigma.powi(2) - params_even.blur_sigma.powi(2)).sqrt();
    let blurred = gaussian_blur(&moved, extra_blur);
    Ok(blurred.map(|v| params_odd.gain * v + params_odd.offset).clip_unit())
}

/// A value that is either fixed or drawn uniformly per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamRange {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl ParamRange {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ParamRange::Fixed(v) => v,
            ParamRange::Uniform { lo, hi } if hi > lo => rng.random_range(lo..=hi),
            ParamRange::Uniform { lo, .. } => lo,
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ParamRange::Fixed(v) => (v, v),
            ParamRange::Uniform { lo, hi } => (lo, hi),
        }
    }
}

impl std::str::FromStr for ParamRange {
    type Err = String;

    /// `"1.2"` or `"0.7..1.3"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?}: {e}"));
        match s.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (parse(lo)?, parse(hi)?);
                if hi < lo {
                    return Err(format!("empty range {s:?}"));
                }
                Ok(ParamRange::Uniform { lo, hi })
            }
            None => Ok(ParamRange::Fixed(parse(s)?)),
        }
    }
}

/// Recipe for a synthetic dataset. Frame `i` is a pure function of the plan
/// and `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub height: usize,
    pub width: usize,
    pub vessel_count: usize,
    pub seed: u64,
    pub gain_odd: ParamRange,
    pub gain_even: ParamRange,
    pub offset_odd: ParamRange,
    pub offset_even: ParamRange,
    pub shift_odd: ParamRange,
    pub shift_even: ParamRange,
    pub blur_sigma: ParamRange,
    pub noise_sigma: ParamRange,
    /// All frames observe one phantom (a time series of the same anatomy).
    pub same_phantom: bool,
}

impl SimulationPlan {
    /// The synthetic benchmark distribution: 128x64 frames, gains in
    /// [0.7, 1.3], offsets in [-0.1, 0.1], even-line shifts in [-3, 3] px,
    /// noise sigma 0.01.
    pub fn desk_scale(seed: u64) -> Self {
        Self {
            height: 128,
            width: 64,
            vessel_count: 6,
            seed,
            gain_odd: ParamRange::Uniform { lo: 0.7, hi: 1.3 },
            gain_even: ParamRange::Uniform { lo: 0.7, hi: 1.3 },
            offset_odd: ParamRange::Uniform { lo: -0.1, hi: 0.1 },
            offset_even: ParamRange::Uniform { lo: -0.1, hi: 0.1 },
            shift_odd: ParamRange::Fixed(0.0),
            shift_even: ParamRange::Uniform { lo: -3.0, hi: 3.0 },
            blur_sigma: ParamRange::Fixed(0.0),
            noise_sigma: ParamRange::Fixed(0.01),
            same_phantom: false,
        }
    }

    pub fn identity(height: usize, width: usize, seed: u64) -> Self {
        Self {
            height,
            width,
            vessel_count: 5,
            seed,
            gain_odd: ParamRange::Fixed(1.0),
            gain_even: ParamRange::Fixed(1.0),
            offset_odd: ParamRange::Fixed(0.0),
            offset_even: ParamRange::Fixed(0.0),
            shift_odd: ParamRange::Fixed(0.0),
            shift_even: ParamRange::Fixed(0.0),
            blur_sigma: ParamRange::Fixed(0.0),
            noise_sigma: ParamRange::Fixed(0.0),
            same_phantom: false,
        }
    }

    pub fn frame_seed(&self, index: usize) -> u64 {
        seed::derive(self.seed, index as u64)
    }

    pub fn ground_truth(&self, index: usize) -> Result<SimGroundTruth, SimError> {
        let frame_seed = self.frame_seed(index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(frame_seed, 0xacc));
        let phantom_seed = if self.same_phantom {
            seed::derive(self.seed, u64::MAX)
        } else {
            seed::derive(frame_seed, 0x5ce)
        };
        let scene = generate_phantom(self.height, self.width, phantom_seed, self.vessel_count)?;
        let blur_sigma = self.blur_sigma.sample(&mut rng);
        let noise_sigma = self.noise_sigma.sample(&mut rng);
        let params_odd = AcquisitionParams {
            gain: self.gain_odd.sample(&mut rng),
            offset: self.offset_odd.sample(&mut rng),
            column_shift: self.shift_odd.sample(&mut rng),
            blur_sigma,
            noise_sigma,
        };
        let params_even = AcquisitionParams {
            gain: self.gain_even.sample(&mut rng),
            offset: self.offset_even.sample(&mut rng),
            column_shift: self.shift_even.sample(&mut rng),
            blur_sigma,
            noise_sigma,
        };
        params_odd.validate()?;
        params_even.validate()?;
        Ok(SimGroundTruth {
            scene,
            params_odd,
            params_even,
            seed: frame_seed,
        })
    }

    pub fn frame(&self, index: usize) -> Result<(SimGroundTruth, SimulatedPair), SimError> {
        let gt = self.ground_truth(index)?;
        let pair = simulate_pair(&gt)?;
        Ok((gt, pair))
    }
}
