use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Frame;
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Rotation drawn uniformly from `[-max, max]` degrees; 0 disables.
    pub max_rotation_deg: f64,
    /// Intensity scale drawn uniformly from `[lo, hi]`; `None` disables.
    pub intensity_scale: Option<(f64, f64)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_horizontal: true,
            flip_vertical: true,
            max_rotation_deg: 10.0,
            intensity_scale: Some((0.9, 1.1)),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flip_horizontal: false,
            flip_vertical: false,
            max_rotation_deg: 0.0,
            intensity_scale: None,
        }
    }
}

/// One realisation of the random augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub rotation_deg: f64,
    pub scale: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self {
        flip_horizontal: false,
        flip_vertical: false,
        rotation_deg: 0.0,
        scale: 1.0,
    };
}

pub fn sample_augmentation(seed: u64, config: &AugmentConfig) -> AugmentDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every variable is drawn even when disabled so toggling one option does
    // not reshuffle the others
    let fh = rng.random_bool(0.5);
    let fv = rng.random_bool(0.5);
    let u_rot: f64 = rng.random_range(-1.0..=1.0);
    let u_scale: f64 = rng.random();
    AugmentDraw {
        flip_horizontal: config.flip_horizontal && fh,
        flip_vertical: config.flip_vertical && fv,
        rotation_deg: u_rot * config.max_rotation_deg,
        scale: config.intensity_scale.map_or(1.0, |(lo, hi)| lo + (hi - lo) * u_scale),
    }
}

/// Applies `draw` to each half separately and re-interleaves, so both scan
/// directions undergo the identical geometric transform and stay paired.
pub fn apply_augmentation(frame: &Frame, draw: &AugmentDraw) -> Frame {
    if *draw == AugmentDraw::IDENTITY {
        return frame.clone();
    }
    let odd = transform(&frame.odd_half, draw);
    let even = transform(&frame.even_half, draw);
    Frame::from_halves(frame.frame_id.clone(), odd, even, frame.source)
        .expect("transformed halves share a shape")
        .with_ground_truth(frame.ground_truth.clone())
}

pub fn augment(frame: &Frame, seed: u64, config: &AugmentConfig) -> Frame {
    apply_augmentation(frame, &sample_augmentation(seed, config))
}

fn transform(img: &Image, draw: &AugmentDraw) -> Image {
    let mut out = img.clone();
    if draw.flip_horizontal {
        out = out.flip_horizontal();
    }
    if draw.flip_vertical {
        out = out.flip_vertical();
    }
    if draw.rotation_deg != 0.0 {
        out = rotate(&out, draw.rotation_deg);
    }
    if draw.scale != 1.0 {
        let s = draw.scale;
        out = out.map(|v| (s * v).clamp(0.0, 1.0));
    }
    out
}

/// Rotation about the image centre, bilinear, edge-replicated.
fn rotate(img: &Image, degrees: f64) -> Image {
    let (h, w) = img.dims();
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    Image::from_fn(h, w, |i, j| {
        let (dy, dx) = (i as f64 - ci, j as f64 - cj);
        let y = ci + cos * dy + sin * dx;
        let x = cj - sin * dy + cos * dx;
        bilinear(img, y, x)
    })
}

fn bilinear(img: &Image, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (ty, tx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as isize, x0 as isize);
    let a = img.get_clamped(y0, x0);
    let b = img.get_clamped(y0, x0 + 1);
    let c = img.get_clamped(y0 + 1, x0);
    let d = img.get_clamped(y0 + 1, x0 + 1);
    (1.0 - ty) * ((1.0 - tx) * a + tx * b) + ty * ((1.0 - tx) * c + tx * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FrameSource;
    use proptest::prelude::*;

    fn frame(seed: u64) -> Frame {
        let p = crate::scan_sim::generate_phantom(32, 32, seed, 2).unwrap();
        Frame::new("x", p.intensity, FrameSource::Synthetic).unwrap()
    }

    #[test]
    fn disabled_is_identity() {
        let f = frame(1);
        for seed in 0..10 {
            assert_eq!(augment(&f, seed, &AugmentConfig::none()), f);
        }
    }

    #[test]
    fn scale_only_draw() {
        let f = frame(2);
        let half = Frame::new("x", f.interleaved.map(|v| v * 0.5), FrameSource::Synthetic).unwrap();
        let draw = AugmentDraw {
            scale: 1.1,
            ..AugmentDraw::IDENTITY
        };
        let out = apply_augmentation(&half, &draw);
        for (o, i) in out.interleaved.data().iter().zip(half.interleaved.data()) {
            assert_eq!(*o, 1.1 * i);
        }
    }

    #[test]
    fn deterministic() {
        let f = frame(3);
        let c = AugmentConfig::default();
        assert_eq!(augment(&f, 5, &c), augment(&f, 5, &c));
    }

    #[test]
    fn draws_respect_ranges() {
        let c = AugmentConfig::default();
        for seed in 0..200 {
            let d = sample_augmentation(seed, &c);
            assert!(d.rotation_deg.abs() <= 10.0);
            assert!((0.9..=1.1).contains(&d.scale));
        }
    }

    #[test]
    fn flip_applies_to_halves_not_interleave() {
        let f = frame(4);
        let draw = AugmentDraw {
            flip_horizontal: true,
            ..AugmentDraw::IDENTITY
        };
        let out = apply_augmentation(&f, &draw);
        assert_eq!(out.odd_half, f.odd_half.flip_horizontal());
        assert_eq!(out.even_half, f.even_half.flip_horizontal());
    }

    #[test]
    fn zero_rotation_is_exact() {
        let f = frame(5);
        assert_eq!(rotate(&f.odd_half, 0.0), f.odd_half);
        let constant = Image::filled(8, 6, 0.4);
        assert!(rotate(&constant, 7.0).max_abs_diff(&constant) < 1e-15);
    }

    proptest! {
        #[test]
        fn preserves_range_and_shape(seed in any::<u64>(), fseed in 0u64..20) {
            let f = frame(fseed);
            let out = augment(&f, seed, &AugmentConfig::default());
            prop_assert_eq!(out.interleaved.dims(), f.interleaved.dims());
            prop_assert!(out.interleaved.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
