//! Raster figures: box plots and magenta/green registration overlays.
//!
//! Figures carry no text; the JSON written beside them names the methods in
//! box order with their colours.

use std::io::Cursor;
use std::path::Path;

use anyhow::{Context, Result};
use image::{ImageFormat, Rgb, RgbImage};
use serde::Serialize;

use sasreg::fsutil;
use sasreg::Image;

/// Tukey box: quartiles by linear interpolation, whiskers at the most
/// extreme data within 1.5 IQR.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoxStats {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outliers: Vec<f64>,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl BoxStats {
    /// `None` without finite values.
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let fence = 1.5 * (q3 - q1);
        let inside = |x: &&f64| **x >= q1 - fence && **x <= q3 + fence;
        let whisker_lo = *v.iter().find(inside).unwrap_or(&q1);
        let whisker_hi = *v.iter().rev().find(inside).unwrap_or(&q3);
        let outliers = v.iter().copied().filter(|x| !inside(&x)).collect();
        Some(Self {
            n: v.len(),
            q1,
            median,
            q3,
            whisker_lo,
            whisker_hi,
            outliers,
        })
    }
}

pub const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

pub fn palette_hex(i: usize) -> String {
    let [r, g, b] = PALETTE[i % PALETTE.len()];
    format!("#{r:02x}{g:02x}{b:02x}")
}

const BOX_W: u32 = 60;
const GAP: u32 = 40;
const PLOT_H: u32 = 360;
const MARGIN: u32 = 30;

struct Canvas {
    img: RgbImage,
}

impl Canvas {
    fn new(w: u32, h: u32) -> Self {
        Self {
            img: RgbImage::from_pixel(w, h, Rgb([255, 255, 255])),
        }
    }

    fn rect(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, c: [u8; 3]) {
        let (w, h) = self.img.dimensions();
        for y in y0.min(y1)..=y0.max(y1).min(h - 1) {
            for x in x0.min(x1)..=x0.max(x1).min(w - 1) {
                self.img.put_pixel(x, y, Rgb(c));
            }
        }
    }

    fn hline(&mut self, x0: u32, x1: u32, y: u32, c: [u8; 3]) {
        self.rect(x0, y, x1, y, c);
    }

    fn vline(&mut self, x: u32, y0: u32, y1: u32, c: [u8; 3]) {
        self.rect(x, y0, x, y1, c);
    }

    fn outline(&mut self, x0: u32, y0: u32, x1: u32, y1: u32, c: [u8; 3]) {
        self.hline(x0, x1, y0, c);
        self.hline(x0, x1, y1, c);
        self.vline(x0, y0, y1, c);
        self.vline(x1, y0, y1, c);
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

/// One box per series, left to right, on a shared y axis with light grid
/// lines at round values. Empty series leave an empty slot.
pub fn box_plot(series: &[Option<BoxStats>]) -> RgbImage {
    let n = series.len().max(1) as u32;
    let width = 2 * MARGIN + n * BOX_W + (n + 1) * GAP;
    let height = PLOT_H + 2 * MARGIN;
    let mut c = Canvas::new(width, height);

    let present = series.iter().flatten();
    let lo = present
        .clone()
        .map(|b| b.outliers.iter().copied().fold(b.whisker_lo, f64::min))
        .fold(f64::INFINITY, f64::min);
    let hi = present
        .map(|b| b.outliers.iter().copied().fold(b.whisker_hi, f64::max))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let y_of =
        |v: f64| -> u32 { MARGIN + ((hi - v) / (hi - lo) * PLOT_H as f64).round().clamp(0.0, PLOT_H as f64) as u32 };

    let grid = [225, 225, 225];
    let step = nice_step(hi - lo);
    let mut t = (lo / step).ceil() * step;
    while t <= hi {
        c.hline(MARGIN, width - MARGIN, y_of(t), grid);
        t += step;
    }
    let axis = [0, 0, 0];
    c.vline(MARGIN, MARGIN, MARGIN + PLOT_H, axis);
    c.hline(MARGIN, width - MARGIN, MARGIN + PLOT_H, axis);

    for (i, b) in series.iter().enumerate() {
        let Some(b) = b else { continue };
        let colour = PALETTE[i % PALETTE.len()];
        let x0 = MARGIN + GAP + i as u32 * (BOX_W + GAP);
        let x1 = x0 + BOX_W;
        let mid = x0 + BOX_W / 2;
        c.vline(mid, y_of(b.whisker_hi), y_of(b.q3), axis);
        c.vline(mid, y_of(b.q1), y_of(b.whisker_lo), axis);
        c.hline(x0 + BOX_W / 4, x1 - BOX_W / 4, y_of(b.whisker_hi), axis);
        c.hline(x0 + BOX_W / 4, x1 - BOX_W / 4, y_of(b.whisker_lo), axis);
        // degenerate boxes still show their colour
        let (top, bottom) = (y_of(b.q3), y_of(b.q1));
        let (top, bottom) = if bottom - top < 8 {
            let mid = (top + bottom) / 2;
            (mid.saturating_sub(4), mid + 4)
        } else {
            (top, bottom)
        };
        c.rect(x0, top, x1, bottom, colour);
        c.outline(x0, top, x1, bottom, axis);
        let ym = y_of(b.median);
        c.rect(x0, ym.saturating_sub(1), x1, ym + 1, axis);
        for &o in &b.outliers {
            let y = y_of(o);
            c.outline(mid - 2, y.saturating_sub(2), mid + 2, y + 2, axis);
        }
    }
    c.img
}

/// Odd lines in magenta, even lines in green: aligned structure adds up to
/// white, misalignment shows as coloured fringes.
pub fn overlay(odd: &Image, even: &Image) -> RgbImage {
    let (h, w) = odd.dims();
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let m = byte(odd.get(y as usize, x as usize));
        let g = byte(even.get(y as usize, x as usize));
        Rgb([m, g, m])
    })
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut bytes = Cursor::new(Vec::new());
    img.write_to(&mut bytes, ImageFormat::Png).context("encoding PNG")?;
    fsutil::write_atomic(path, bytes.get_ref()).with_context(|| format!("writing {}", path.display()))
}
