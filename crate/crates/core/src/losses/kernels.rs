//! Similarity measures on flat `f64` buffers with analytic gradients.
//!
//! Every kernel returns its value and, when asked, the gradient with respect
//! to both arguments. Metrics call the same functions without gradients.

/// Value of a two-argument measure plus optional gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Measured {
    pub value: f64,
    pub grad_x: Option<Vec<f64>>,
    pub grad_y: Option<Vec<f64>>,
}

impl Measured {
    fn value_only(value: f64) -> Self {
        Self {
            value,
            grad_x: None,
            grad_y: None,
        }
    }
}

fn check_len(x: &[f64], y: &[f64]) {
    assert_eq!(x.len(), y.len(), "operands differ in length");
    assert!(!x.is_empty(), "empty operands");
}

/// Mean squared error.
pub fn mse(x: &[f64], y: &[f64], want_grad: bool) -> Measured {
    check_len(x, y);
    let n = x.len() as f64;
    let value = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    if !want_grad {
        return Measured::value_only(value);
    }
    let gx: Vec<f64> = x.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / n).collect();
    let gy = gx.iter().map(|g| -g).collect();
    Measured {
        value,
        grad_x: Some(gx),
        grad_y: Some(gy),
    }
}

/// Cosine similarity of the flattened buffers. Two all-zero buffers are
/// defined to have similarity 1; one all-zero buffer gives 0. Both
/// conventions have zero gradient.
pub fn cosine(x: &[f64], y: &[f64], want_grad: bool) -> Measured {
    check_len(x, y);
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let zero_grads = |value: f64| Measured {
        value,
        grad_x: want_grad.then(|| vec![0.0; x.len()]),
        grad_y: want_grad.then(|| vec![0.0; y.len()]),
    };
    match (nx == 0.0, ny == 0.0) {
        (true, true) => return zero_grads(1.0),
        (true, false) | (false, true) => return zero_grads(0.0),
        _ => {}
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    // identical inputs get exactly 1 so identical maps give exactly zero loss
    let c = if x == y {
        1.0
    } else {
        (dot / (nx * ny)).clamp(-1.0, 1.0)
    };
    if !want_grad {
        return Measured::value_only(c);
    }
    let inv = 1.0 / (nx * ny);
    let gx = x.iter().zip(y).map(|(a, b)| b * inv - c * a / (nx * nx)).collect();
    let gy = x.iter().zip(y).map(|(a, b)| a * inv - c * b / (ny * ny)).collect();
    Measured {
        value: c,
        grad_x: Some(gx),
        grad_y: Some(gy),
    }
}

/// Centred sum of squares at or below `NCC_DEGENERATE_VARIANCE * n` marks
/// an input as constant.
pub const NCC_DEGENERATE_VARIANCE: f64 = 1e-14;

/// Global zero-mean normalised cross-correlation. `None` if either input is
/// constant.
pub fn ncc(x: &[f64], y: &[f64], want_grad: bool) -> Option<Measured> {
    check_len(x, y);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= NCC_DEGENERATE_VARIANCE * n || syy <= NCC_DEGENERATE_VARIANCE * n {
        return None;
    }
    let (nx, ny) = (sxx.sqrt(), syy.sqrt());
    let r = if x == y {
        1.0
    } else {
        (sxy / (nx * ny)).clamp(-1.0, 1.0)
    };
    if !want_grad {
        return Some(Measured::value_only(r));
    }
    // centred vectors are orthogonal to the constant direction, so the
    // derivative through the means vanishes
    let inv = 1.0 / (nx * ny);
    let gx = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my) * inv - r * (a - mx) / sxx)
        .collect();
    let gy = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * inv - r * (b - my) / syy)
        .collect();
    Some(Measured {
        value: r,
        grad_x: Some(gx),
        grad_y: Some(gy),
    })
}

/// Gaussian-window SSIM parameters on unit dynamic range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    /// Window actually used on an `h x w` image: the configured size, shrunk
    /// to the largest odd size that fits.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        let mut k = self.window.min(h).min(w);
        if k.is_multiple_of(2) {
            k -= 1;
        }
        k.max(1)
    }

    pub fn kernel(&self, size: usize) -> Vec<f64> {
        let r = (size / 2) as f64;
        let mut k: Vec<f64> = (0..size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = k.iter().sum();
        k.iter_mut().for_each(|v| *v /= s);
        k
    }
}

/// Separable valid-mode filtering with a 1D kernel along both axes.
struct ValidFilter {
    k: Vec<f64>,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ValidFilter {
    fn new(k: Vec<f64>, h: usize, w: usize) -> Self {
        let n = k.len();
        Self {
            oh: h + 1 - n,
            ow: w + 1 - n,
            k,
            h,
            w,
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.k.len();
        let mut rows = vec![0.0; self.h * self.ow];
        for i in 0..self.h {
            let src = &x[i * self.w..(i + 1) * self.w];
            for j in 0..self.ow {
                rows[i * self.ow + j] = self.k.iter().zip(&src[j..j + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; self.oh * self.ow];
        for i in 0..self.oh {
            for (t, kv) in self.k.iter().enumerate() {
                let src = &rows[(i + t) * self.ow..(i + t + 1) * self.ow];
                for (o, s) in out[i * self.ow..(i + 1) * self.ow].iter_mut().zip(src) {
                    *o += kv * s;
                }
            }
        }
        out
    }

    fn adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut rows = vec![0.0; self.h * self.ow];
        for i in 0..self.oh {
            for (t, kv) in self.k.iter().enumerate() {
                let dst = &mut rows[(i + t) * self.ow..(i + t + 1) * self.ow];
                for (d, s) in dst.iter_mut().zip(&g[i * self.ow..(i + 1) * self.ow]) {
                    *d += kv * s;
                }
            }
        }
        let mut out = vec![0.0; self.h * self.w];
        for i in 0..self.h {
            for j in 0..self.ow {
                let r = rows[i * self.ow + j];
                for (t, kv) in self.k.iter().enumerate() {
                    out[i * self.w + j + t] += kv * r;
                }
            }
        }
        out
    }
}

/// Mean SSIM over valid window positions of two `h x w` images.
pub fn ssim(x: &[f64], y: &[f64], h: usize, w: usize, cfg: &SsimConfig, want_grad: bool) -> Measured {
    check_len(x, y);
    assert_eq!(x.len(), h * w, "buffer does not match {h}x{w}");
    let size = cfg.effective_window(h, w);
    let f = ValidFilter::new(cfg.kernel(size), h, w);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let (mx, my) = (f.apply(x), f.apply(y));
    let (m2x, m2y, mxy) = (f.apply(&xx), f.apply(&yy), f.apply(&xy));
    let p = mx.len();
    let mut total = 0.0;
    // d S / d (filtered x), d S / d (filtered x^2), d S / d (filtered xy), and y counterparts
    let mut d1x = vec![0.0; if want_grad { p } else { 0 }];
    let mut d1y = d1x.clone();
    let mut d2x = d1x.clone();
    let mut d2y = d1x.clone();
    let mut dxy = d1x.clone();
    for q in 0..p {
        let (ux, uy) = (mx[q], my[q]);
        let vx = m2x[q] - ux * ux;
        let vy = m2y[q] - uy * uy;
        let cxy = mxy[q] - ux * uy;
        let a1 = 2.0 * ux * uy + cfg.c1;
        let a2 = 2.0 * cxy + cfg.c2;
        let b1 = ux * ux + uy * uy + cfg.c1;
        let b2 = vx + vy + cfg.c2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if want_grad {
            let ds_dvar = -s / b2;
            let ds_dcov = 2.0 * a1 / (b1 * b2);
            let ds_dux = 2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1;
            let ds_duy = 2.0 * ux * a2 / (b1 * b2) - s * 2.0 * uy / b1;
            d1x[q] = ds_dux - 2.0 * ux * ds_dvar - uy * ds_dcov;
            d1y[q] = ds_duy - 2.0 * uy * ds_dvar - ux * ds_dcov;
            d2x[q] = ds_dvar;
            d2y[q] = ds_dvar;
            dxy[q] = ds_dcov;
        }
    }
    let value = total / p as f64;
    if !want_grad {
        return Measured::value_only(value);
    }
    let inv_p = 1.0 / p as f64;
    let (a_x, b_x, a_y, b_y, c) = (
        f.adjoint(&d1x),
        f.adjoint(&d2x),
        f.adjoint(&d1y),
        f.adjoint(&d2y),
        f.adjoint(&dxy),
    );
    let gx = (0..x.len())
        .map(|i| (a_x[i] + 2.0 * x[i] * b_x[i] + y[i] * c[i]) * inv_p)
        .collect();
    let gy = (0..y.len())
        .map(|i| (a_y[i] + 2.0 * y[i] * b_y[i] + x[i] * c[i]) * inv_p)
        .collect();
    Measured {
        value,
        grad_x: Some(gx),
        grad_y: Some(gy),
    }
}

/// L1 distance between forward-difference gradients:
/// `mean|dx(x) - dx(y)| + mean|dy(x) - dy(y)|`, each mean over its valid
/// region. Needs `h, w >= 2`.
pub fn gradient_l1(x: &[f64], y: &[f64], h: usize, w: usize, want_grad: bool) -> Measured {
    check_len(x, y);
    assert_eq!(x.len(), h * w, "buffer does not match {h}x{w}");
    assert!(h >= 2 && w >= 2, "gradient matching needs at least 2x2");
    let nx = (h * (w - 1)) as f64;
    let ny = ((h - 1) * w) as f64;
    let mut gx = vec![0.0; if want_grad { x.len() } else { 0 }];
    let (mut sx, mut sy) = (0.0, 0.0);
    for i in 0..h {
        for j in 0..w {
            let at = i * w + j;
            if j + 1 < w {
                let d = (x[at + 1] - x[at]) - (y[at + 1] - y[at]);
                sx += d.abs();
                if want_grad {
                    let s = sign(d) / nx;
                    gx[at + 1] += s;
                    gx[at] -= s;
                }
            }
            if i + 1 < h {
                let d = (x[at + w] - x[at]) - (y[at + w] - y[at]);
                sy += d.abs();
                if want_grad {
                    let s = sign(d) / ny;
                    gx[at + w] += s;
                    gx[at] -= s;
                }
            }
        }
    }
    let value = sx / nx + sy / ny;
    if !want_grad {
        return Measured::value_only(value);
    }
    let gy = gx.iter().map(|g| -g).collect();
    Measured {
        value,
        grad_x: Some(gx),
        grad_y: Some(gy),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
