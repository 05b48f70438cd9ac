//! Forward and backward kernels for the layer operations.
//!
//! Convolutions go through im2col + gemm. Columns are rebuilt in the
//! backward pass rather than cached, which keeps activation memory at one
//! tensor per node.

use crate::tensor::{matmul, Real, Tensor};

/// Spatial padding applied before a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    None,
    /// Mirror padding that excludes the edge sample: `a b c` padded by one
    /// becomes `b | a b c | b`.
    Reflect(usize),
}

impl Padding {
    fn amount(self) -> usize {
        match self {
            Padding::None => 0,
            Padding::Reflect(p) => p,
        }
    }
}

/// Maps a padded coordinate back into `[0, len)` by reflection.
#[inline]
pub fn reflect_index(i: isize, len: usize) -> usize {
    let last = len as isize - 1;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i > last {
        i = 2 * last - i;
    }
    i.clamp(0, last) as usize
}

pub fn conv_output_len(len: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (len + 2 * pad - kernel) / stride + 1
}

struct ConvGeometry {
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeometry {
    fn new(x: [usize; 4], k: usize, stride: usize, padding: Padding) -> Self {
        let pad = padding.amount();
        assert!(
            pad == 0 || (x[2] > pad && x[3] > pad),
            "reflect padding {pad} needs spatial size > {pad}, got {}x{}",
            x[2],
            x[3]
        );
        Self {
            c_in: x[1],
            h: x[2],
            w: x[3],
            k,
            stride,
            pad,
            h_out: conv_output_len(x[2], k, stride, pad),
            w_out: conv_output_len(x[3], k, stride, pad),
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Precomputed source column for each (kx, ox) pair.
    fn column_lookup(&self) -> Vec<usize> {
        let mut lut = Vec::with_capacity(self.k * self.w_out);
        for kx in 0..self.k {
            for ox in 0..self.w_out {
                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                lut.push(reflect_index(ix, self.w));
            }
        }
        lut
    }

    fn row_lookup(&self) -> Vec<usize> {
        let mut lut = Vec::with_capacity(self.k * self.h_out);
        for ky in 0..self.k {
            for oy in 0..self.h_out {
                let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                lut.push(reflect_index(iy, self.h));
            }
        }
        lut
    }

    fn im2col<T: Real>(&self, x: &[T], cols: &mut [T], rows_lut: &[usize], cols_lut: &[usize]) {
        let (k, ho, wo) = (self.k, self.h_out, self.w_out);
        let plane = self.h * self.w;
        let mut r = 0;
        for c in 0..self.c_in {
            let src = &x[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[r * ho * wo..(r + 1) * ho * wo];
                    let cl = &cols_lut[kx * wo..(kx + 1) * wo];
                    for oy in 0..ho {
                        let iy = rows_lut[ky * ho + oy];
                        let srow = &src[iy * self.w..(iy + 1) * self.w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        for (d, &ix) in drow.iter_mut().zip(cl) {
                            *d = srow[ix];
                        }
                    }
                    r += 1;
                }
            }
        }
    }

    fn col2im<T: Real>(&self, cols: &[T], gx: &mut [T], rows_lut: &[usize], cols_lut: &[usize]) {
        let (k, ho, wo) = (self.k, self.h_out, self.w_out);
        let plane = self.h * self.w;
        let mut r = 0;
        for c in 0..self.c_in {
            let dst = &mut gx[c * plane..(c + 1) * plane];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[r * ho * wo..(r + 1) * ho * wo];
                    let cl = &cols_lut[kx * wo..(kx + 1) * wo];
                    for oy in 0..ho {
                        let iy = rows_lut[ky * ho + oy];
                        let drow = &mut dst[iy * self.w..(iy + 1) * self.w];
                        let srow = &src[oy * wo..(oy + 1) * wo];
                        for (&s, &ix) in srow.iter().zip(cl) {
                            drow[ix] += s;
                        }
                    }
                    r += 1;
                }
            }
        }
    }
}

/// 2-D convolution (cross-correlation). `weight` is `[c_out, c_in, k, k]`,
/// `bias` holds `c_out` values.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Tensor<T> {
    let [n, c_in, _, _] = x.shape();
    let [c_out, wc_in, k, k2] = weight.shape();
    assert_eq!(c_in, wc_in, "conv input channels {c_in} != weight channels {wc_in}");
    assert_eq!(k, k2, "only square kernels are supported");
    let geo = ConvGeometry::new(x.shape(), k, stride, padding);
    let mut y = Tensor::zeros([n, c_out, geo.h_out, geo.w_out]);
    let (rows_lut, cols_lut) = (geo.row_lookup(), geo.column_lookup());
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); geo.rows() * geo.cols()]
    };
    for b in 0..n {
        let xb = x.item(b);
        let src: &[T] = if geo.is_pointwise() {
            xb
        } else {
            geo.im2col(xb, &mut cols, &rows_lut, &cols_lut);
            &cols
        };
        let yb = y.item_mut(b);
        matmul(
            c_out,
            geo.rows(),
            geo.cols(),
            weight.data(),
            false,
            src,
            false,
            T::zero(),
            yb,
        );
        if let Some(bias) = bias {
            let plane = geo.cols();
            for (co, &bv) in bias.data().iter().enumerate() {
                for v in &mut yb[co * plane..(co + 1) * plane] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
    need_input_grad: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, _, _, _] = x.shape();
    let [c_out, _, k, _] = weight.shape();
    let geo = ConvGeometry::new(x.shape(), k, stride, padding);
    let (rows_lut, cols_lut) = (geo.row_lookup(), geo.column_lookup());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros([1, c_out, 1, 1]);
    let mut gx = need_input_grad.then(|| Tensor::zeros(x.shape()));
    let mut cols = vec![T::zero(); if geo.is_pointwise() { 0 } else { geo.rows() * geo.cols() }];
    let mut gcols = vec![
        T::zero();
        if need_input_grad && !geo.is_pointwise() {
            geo.rows() * geo.cols()
        } else {
            0
        }
    ];
    let plane = geo.cols();
    for b in 0..n {
        let gy = grad_out.item(b);
        for co in 0..c_out {
            let s: T = gy[co * plane..(co + 1) * plane].iter().copied().sum();
            gb.data_mut()[co] += s;
        }
        let xb = x.item(b);
        let src: &[T] = if geo.is_pointwise() {
            xb
        } else {
            geo.im2col(xb, &mut cols, &rows_lut, &cols_lut);
            &cols
        };
        // gw += gy (c_out x P) * src^T (P x rows)
        matmul(
            c_out,
            geo.cols(),
            geo.rows(),
            gy,
            false,
            src,
            true,
            T::one(),
            gw.data_mut(),
        );
        if let Some(gx) = gx.as_mut() {
            let gxb = gx.item_mut(b);
            if geo.is_pointwise() {
                matmul(
                    geo.rows(),
                    c_out,
                    geo.cols(),
                    weight.data(),
                    true,
                    gy,
                    false,
                    T::zero(),
                    gxb,
                );
            } else {
                matmul(
                    geo.rows(),
                    c_out,
                    geo.cols(),
                    weight.data(),
                    true,
                    gy,
                    false,
                    T::zero(),
                    &mut gcols,
                );
                geo.col2im(&gcols, gxb, &rows_lut, &cols_lut);
            }
        }
    }
    (gx, gw, gb)
}

/// Per-(sample, channel) instance normalization with biased variance.
/// Returns the normalized tensor and `1 / sqrt(var + eps)` per plane.
pub fn instance_norm_forward<T: Real>(x: &Tensor<T>, eps: f64) -> (Tensor<T>, Vec<T>) {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut y = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(n * c);
    for p in 0..n * c {
        let src = &x.data()[p * hw..(p + 1) * hw];
        let mean = src.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64;
        let var = src
            .iter()
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / hw as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let (mean_t, inv_t) = (T::lit(mean), T::lit(inv));
        for (d, &s) in y.data_mut()[p * hw..(p + 1) * hw].iter_mut().zip(src) {
            *d = (s - mean_t) * inv_t;
        }
        inv_std.push(inv_t);
    }
    (y, inv_std)
}

/// `dx = inv_std * (g - mean(g) - y * mean(g * y))` per plane.
pub fn instance_norm_backward<T: Real>(y: &Tensor<T>, inv_std: &[T], grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = y.shape();
    let hw = h * w;
    let mut gx = Tensor::zeros(y.shape());
    for (p, &inv) in inv_std.iter().enumerate().take(n * c) {
        let ys = &y.data()[p * hw..(p + 1) * hw];
        let gs = &grad_out.data()[p * hw..(p + 1) * hw];
        let mut mg = 0.0;
        let mut mgy = 0.0;
        for (&yv, &gv) in ys.iter().zip(gs) {
            mg += gv.as_f64();
            mgy += (gv * yv).as_f64();
        }
        let (mg, mgy) = (T::lit(mg / hw as f64), T::lit(mgy / hw as f64));
        for ((d, &yv), &gv) in gx.data_mut()[p * hw..(p + 1) * hw].iter_mut().zip(ys).zip(gs) {
            *d = inv * (gv - mg - yv * mgy);
        }
    }
    gx
}

pub fn upsample_nearest2x<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        let dst = &mut y.data_mut()[p * 4 * h * w..(p + 1) * 4 * h * w];
        for i in 0..2 * h {
            for j in 0..2 * w {
                dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
            }
        }
    }
    y
}

pub fn upsample_nearest2x_backward<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = grad_out.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut gx = Tensor::zeros([n, c, h, w]);
    for p in 0..n * c {
        let src = &grad_out.data()[p * h2 * w2..(p + 1) * h2 * w2];
        let dst = &mut gx.data_mut()[p * h * w..(p + 1) * h * w];
        for i in 0..h2 {
            for j in 0..w2 {
                dst[(i / 2) * w + j / 2] += src[i * w2 + j];
            }
        }
    }
    gx
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [n, ca, h, w] = a.shape();
    let [nb, cb, hb, wb] = b.shape();
    assert_eq!((n, h, w), (nb, hb, wb), "concat shape mismatch");
    let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
    for i in 0..n {
        data.extend_from_slice(a.item(i));
        data.extend_from_slice(b.item(i));
    }
    Tensor::from_vec([n, ca + cb, h, w], data)
}

pub fn split_channels<T: Real>(g: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = g.shape();
    let cb = c - ca;
    let mut a = Vec::with_capacity(n * ca * h * w);
    let mut b = Vec::with_capacity(n * cb * h * w);
    for i in 0..n {
        let item = g.item(i);
        a.extend_from_slice(&item[..ca * h * w]);
        b.extend_from_slice(&item[ca * h * w..]);
    }
    (Tensor::from_vec([n, ca, h, w], a), Tensor::from_vec([n, cb, h, w], b))
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let data = x
        .data()
        .chunks(hw)
        .map(|p| T::lit(p.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
        .collect();
    Tensor::from_vec([n, c, 1, 1], data)
}
