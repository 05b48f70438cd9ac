//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node holding its output value.
//! [`Graph::backward`] walks the tape in reverse and returns the gradient of
//! the seed with respect to every differentiable leaf.
//!
//! Scalar objectives enter the tape through [`Graph::scalar_fn`]: the caller
//! supplies the value together with its local gradients, so loss kernels with
//! hand-derived derivatives compose with the layer operations.

pub mod kernels;

use crate::tensor::{Real, Tensor};
pub use kernels::Padding;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Input,
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    /// `gamma[n, c] * x + beta[n, c]`, broadcast over space.
    ChannelAffine {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Sigmoid {
        x: Var,
    },
    Upsample2x {
        x: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    GlobalAvgPool {
        x: Var,
    },
    /// `x` is `[n, in, 1, 1]`, weight `[out, in, 1, 1]`, bias `[1, out, 1, 1]`.
    Linear {
        x: Var,
        weight: Var,
        bias: Var,
    },
    RepeatBatch {
        x: Var,
    },
    ScalarFn {
        inputs: Vec<Var>,
        grads: Vec<Tensor<T>>,
    },
    WeightedSum {
        terms: Vec<(Var, T)>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Input => false,
            Op::Conv2d { x, weight, bias, .. } => {
                self.requires(*x) || self.requires(*weight) || bias.is_some_and(|b| self.requires(b))
            }
            Op::InstanceNorm { x, .. }
            | Op::LeakyRelu { x, .. }
            | Op::Sigmoid { x }
            | Op::Upsample2x { x }
            | Op::GlobalAvgPool { x }
            | Op::RepeatBatch { x } => self.requires(*x),
            Op::ChannelAffine { x, gamma, beta } => self.requires(*x) || self.requires(*gamma) || self.requires(*beta),
            Op::Concat { a, b } => self.requires(*a) || self.requires(*b),
            Op::Linear { x, weight, bias } => self.requires(*x) || self.requires(*weight) || self.requires(*bias),
            Op::ScalarFn { inputs, .. } => inputs.iter().any(|v| self.requires(*v)),
            Op::WeightedSum { terms } => terms.iter().any(|(v, _)| self.requires(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant: no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input)
    }

    /// A differentiable leaf (parameters, or inputs under a gradient check).
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Input,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, padding: Padding) -> Var {
        let out = kernels::conv2d_forward(
            self.value(x),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        );
        self.push(
            out,
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                padding,
            },
        )
    }

    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (out, inv_std) = kernels::instance_norm_forward(self.value(x), eps);
        self.push(out, Op::InstanceNorm { x, inv_std })
    }

    pub fn channel_affine(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let [n, c, h, w] = xv.shape();
        let (g, b) = (self.value(gamma), self.value(beta));
        assert_eq!(g.shape(), [n, c, 1, 1], "gamma must be [n, c, 1, 1]");
        assert_eq!(b.shape(), [n, c, 1, 1], "beta must be [n, c, 1, 1]");
        let hw = h * w;
        let mut out = Tensor::zeros(xv.shape());
        for p in 0..n * c {
            let (gp, bp) = (g.data()[p], b.data()[p]);
            for (o, &s) in out.data_mut()[p * hw..(p + 1) * hw]
                .iter_mut()
                .zip(&xv.data()[p * hw..(p + 1) * hw])
            {
                *o = gp * s + bp;
            }
        }
        self.push(out, Op::ChannelAffine { x, gamma, beta })
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::lit(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        self.push(out, Op::Sigmoid { x })
    }

    pub fn upsample2x(&mut self, x: Var) -> Var {
        let out = kernels::upsample_nearest2x(self.value(x));
        self.push(out, Op::Upsample2x { x })
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let out = kernels::concat_channels(self.value(a), self.value(b));
        self.push(out, Op::Concat { a, b })
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let out = kernels::global_avg_pool(self.value(x));
        self.push(out, Op::GlobalAvgPool { x })
    }

    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (wv, bv) = (self.value(weight), self.value(bias));
        let n = xv.batch();
        let d_in = xv.item_len();
        let d_out = wv.batch();
        assert_eq!(wv.item_len(), d_in, "linear input width mismatch");
        assert_eq!(bv.numel(), d_out, "linear bias width mismatch");
        let mut out = Tensor::zeros([n, d_out, 1, 1]);
        // out (n x out) = x (n x in) * w^T (in x out)
        crate::tensor::matmul(
            n,
            d_in,
            d_out,
            xv.data(),
            false,
            wv.data(),
            true,
            T::zero(),
            out.data_mut(),
        );
        for row in out.data_mut().chunks_mut(d_out) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::Linear { x, weight, bias })
    }

    /// Broadcasts a single-item tensor to `n` batch items.
    pub fn repeat_batch(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.batch(), 1, "repeat_batch expects a single item");
        let items: Vec<_> = (0..n).map(|_| xv.clone()).collect();
        let out = Tensor::stack(&items);
        self.push(out, Op::RepeatBatch { x })
    }

    /// Records a scalar objective computed outside the tape. `grads[i]` is
    /// the derivative of `value` with respect to `inputs[i]`.
    pub fn scalar_fn(&mut self, inputs: Vec<Var>, value: T, grads: Vec<Tensor<T>>) -> Var {
        assert_eq!(inputs.len(), grads.len(), "one gradient per input");
        for (v, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.value(*v).shape(), g.shape(), "gradient shape mismatch");
        }
        self.push(Tensor::scalar(value), Op::ScalarFn { inputs, grads })
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, T)>) -> Var {
        let total = terms.iter().fold(T::zero(), |acc, &(v, w)| acc + w * self.scalar(v));
        self.push(Tensor::scalar(total), Op::WeightedSum { terms })
    }

    /// Reverse pass seeded with `d seed / d seed = 1`. `seed` must be scalar.
    /// Gradients are retained for leaf variables only.
    pub fn backward(&self, seed: Var) -> Gradients<T> {
        assert_eq!(self.value(seed).numel(), 1, "backward seed must be a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[seed.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=seed.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads);
            // intermediate gradients are dropped as soon as they are consumed;
            // only leaves are reported
            if matches!(node.op, Op::Input) {
                grads[idx] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn propagate(&self, op: &Op<T>, out: &Tensor<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let accumulate = |grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>| {
            if !self.requires(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match op {
            Op::Input => {}
            Op::Conv2d {
                x,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (gx, gw, gb) = kernels::conv2d_backward(
                    self.value(*x),
                    self.value(*weight),
                    g,
                    *stride,
                    *padding,
                    self.requires(*x),
                );
                if let Some(gx) = gx {
                    accumulate(grads, *x, gx);
                }
                accumulate(grads, *weight, gw);
                if let Some(b) = bias {
                    let shape = self.value(*b).shape();
                    accumulate(grads, *b, gb.reshape(shape));
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                accumulate(grads, *x, kernels::instance_norm_backward(out, inv_std, g));
            }
            Op::ChannelAffine { x, gamma, beta } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma);
                let [n, c, h, w] = xv.shape();
                let hw = h * w;
                let mut gx = Tensor::zeros(xv.shape());
                let mut ggamma = Tensor::zeros([n, c, 1, 1]);
                let mut gbeta = Tensor::zeros([n, c, 1, 1]);
                for p in 0..n * c {
                    let gp = gv.data()[p];
                    let gs = &g.data()[p * hw..(p + 1) * hw];
                    let xs = &xv.data()[p * hw..(p + 1) * hw];
                    let (mut sg, mut sgx) = (T::zero(), T::zero());
                    for ((d, &gi), &xi) in gx.data_mut()[p * hw..(p + 1) * hw].iter_mut().zip(gs).zip(xs) {
                        *d = gp * gi;
                        sg += gi;
                        sgx += gi * xi;
                    }
                    ggamma.data_mut()[p] = sgx;
                    gbeta.data_mut()[p] = sg;
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gamma, ggamma);
                accumulate(grads, *beta, gbeta);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { *slope * gi })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(xv.shape(), data));
            }
            Op::Sigmoid { x } => {
                let data = out
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &gi)| gi * s * (T::one() - s))
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(out.shape(), data));
            }
            Op::Upsample2x { x } => {
                accumulate(grads, *x, kernels::upsample_nearest2x_backward(g));
            }
            Op::Concat { a, b } => {
                let (ga, gb) = kernels::split_channels(g, self.value(*a).channels());
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::GlobalAvgPool { x } => {
                let xv = self.value(*x);
                let [_, _, h, w] = xv.shape();
                let scale = T::lit(1.0 / (h * w) as f64);
                let mut gx = Tensor::zeros(xv.shape());
                for (plane, &gi) in gx.data_mut().chunks_mut(h * w).zip(g.data()) {
                    plane.fill(gi * scale);
                }
                accumulate(grads, *x, gx);
            }
            Op::Linear { x, weight, bias } => {
                let xv = self.value(*x);
                let wv = self.value(*weight);
                let n = xv.batch();
                let d_in = xv.item_len();
                let d_out = wv.batch();
                let mut gx = Tensor::zeros(xv.shape());
                // gx (n x in) = g (n x out) * w (out x in)
                crate::tensor::matmul(
                    n,
                    d_out,
                    d_in,
                    g.data(),
                    false,
                    wv.data(),
                    false,
                    T::zero(),
                    gx.data_mut(),
                );
                let mut gw = Tensor::zeros(wv.shape());
                // gw (out x in) = g^T (out x n) * x (n x in)
                crate::tensor::matmul(
                    d_out,
                    n,
                    d_in,
                    g.data(),
                    true,
                    xv.data(),
                    false,
                    T::zero(),
                    gw.data_mut(),
                );
                let mut gb = Tensor::zeros(self.value(*bias).shape());
                for row in g.data().chunks(d_out) {
                    for (b, &gi) in gb.data_mut().iter_mut().zip(row) {
                        *b += gi;
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *weight, gw);
                accumulate(grads, *bias, gb);
            }
            Op::RepeatBatch { x } => {
                let mut gx = Tensor::zeros(self.value(*x).shape());
                for i in 0..g.batch() {
                    for (d, &s) in gx.data_mut().iter_mut().zip(g.item(i)) {
                        *d += s;
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::ScalarFn { inputs, grads: local } => {
                let upstream = g.data()[0];
                for (v, lg) in inputs.iter().zip(local) {
                    accumulate(grads, *v, lg.map(|d| d * upstream));
                }
            }
            Op::WeightedSum { terms } => {
                let upstream = g.data()[0];
                for &(v, w) in terms {
                    accumulate(grads, v, Tensor::scalar(w * upstream));
                }
            }
        }
    }
}
