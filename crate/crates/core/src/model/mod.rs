//! Scene encoder, appearance encoder and generator.
//!
//! Both scan directions are decoded from the same domain-invariant scene map
//! `S = E_S(I)`; the direction-specific appearance lives in a compact code
//! `A = E_A(I)`. The generator `G(S, A)` re-renders a scene under an
//! appearance, so `G(E_S(I_even), E_A(I_odd))` is the even-line half
//! registered to the odd-line acquisition.
//!
//! Every convolution block is conv (3x3, reflect padding, no bias) ->
//! instance norm -> [modulation] -> leaky ReLU. Instance norm after a
//! reflect-padded first conv cancels any positive affine change of the
//! input, which makes `E_S` invariant to gain and offset.

pub mod checkpoint;
mod params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{Graph, Padding, Var};
use crate::image::Image;
use crate::tensor::{Real, Tensor};
use params::Init;
pub use params::{BoundParams, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(
        "input {height}x{width} is not divisible by {multiple}; pad to {padded_height}x{padded_width} (reflect padding recommended)"
    )]
    IndivisibleDims {
        height: usize,
        width: usize,
        multiple: usize,
        padded_height: usize,
        padded_width: usize,
    },
    #[error("input {height}x{width} is smaller than the minimum {min}x{min}")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Scene map channels.
    pub c_s: usize,
    /// Appearance code length.
    pub c_a: usize,
    /// Channels at full resolution; doubled per level.
    pub base_channels: usize,
    /// Number of 2x downsamplings.
    pub levels: usize,
    /// First-layer channels of the appearance encoder; doubled twice.
    pub appearance_channels: usize,
    pub in_eps: f64,
    pub leaky_slope: f64,
    /// When false, each scan direction gets one learned constant code
    /// instead of an encoded one.
    pub use_appearance_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_s: 64,
            c_a: 32,
            base_channels: 32,
            levels: 3,
            appearance_channels: 16,
            in_eps: 1e-8,
            leaky_slope: 0.2,
            use_appearance_encoder: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.c_s == 0 || self.c_a == 0 || self.base_channels == 0 || self.appearance_channels == 0 {
            return bad("channel counts must be positive");
        }
        if self.levels == 0 || self.levels > 6 {
            return bad("levels must be between 1 and 6");
        }
        if !(self.in_eps > 0.0 && self.in_eps.is_finite()) {
            return bad("in_eps must be positive");
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return bad("leaky_slope must be in [0, 1)");
        }
        Ok(())
    }

    /// Spatial dimensions must be a multiple of this.
    pub fn multiple(&self) -> usize {
        1 << self.levels
    }

    /// Smallest accepted side: the bottleneck needs two pixels for reflect
    /// padding.
    pub fn min_side(&self) -> usize {
        2 * self.multiple()
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<(), ModelError> {
        let m = self.multiple();
        if !height.is_multiple_of(m) || !width.is_multiple_of(m) {
            return Err(ModelError::IndivisibleDims {
                height,
                width,
                multiple: m,
                padded_height: height.div_ceil(m) * m,
                padded_width: width.div_ceil(m) * m,
            });
        }
        if height < self.min_side() || width < self.min_side() {
            return Err(ModelError::TooSmall {
                height,
                width,
                min: self.min_side(),
            });
        }
        Ok(())
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level.min(2)
    }
}

/// Scan direction of a half-image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Odd,
    Even,
}

#[derive(Debug, Clone, Copy)]
struct Modulation {
    gamma_w: usize,
    gamma_b: usize,
    beta_w: usize,
    beta_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    weight: usize,
    stride: usize,
    modulation: Option<Modulation>,
}

#[derive(Debug, Clone)]
struct DecoderLevel {
    up: ConvBlock,
    post: Vec<ConvBlock>,
}

/// Encoder-bottleneck-decoder with skip concatenation and a 1x1 head.
#[derive(Debug, Clone)]
struct UNet {
    encoder: Vec<Vec<ConvBlock>>,
    bottleneck: Vec<ConvBlock>,
    /// Deepest level first.
    decoder: Vec<DecoderLevel>,
    head_w: usize,
    head_b: usize,
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    init: &'a mut Init,
    prefix: &'static str,
    c_a: Option<usize>,
    count: usize,
}

impl<T: Real> Builder<'_, T> {
    fn block(&mut self, c_in: usize, c_out: usize, stride: usize) -> ConvBlock {
        let id = self.count;
        self.count += 1;
        let weight = self.store.add(
            format!("{}.b{id:02}.conv", self.prefix),
            self.init.he([c_out, c_in, 3, 3]),
        );
        let modulation = self.c_a.map(|c_a| {
            // identity modulation at start: gamma ~ 1, beta ~ 0
            let std = 0.01;
            Modulation {
                gamma_w: self.store.add(
                    format!("{}.b{id:02}.gamma.w", self.prefix),
                    self.init.normal([c_out, c_a, 1, 1], std),
                ),
                gamma_b: self.store.add(
                    format!("{}.b{id:02}.gamma.b", self.prefix),
                    Tensor::full([1, c_out, 1, 1], T::one()),
                ),
                beta_w: self.store.add(
                    format!("{}.b{id:02}.beta.w", self.prefix),
                    self.init.normal([c_out, c_a, 1, 1], std),
                ),
                beta_b: self.store.add(
                    format!("{}.b{id:02}.beta.b", self.prefix),
                    Tensor::zeros([1, c_out, 1, 1]),
                ),
            }
        });
        ConvBlock {
            weight,
            stride,
            modulation,
        }
    }

    fn unet(&mut self, cfg: &ModelConfig, c_in: usize, c_out: usize) -> UNet {
        let levels = cfg.levels;
        let mut encoder = Vec::with_capacity(levels);
        let mut prev = c_in;
        for l in 0..levels {
            let c = cfg.level_channels(l);
            let stride = if l == 0 { 1 } else { 2 };
            encoder.push(vec![self.block(prev, c, stride), self.block(c, c, 1)]);
            prev = c;
        }
        let cb = cfg.level_channels(levels - 1);
        let mut bottleneck = vec![self.block(prev, cb, 2)];
        for _ in 0..3 {
            bottleneck.push(self.block(cb, cb, 1));
        }
        let mut decoder = Vec::with_capacity(levels);
        prev = cb;
        for l in (0..levels).rev() {
            let c = cfg.level_channels(l);
            let up = self.block(prev, c, 1);
            let mut post = vec![self.block(2 * c, c, 1)];
            if l == levels - 1 {
                post.push(self.block(c, c, 1));
            }
            decoder.push(DecoderLevel { up, post });
            prev = c;
        }
        let head_w = self.store.add(
            format!("{}.head.w", self.prefix),
            self.init.normal([c_out, prev, 1, 1], (1.0 / prev as f64).sqrt()),
        );
        let head_b = self
            .store
            .add(format!("{}.head.b", self.prefix), Tensor::zeros([1, c_out, 1, 1]));
        UNet {
            encoder,
            bottleneck,
            decoder,
            head_w,
            head_b,
        }
    }
}

#[derive(Debug, Clone)]
struct AppearanceNet {
    convs: Vec<(usize, usize)>,
    fc_w: usize,
    fc_b: usize,
}

#[derive(Debug, Clone)]
enum AppearanceSource {
    Encoder(AppearanceNet),
    /// Learned constant codes `[1, c_a, 1, 1]` for the odd and even domains.
    DomainCodes {
        odd: usize,
        even: usize,
    },
}

/// Outputs of a bidirectional cross-domain pass.
#[derive(Debug, Clone, Copy)]
pub struct CrossRender {
    /// `G(S_even, A_odd)`: the registration output.
    pub even_to_odd: Var,
    /// `G(S_odd, A_even)`.
    pub odd_to_even: Var,
    pub s_odd: Var,
    pub s_even: Var,
    pub a_odd: Var,
    pub a_even: Var,
}

/// The full network. Parameters are held in one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct SasNet<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    scene: UNet,
    generator: UNet,
    appearance: AppearanceSource,
}

impl<T: Real> SasNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(seed);
        let scene = Builder {
            store: &mut params,
            init: &mut init,
            prefix: "scene",
            c_a: None,
            count: 0,
        }
        .unet(&config, 1, config.c_s);
        let appearance = if config.use_appearance_encoder {
            let c0 = config.appearance_channels;
            let chans = [(1, c0, 1), (c0, 2 * c0, 2), (2 * c0, 4 * c0, 2)];
            let convs = chans
                .iter()
                .enumerate()
                .map(|(i, &(ci, co, _))| {
                    let w = params.add(format!("appearance.conv{i}.w"), init.he([co, ci, 3, 3]));
                    let b = params.add(format!("appearance.conv{i}.b"), Tensor::zeros([1, co, 1, 1]));
                    (w, b)
                })
                .collect();
            let c_last = 4 * c0;
            let fc_w = params.add(
                "appearance.fc.w",
                init.normal([config.c_a, c_last, 1, 1], (1.0 / c_last as f64).sqrt()),
            );
            let fc_b = params.add("appearance.fc.b", Tensor::zeros([1, config.c_a, 1, 1]));
            AppearanceSource::Encoder(AppearanceNet { convs, fc_w, fc_b })
        } else {
            let odd = params.add("appearance.code.odd", init.normal([1, config.c_a, 1, 1], 1.0));
            let even = params.add("appearance.code.even", init.normal([1, config.c_a, 1, 1], 1.0));
            AppearanceSource::DomainCodes { odd, even }
        };
        let generator = Builder {
            store: &mut params,
            init: &mut init,
            prefix: "generator",
            c_a: Some(config.c_a),
            count: 0,
        }
        .unet(&config, config.c_s, 1);
        Ok(Self {
            config,
            params,
            scene,
            generator,
            appearance,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> SasNet<U> {
        SasNet {
            config: self.config,
            params: self.params.cast(),
            scene: self.scene.clone(),
            generator: self.generator.clone(),
            appearance: self.appearance.clone(),
        }
    }

    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        self.params.bind(g, trainable)
    }

    fn check_input(&self, g: &Graph<T>, x: Var, channels: usize) -> Result<(), ModelError> {
        let [_, c, h, w] = g.value(x).shape();
        if c != channels {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {channels} channels, got {c}"
            )));
        }
        self.config.check_dims(h, w)
    }

    /// `γ(A) ⊙ IN(x) + β(A)` with `γ`, `β` affine in the code.
    pub fn modulate(&self, g: &mut Graph<T>, x: Var, gamma: Var, beta: Var) -> Var {
        let normed = g.instance_norm(x, self.config.in_eps);
        g.channel_affine(normed, gamma, beta)
    }

    fn run_block(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, b: &ConvBlock, code: Option<Var>) -> Var {
        let y = g.conv2d(x, p.var(b.weight), None, b.stride, Padding::Reflect(1));
        let y = match (b.modulation, code) {
            (Some(m), Some(a)) => {
                let gamma = g.linear(a, p.var(m.gamma_w), p.var(m.gamma_b));
                let beta = g.linear(a, p.var(m.beta_w), p.var(m.beta_b));
                self.modulate(g, y, gamma, beta)
            }
            (None, None) => g.instance_norm(y, self.config.in_eps),
            _ => unreachable!("modulated blocks need a code"),
        };
        g.leaky_relu(y, self.config.leaky_slope)
    }

    fn run_unet(&self, g: &mut Graph<T>, p: &BoundParams, net: &UNet, x: Var, code: Option<Var>) -> Var {
        let mut h = x;
        let mut skips = Vec::with_capacity(net.encoder.len());
        for level in &net.encoder {
            for b in level {
                h = self.run_block(g, p, h, b, code);
            }
            skips.push(h);
        }
        for b in &net.bottleneck {
            h = self.run_block(g, p, h, b, code);
        }
        for level in &net.decoder {
            let up = g.upsample2x(h);
            h = self.run_block(g, p, up, &level.up, code);
            let skip = skips.pop().expect("one skip per level");
            h = g.concat(h, skip);
            for b in &level.post {
                h = self.run_block(g, p, h, b, code);
            }
        }
        g.conv2d(h, p.var(net.head_w), Some(p.var(net.head_b)), 1, Padding::None)
    }

    /// `[n, 1, h, w]` -> `[n, c_s, h, w]`.
    pub fn scene_encode(&self, g: &mut Graph<T>, p: &BoundParams, x: Var) -> Result<Var, ModelError> {
        self.check_input(g, x, 1)?;
        Ok(self.run_unet(g, p, &self.scene, x, None))
    }

    /// `[n, 1, h, w]` -> `[n, c_a, 1, 1]`. With domain codes the image only
    /// sets the batch size.
    pub fn appearance_encode(&self, g: &mut Graph<T>, p: &BoundParams, x: Var, domain: Domain) -> Var {
        match &self.appearance {
            AppearanceSource::Encoder(net) => {
                let mut h = x;
                for (i, &(w, b)) in net.convs.iter().enumerate() {
                    let stride = if i == 0 { 1 } else { 2 };
                    h = g.conv2d(h, p.var(w), Some(p.var(b)), stride, Padding::Reflect(1));
                    h = g.leaky_relu(h, self.config.leaky_slope);
                }
                let pooled = g.global_avg_pool(h);
                g.linear(pooled, p.var(net.fc_w), p.var(net.fc_b))
            }
            AppearanceSource::DomainCodes { odd, even } => {
                let n = g.value(x).batch();
                let code = match domain {
                    Domain::Odd => *odd,
                    Domain::Even => *even,
                };
                g.repeat_batch(p.var(code), n)
            }
        }
    }

    /// `G(S, A)`: `[n, c_s, h, w]` and `[n, c_a, 1, 1]` -> `[n, 1, h, w]` in `(0, 1)`.
    pub fn synthesize(&self, g: &mut Graph<T>, p: &BoundParams, s: Var, a: Var) -> Result<Var, ModelError> {
        self.check_input(g, s, self.config.c_s)?;
        let [n, c_a, ah, aw] = g.value(a).shape();
        if n != g.value(s).batch() || c_a != self.config.c_a || ah != 1 || aw != 1 {
            return Err(ModelError::ShapeMismatch(format!(
                "appearance code shape {:?} does not match scene batch {} and c_a {}",
                g.value(a).shape(),
                g.value(s).batch(),
                self.config.c_a
            )));
        }
        let logits = self.run_unet(g, p, &self.generator, s, Some(a));
        Ok(g.sigmoid(logits))
    }

    /// Encodes both halves and renders each scene under the other's
    /// appearance. `with_odd_to_even = false` skips `G(S_odd, A_even)`,
    /// which no training objective uses; the returned handle then aliases
    /// `even_to_odd`.
    pub fn cross_render(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        odd: Var,
        even: Var,
        with_odd_to_even: bool,
    ) -> Result<CrossRender, ModelError> {
        if g.value(odd).shape() != g.value(even).shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "odd half {:?} vs even half {:?}",
                g.value(odd).shape(),
                g.value(even).shape()
            )));
        }
        let s_odd = self.scene_encode(g, p, odd)?;
        let s_even = self.scene_encode(g, p, even)?;
        let a_odd = self.appearance_encode(g, p, odd, Domain::Odd);
        let a_even = self.appearance_encode(g, p, even, Domain::Even);
        let even_to_odd = self.synthesize(g, p, s_even, a_odd)?;
        let odd_to_even = if with_odd_to_even {
            self.synthesize(g, p, s_odd, a_even)?
        } else {
            even_to_odd
        };
        Ok(CrossRender {
            even_to_odd,
            odd_to_even,
            s_odd,
            s_even,
            a_odd,
            a_even,
        })
    }

    /// Registration: the even half re-rendered under the odd half's
    /// acquisition, `G(E_S(even), E_A(odd))`.
    pub fn register(&self, odd: &Image, even: &Image) -> Result<Image, ModelError> {
        if odd.dims() != even.dims() {
            return Err(ModelError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                odd.dims(),
                even.dims()
            )));
        }
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xo = g.input(odd.to_tensor());
        let xe = g.input(even.to_tensor());
        let s = self.scene_encode(&mut g, &p, xe)?;
        let a = self.appearance_encode(&mut g, &p, xo, Domain::Odd);
        let out = self.synthesize(&mut g, &p, s, a)?;
        Ok(Image::from_tensor(g.value(out), 0))
    }

    /// Scene map of one image, `[1, c_s, h, w]`.
    pub fn scene_map(&self, img: &Image) -> Result<Tensor<T>, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.input(img.to_tensor());
        let s = self.scene_encode(&mut g, &p, x)?;
        Ok(g.value(s).clone())
    }

    /// Appearance code of one image.
    pub fn appearance_code(&self, img: &Image, domain: Domain) -> Vec<f64> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let x = g.input(img.to_tensor());
        let a = self.appearance_encode(&mut g, &p, x, domain);
        g.value(a).data().iter().map(|v| v.as_f64()).collect()
    }

    /// `G(S, A)` for a single scene map and code.
    pub fn render(&self, scene: &Tensor<T>, code: &[f64]) -> Result<Image, ModelError> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let s = g.input(scene.clone());
        let a = g.input(Tensor::from_vec(
            [1, code.len(), 1, 1],
            code.iter().map(|&v| T::lit(v)).collect(),
        ));
        let out = self.synthesize(&mut g, &p, s, a)?;
        Ok(Image::from_tensor(g.value(out), 0))
    }
}
