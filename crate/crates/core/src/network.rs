//! Coupled segmentation network.
//!
//! A shared encoder feeds a reconstruction decoder with U-Net skips. The
//! segmentation decoder never sees encoder skips directly: at every level it
//! upsamples its previous features, concatenates them with the same-resolution
//! reconstruction-decoder features, gates the result with channel and spatial
//! attention, then applies a conv block.
//!
//! ```text
//!   x ─ E0 ─ E1 ─ … ─ EL (bottleneck)
//!        │    │        ├──────────────┐
//!        │    └──── S1 ─ … ─ SL ─ recon
//!        │              │      │      │
//!        └───────────── ┴ ─────┴── G1 ─ … ─ GL ─ seg
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of resolution levels below the input (`L`).
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub attention: bool,
    /// Channel-attention MLP reduction ratio.
    pub reduction: usize,
    /// Spatial-attention kernel size (odd).
    pub spatial_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    /// 512×512 inputs with eight levels.
    pub fn paper() -> Self {
        Self {
            depth: 8,
            base_channels: 64,
            max_channels: 512,
            in_channels: 3,
            image_size: 512,
            attention: true,
            reduction: 8,
            spatial_kernel: 7,
        }
    }

    /// 64×64 inputs with four levels; trains on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            depth: 4,
            base_channels: 8,
            max_channels: 512,
            image_size: 64,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::param(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.base_channels < 4 {
            return Err(Error::param(format!(
                "base_channels must be >= 4, got {}",
                self.base_channels
            )));
        }
        if self.max_channels < self.base_channels {
            return Err(Error::param("max_channels below base_channels"));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::param(format!("in_channels must be 1 or 3, got {}", self.in_channels)));
        }
        let scale = 1usize << self.depth;
        if !self.image_size.is_multiple_of(scale) || self.image_size / scale < 2 {
            return Err(Error::param(format!(
                "image_size {} must be a multiple of 2^depth = {scale} with a bottleneck of at least 2x2",
                self.image_size
            )));
        }
        if self.reduction < 1 {
            return Err(Error::param("reduction must be >= 1"));
        }
        if self.spatial_kernel.is_multiple_of(2) {
            return Err(Error::param("spatial_kernel must be odd"));
        }
        Ok(())
    }

    /// Channel width at resolution level `l` (0 = full resolution).
    pub fn channels_at(&self, level: usize) -> usize {
        (self.base_channels << level).min(self.max_channels)
    }

    pub fn size_at(&self, level: usize) -> usize {
        self.image_size >> level
    }
}

/// Floor on the channel-attention MLP width so narrow layers keep live units.
pub const MIN_ATTENTION_HIDDEN: usize = 4;

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    w1: usize,
    g1: usize,
    b1: usize,
    w2: usize,
    g2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    fc1_w: usize,
    fc1_b: usize,
    fc2_w: usize,
    fc2_b: usize,
    spatial_w: usize,
    spatial_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Normal with std `sqrt(gain / fan_in)`.
    FanIn(f64),
    Const(f64),
}

/// How attention gates are applied in the segmentation decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    /// Replace every gate by ones; the block then behaves like plain
    /// concatenation followed by the conv block.
    ForcedOpen,
}

/// Graph handles produced by [`CoupledNetwork::forward`].
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Linear reconstruction head, `N×C×H×W`.
    pub recon: Var,
    /// Sigmoid segmentation head, `N×1×H×W`.
    pub seg_prob: Var,
    /// Encoder features for levels `0..=L`.
    pub encoder: Vec<Var>,
    /// Reconstruction-decoder features for levels `1..=L`.
    pub f_sel: Vec<Var>,
    /// Segmentation-decoder features for levels `1..=L`.
    pub f_seg: Vec<Var>,
    /// Channel-attention gates per level (empty without attention).
    pub channel_gates: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct CoupledNetwork {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    encoder: Vec<ConvBlock>,
    sel: Vec<ConvBlock>,
    seg: Vec<ConvBlock>,
    attention: Vec<Attention>,
    recon_head: Head,
    seg_head: Head,
}

struct Builder<'a> {
    names: Vec<String>,
    params: Vec<Tensor>,
    rng: ChaCha8Rng,
    zeroed: bool,
    _cfg: &'a ModelConfig,
}

impl Builder<'_> {
    fn add(&mut self, name: String, shape: [usize; 4], init: Init) -> usize {
        let len: usize = shape.iter().product();
        let data = if self.zeroed {
            vec![0.0; len]
        } else {
            match init {
                Init::Const(v) => vec![v; len],
                Init::FanIn(gain) => {
                    let fan_in = shape[1] * shape[2] * shape[3];
                    let dist = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
                    (0..len).map(|_| dist.sample(&mut self.rng)).collect()
                }
            }
        };
        self.names.push(name);
        self.params.push(Tensor::from_vec(shape, data).expect("param shape"));
        self.params.len() - 1
    }

    fn conv_block(&mut self, prefix: &str, cin: usize, cout: usize) -> ConvBlock {
        ConvBlock {
            w1: self.add(format!("{prefix}.conv1.weight"), [cout, cin, 3, 3], Init::FanIn(2.0)),
            g1: self.add(format!("{prefix}.norm1.gamma"), [cout, 1, 1, 1], Init::Const(1.0)),
            b1: self.add(format!("{prefix}.norm1.beta"), [cout, 1, 1, 1], Init::Const(0.0)),
            w2: self.add(format!("{prefix}.conv2.weight"), [cout, cout, 3, 3], Init::FanIn(2.0)),
            g2: self.add(format!("{prefix}.norm2.gamma"), [cout, 1, 1, 1], Init::Const(1.0)),
            b2: self.add(format!("{prefix}.norm2.beta"), [cout, 1, 1, 1], Init::Const(0.0)),
        }
    }

    fn attention(&mut self, prefix: &str, c: usize, reduction: usize, k: usize) -> Attention {
        let hidden = (c / reduction).max(MIN_ATTENTION_HIDDEN);
        Attention {
            fc1_w: self.add(format!("{prefix}.channel.fc1.weight"), [hidden, c, 1, 1], Init::FanIn(2.0)),
            fc1_b: self.add(format!("{prefix}.channel.fc1.bias"), [hidden, 1, 1, 1], Init::Const(1.0)),
            fc2_w: self.add(format!("{prefix}.channel.fc2.weight"), [c, hidden, 1, 1], Init::FanIn(1.0)),
            fc2_b: self.add(format!("{prefix}.channel.fc2.bias"), [c, 1, 1, 1], Init::Const(0.0)),
            spatial_w: self.add(format!("{prefix}.spatial.weight"), [1, 2, k, k], Init::FanIn(1.0)),
            spatial_b: self.add(format!("{prefix}.spatial.bias"), [1, 1, 1, 1], Init::Const(0.0)),
        }
    }

    fn head(&mut self, prefix: &str, cin: usize, cout: usize) -> Head {
        Head {
            w: self.add(format!("{prefix}.weight"), [cout, cin, 1, 1], Init::FanIn(1.0)),
            b: self.add(format!("{prefix}.bias"), [cout, 1, 1, 1], Init::Const(0.0)),
        }
    }
}

struct ParamVars(Vec<Var>);

impl ParamVars {
    fn get(&self, id: usize) -> Var {
        self.0[id]
    }
}

impl CoupledNetwork {
    /// Randomly initialized network; initialization is a pure function of
    /// `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::build(config, seed, false)
    }

    /// Every parameter set to zero (including normalization scales).
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        Self::build(config, 0, true)
    }

    fn build(config: ModelConfig, seed: u64, zeroed: bool) -> Result<Self> {
        config.validate()?;
        let cfg = config.clone();
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            zeroed,
            _cfg: &cfg,
        };
        let l = cfg.depth;
        let ch = |lvl| cfg.channels_at(lvl);

        let mut encoder = vec![b.conv_block("encoder.0", cfg.in_channels, ch(0))];
        for lvl in 1..=l {
            encoder.push(b.conv_block(&format!("encoder.{lvl}"), ch(lvl - 1), ch(lvl)));
        }
        let mut sel = Vec::with_capacity(l);
        for step in 1..=l {
            let lvl = l - step;
            sel.push(b.conv_block(&format!("sel.{step}"), ch(lvl + 1) + ch(lvl), ch(lvl)));
        }
        let recon_head = b.head("sel.head", ch(0), cfg.in_channels);
        let mut seg = Vec::with_capacity(l);
        let mut attention = Vec::new();
        for step in 1..=l {
            let lvl = l - step;
            let cin = ch(lvl + 1) + ch(lvl);
            if cfg.attention {
                attention.push(b.attention(
                    &format!("seg.{step}.attention"),
                    cin,
                    cfg.reduction,
                    cfg.spatial_kernel,
                ));
            }
            seg.push(b.conv_block(&format!("seg.{step}"), cin, ch(lvl)));
        }
        let seg_head = b.head("seg.head", ch(0), 1);

        Ok(Self {
            config,
            names: b.names,
            params: b.params,
            encoder,
            sel,
            seg,
            attention,
            recon_head,
            seg_head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param_by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    /// Overwrites every parameter whose name exists in `other` with the same
    /// shape. Returns the number of tensors copied.
    pub fn copy_matching_params(&mut self, other: &CoupledNetwork) -> usize {
        let mut copied = 0;
        for (name, p) in self.names.iter().zip(self.params.iter_mut()) {
            if let Some(src) = other.param_by_name(name) {
                if src.shape() == p.shape() {
                    *p = src.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    /// Replaces all parameters, checking names and shapes.
    pub fn load_params(&mut self, named: Vec<(String, Tensor)>) -> Result<()> {
        if named.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                named.len()
            )));
        }
        for (i, (name, t)) in named.into_iter().enumerate() {
            if name != self.names[i] || t.shape() != self.params[i].shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {i}: expected {} {:?}, found {name} {:?}",
                    self.names[i],
                    self.params[i].shape(),
                    t.shape()
                )));
            }
            self.params[i] = t;
        }
        Ok(())
    }

    fn register(&self, g: &mut Graph) -> ParamVars {
        ParamVars(self.params.iter().enumerate().map(|(i, p)| g.param(i, p)).collect())
    }

    fn conv_block(&self, g: &mut Graph, pv: &ParamVars, b: &ConvBlock, x: Var) -> Var {
        let y = g.conv2d(x, pv.get(b.w1), None, 1);
        let y = g.instance_norm(y, pv.get(b.g1), pv.get(b.b1));
        let y = g.relu(y);
        let y = g.conv2d(y, pv.get(b.w2), None, 1);
        let y = g.instance_norm(y, pv.get(b.g2), pv.get(b.b2));
        g.relu(y)
    }

    fn check_input(&self, t: &Tensor) -> Result<()> {
        let s = self.config.image_size;
        let [_, c, h, w] = t.shape();
        if t.batch() == 0 || c != self.config.in_channels || h != s || w != s {
            return Err(Error::shape(format!(
                "network expects Nx{}x{s}x{s}, got {:?}",
                self.config.in_channels,
                t.shape()
            )));
        }
        Ok(())
    }

    fn check_features(&self, g: &Graph, feats: &[Var], expected: &[(usize, usize)], what: &str) -> Result<()> {
        if feats.len() != expected.len() {
            return Err(Error::shape(format!(
                "{what}: expected {} feature maps, got {}",
                expected.len(),
                feats.len()
            )));
        }
        for (i, (f, (c, s))) in feats.iter().zip(expected).enumerate() {
            let [_, fc, fh, fw] = g.value(*f).shape();
            if (fc, fh, fw) != (*c, *s, *s) {
                return Err(Error::shape(format!(
                    "{what} {i}: expected {c}x{s}x{s}, got {fc}x{fh}x{fw}"
                )));
            }
        }
        Ok(())
    }

    /// Encoder features for levels `0..=L`; level `l` is `image_size / 2^l`.
    pub fn forward_encoder(&self, g: &mut Graph, input: Var) -> Result<Vec<Var>> {
        self.check_input(g.value(input))?;
        let pv = self.register(g);
        Ok(self.encode(g, &pv, input))
    }

    fn encode(&self, g: &mut Graph, pv: &ParamVars, input: Var) -> Vec<Var> {
        let mut feats = Vec::with_capacity(self.config.depth + 1);
        let mut x = self.conv_block(g, pv, &self.encoder[0], input);
        feats.push(x);
        for b in &self.encoder[1..] {
            let p = g.max_pool2(x);
            x = self.conv_block(g, pv, b, p);
            feats.push(x);
        }
        feats
    }

    fn encoder_layout(&self) -> Vec<(usize, usize)> {
        (0..=self.config.depth)
            .map(|l| (self.config.channels_at(l), self.config.size_at(l)))
            .collect()
    }

    fn decoder_layout(&self) -> Vec<(usize, usize)> {
        (1..=self.config.depth)
            .map(|step| {
                let l = self.config.depth - step;
                (self.config.channels_at(l), self.config.size_at(l))
            })
            .collect()
    }

    /// Reconstruction decoder. Returns the linear reconstruction and the
    /// per-level features `f_sel` for levels `1..=L`.
    pub fn forward_decoder_sel(&self, g: &mut Graph, encoder: &[Var]) -> Result<(Var, Vec<Var>)> {
        self.check_features(g, encoder, &self.encoder_layout(), "encoder features")?;
        let pv = self.register(g);
        Ok(self.decode_sel(g, &pv, encoder))
    }

    fn decode_sel(&self, g: &mut Graph, pv: &ParamVars, encoder: &[Var]) -> (Var, Vec<Var>) {
        let l = self.config.depth;
        let mut x = encoder[l];
        let mut feats = Vec::with_capacity(l);
        for (step, b) in self.sel.iter().enumerate() {
            let up = g.upsample2(x);
            let cat = g.concat(up, encoder[l - step - 1]);
            x = self.conv_block(g, pv, b, cat);
            feats.push(x);
        }
        let recon = g.conv2d(x, pv.get(self.recon_head.w), Some(pv.get(self.recon_head.b)), 0);
        (recon, feats)
    }

    /// Segmentation decoder. `bottleneck` seeds the first level; `f_sel` are
    /// the reconstruction-decoder features for levels `1..=L`. Returns the
    /// probability map, `f_seg`, and the channel gates.
    pub fn forward_decoder_seg(
        &self,
        g: &mut Graph,
        bottleneck: Var,
        f_sel: &[Var],
        gates: GateMode,
    ) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        let l = self.config.depth;
        self.check_features(g, &[bottleneck], &[(self.config.channels_at(l), self.config.size_at(l))], "bottleneck")?;
        self.check_features(g, f_sel, &self.decoder_layout(), "f_sel")?;
        let pv = self.register(g);
        Ok(self.decode_seg(g, &pv, bottleneck, f_sel, gates))
    }

    fn decode_seg(
        &self,
        g: &mut Graph,
        pv: &ParamVars,
        bottleneck: Var,
        f_sel: &[Var],
        gates: GateMode,
    ) -> (Var, Vec<Var>, Vec<Var>) {
        let mut x = bottleneck;
        let mut feats = Vec::with_capacity(f_sel.len());
        let mut channel_gates = Vec::new();
        for (step, b) in self.seg.iter().enumerate() {
            let up = g.upsample2(x);
            let mut z = g.concat(up, f_sel[step]);
            if let Some(att) = self.attention.get(step) {
                let (gated, cg) = self.attend(g, pv, att, z, gates);
                z = gated;
                channel_gates.push(cg);
            }
            x = self.conv_block(g, pv, b, z);
            feats.push(x);
        }
        let logits = g.conv2d(x, pv.get(self.seg_head.w), Some(pv.get(self.seg_head.b)), 0);
        (g.sigmoid(logits), feats, channel_gates)
    }

    /// Channel attention followed by spatial attention.
    fn attend(&self, g: &mut Graph, pv: &ParamVars, att: &Attention, z: Var, mode: GateMode) -> (Var, Var) {
        let avg = g.global_avg(z);
        let max = g.global_max(z);
        let mlp = |g: &mut Graph, v: Var| {
            let h = g.conv2d(v, pv.get(att.fc1_w), Some(pv.get(att.fc1_b)), 0);
            let h = g.relu(h);
            g.conv2d(h, pv.get(att.fc2_w), Some(pv.get(att.fc2_b)), 0)
        };
        let a = mlp(g, avg);
        let m = mlp(g, max);
        let s = g.add(a, m);
        let mut cgate = g.sigmoid(s);
        if mode == GateMode::ForcedOpen {
            cgate = g.input(Tensor::full(g.value(cgate).shape(), 1.0));
        }
        let z = g.mul_channel(z, cgate);

        let mean = g.channel_mean(z);
        let peak = g.channel_max(z);
        let maps = g.concat(mean, peak);
        let k = self.config.spatial_kernel;
        let sp = g.conv2d(maps, pv.get(att.spatial_w), Some(pv.get(att.spatial_b)), k / 2);
        let mut sgate = g.sigmoid(sp);
        if mode == GateMode::ForcedOpen {
            sgate = g.input(Tensor::full(g.value(sgate).shape(), 1.0));
        }
        (g.mul_spatial(z, sgate), cgate)
    }

    /// Full forward pass: encoder, reconstruction decoder, then the
    /// segmentation decoder fed by reconstruction features.
    pub fn forward(&self, g: &mut Graph, batch: Tensor, gates: GateMode) -> Result<ForwardOutput> {
        self.check_input(&batch)?;
        let input = g.input(batch);
        let pv = self.register(g);
        let encoder = self.encode(g, &pv, input);
        let (recon, f_sel) = self.decode_sel(g, &pv, &encoder);
        let bottleneck = encoder[self.config.depth];
        let (seg_prob, f_seg, channel_gates) = self.decode_seg(g, &pv, bottleneck, &f_sel, gates);
        Ok(ForwardOutput {
            recon,
            seg_prob,
            encoder,
            f_sel,
            f_seg,
            channel_gates,
        })
    }

    /// Inference helper returning `(recon, seg_prob)` tensors.
    pub fn infer(&self, batch: Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, batch, GateMode::Learned)?;
        Ok((g.value(out.recon).clone(), g.value(out.seg_prob).clone()))
    }
}
