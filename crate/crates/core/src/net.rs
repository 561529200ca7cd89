//! U-Net kernel predictor.
//!
//! The backbone takes the burst frames plus the reference noise map as
//! `N + 1` input channels. Each encoder stage is two 3x3 conv + ReLU layers
//! followed by 2x2 average pooling; a bottleneck block runs at the coarsest
//! scale; each decoder stage upsamples, concatenates the matching encoder
//! output, applies two 3x3 conv + ReLU layers and then the attention block.
//! Two heads read the full-resolution features:
//!
//! * `head_kr` emits `N*S*S + N` channels: per-frame kernels (frame-major)
//!   followed by one residual map per frame.
//! * `head_w` emits `N` blend logits.
//!
//! With the residual branch disabled `head_kr` emits only the kernels and
//! `head_w` does not exist.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::adaconv::{reconstruct, reconstruct_kernel_only, KernelField, Reconstruction, ResidualField, WeightField};
use crate::attention::AttentionBlock;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Graph, Var};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BURST_LEN: usize = 8;
pub const DEFAULT_WIDTHS: [usize; 4] = [64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetConfig {
    pub burst_len: usize,
    pub kernel_size: usize,
    /// Encoder channel count per scale; the number of scales is its length.
    pub widths: Vec<usize>,
    pub channel_attention: bool,
    pub spatial_attention: bool,
    pub residual_branch: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            burst_len: DEFAULT_BURST_LEN,
            kernel_size: crate::adaconv::DEFAULT_KERNEL_SIZE,
            widths: DEFAULT_WIDTHS.to_vec(),
            channel_attention: true,
            spatial_attention: true,
            residual_branch: true,
        }
    }
}

/// Module toggles of the six ablation models:
///
/// | model | channel attn | spatial attn | residual |
/// |-------|--------------|--------------|----------|
/// | 1     |              |              |          |
/// | 2     | x            |              |          |
/// | 3     |              | x            |          |
/// | 4     | x            | x            |          |
/// | 5     |              |              | x        |
/// | 6     | x            | x            | x        |
pub fn build_ablation(model_id: u8) -> Result<NetConfig> {
    let (channel_attention, spatial_attention, residual_branch) = match model_id {
        1 => (false, false, false),
        2 => (true, false, false),
        3 => (false, true, false),
        4 => (true, true, false),
        5 => (false, false, true),
        6 => (true, true, true),
        other => {
            return Err(Error::invalid("build_ablation", format!("model id {other} is not in 1..=6")));
        }
    };
    Ok(NetConfig {
        channel_attention,
        spatial_attention,
        residual_branch,
        ..NetConfig::default()
    })
}

impl NetConfig {
    pub fn num_scales(&self) -> usize {
        self.widths.len()
    }

    pub fn taps(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// Output channels of `head_kr`.
    pub fn kr_channels(&self) -> usize {
        self.burst_len * self.taps() + if self.residual_branch { self.burst_len } else { 0 }
    }

    /// Output channels of `head_w` (zero when the head is absent).
    pub fn w_channels(&self) -> usize {
        if self.residual_branch {
            self.burst_len
        } else {
            0
        }
    }

    /// Spatial extents must be multiples of this.
    pub fn size_multiple(&self) -> usize {
        1 << self.num_scales()
    }

    /// The ablation model this configuration corresponds to, if any.
    pub fn model_id(&self) -> Option<u8> {
        (1..=6).find(|&id| {
            let c = build_ablation(id).expect("valid id");
            (c.channel_attention, c.spatial_attention, c.residual_branch)
                == (self.channel_attention, self.spatial_attention, self.residual_branch)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.burst_len == 0 {
            return Err(Error::invalid("net_config", "burst length must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::invalid("net_config", format!("kernel size {} must be odd", self.kernel_size)));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::invalid("net_config", format!("widths {:?} must be non-empty and positive", self.widths)));
        }
        Ok(())
    }

    /// Plain-text `key = value` form stored alongside checkpoints.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let widths: Vec<String> = self.widths.iter().map(ToString::to_string).collect();
        let _ = writeln!(s, "burst_len = {}", self.burst_len);
        let _ = writeln!(s, "kernel_size = {}", self.kernel_size);
        let _ = writeln!(s, "widths = {}", widths.join(","));
        let _ = writeln!(s, "channel_attention = {}", self.channel_attention);
        let _ = writeln!(s, "spatial_attention = {}", self.spatial_attention);
        let _ = writeln!(s, "residual_branch = {}", self.residual_branch);
        s
    }

    /// Parse the keys written by [`NetConfig::to_kv`]; unknown keys are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut c = NetConfig::default();
        let bad = |k: &str, v: &str| Error::invalid("net_config", format!("bad value `{v}` for `{k}`"));
        for line in text.lines() {
            let Some((k, v)) = line.split_once('=') else { continue };
            let (k, v) = (k.trim(), v.trim());
            let flag = |v: &str| v.parse::<bool>().map_err(|_| bad(k, v));
            match k {
                "burst_len" => c.burst_len = v.parse().map_err(|_| bad(k, v))?,
                "kernel_size" => c.kernel_size = v.parse().map_err(|_| bad(k, v))?,
                "widths" => {
                    c.widths = v
                        .split(',')
                        .map(|w| w.trim().parse().map_err(|_| bad(k, v)))
                        .collect::<Result<_>>()?
                }
                "channel_attention" => c.channel_attention = flag(v)?,
                "spatial_attention" => c.spatial_attention = flag(v)?,
                "residual_branch" => c.residual_branch = flag(v)?,
                _ => {}
            }
        }
        c.validate()?;
        Ok(c)
    }
}

/// Burst of linear-raw frames `[N, H, W]`; frame 0 is the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Burst<T> {
    frames: Tensor<T>,
}

impl<T: Real> Burst<T> {
    /// Negative intensities are clamped to zero on ingestion.
    pub fn new(frames: Tensor<T>) -> Result<Self> {
        if frames.rank() != 3 || frames.shape()[0] == 0 {
            return Err(Error::shape("burst", "rank", format!("expected [N,H,W] with N >= 1, got {:?}", frames.shape())));
        }
        Ok(Burst {
            frames: frames.map(|v| v.max(T::zero())),
        })
    }

    pub fn frames(&self) -> &Tensor<T> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hw(&self) -> (usize, usize) {
        self.frames.hw()
    }

    pub fn reference(&self) -> Tensor<T> {
        self.frames.index0(0)
    }
}

/// Per-pixel noise standard deviation of the reference frame, `[H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap<T> {
    pub sigma: Tensor<T>,
}

/// Graph handles for the two output branches.
#[derive(Debug, Clone, Copy)]
pub struct PredictionBundle {
    /// `[N, S*S, H, W]`
    pub kernels: Var,
    /// `[N, H, W]`, absent without the residual branch.
    pub residuals: Option<Var>,
    /// `[N, H, W]` logits, absent without the residual branch.
    pub logits: Option<Var>,
}

impl PredictionBundle {
    pub fn kernel_field<T: Real>(&self, g: &Graph<T>) -> Result<KernelField<T>> {
        KernelField::new(g.value(self.kernels).clone())
    }

    pub fn residual_field<T: Real>(&self, g: &Graph<T>) -> Option<ResidualField<T>> {
        self.residuals.map(|r| ResidualField {
            values: g.value(r).clone(),
        })
    }

    pub fn weight_field<T: Real>(&self, g: &Graph<T>) -> Option<WeightField<T>> {
        self.logits.map(|w| WeightField {
            logits: g.value(w).clone(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub bundle: PredictionBundle,
    pub reconstruction: Reconstruction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvSpec {
    name: String,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
}

impl ConvSpec {
    fn new(name: String, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            name,
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        store.insert_he_normal(
            &format!("{}.weight", self.name),
            &[self.out_channels, self.in_channels, self.kernel, self.kernel],
            seed,
        )?;
        store.insert_zeros(&format!("{}.bias", self.name), &[self.out_channels])
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, &format!("{}.weight", self.name))?;
        let b = g.param(store, &format!("{}.bias", self.name))?;
        g.conv2d(x, w, Some(b), 1, self.kernel / 2)
    }
}

/// Two 3x3 conv + ReLU layers.
#[derive(Debug, Clone, PartialEq, Eq)]
struct ConvBlock {
    conv1: ConvSpec,
    conv2: ConvSpec,
}

impl ConvBlock {
    fn new(prefix: &str, in_channels: usize, out_channels: usize) -> Self {
        ConvBlock {
            conv1: ConvSpec::new(format!("{prefix}.conv1"), in_channels, out_channels, 3),
            conv2: ConvSpec::new(format!("{prefix}.conv2"), out_channels, out_channels, 3),
        }
    }

    fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.conv1.register(store, seed)?;
        self.conv2.register(store, seed)
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.conv1.apply(g, store, x)?;
        let y = g.relu(y);
        let y = self.conv2.apply(g, store, y)?;
        Ok(g.relu(y))
    }
}

/// 3x3 conv + ReLU then a 1x1 projection.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Head {
    hidden: ConvSpec,
    out: ConvSpec,
}

impl Head {
    fn new(prefix: &str, features: usize, out_channels: usize) -> Self {
        Head {
            hidden: ConvSpec::new(format!("{prefix}.conv1"), features, features, 3),
            out: ConvSpec::new(format!("{prefix}.conv2"), features, out_channels, 1),
        }
    }

    fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        self.hidden.register(store, seed)?;
        self.out.register(store, seed)
    }

    fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.hidden.apply(g, store, x)?;
        let y = g.relu(y);
        self.out.apply(g, store, y)
    }
}

/// The network structure; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KpnNet {
    config: NetConfig,
    encoder: Vec<ConvBlock>,
    bottleneck: ConvBlock,
    decoder: Vec<(ConvBlock, AttentionBlock)>,
    head_kr: Head,
    head_w: Option<Head>,
}

impl KpnNet {
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let widths = &config.widths;
        let mut encoder = Vec::with_capacity(widths.len());
        let mut in_c = config.burst_len + 1;
        for (i, &w) in widths.iter().enumerate() {
            encoder.push(ConvBlock::new(&format!("encoder.block{i}"), in_c, w));
            in_c = w;
        }
        let deepest = *widths.last().expect("validated non-empty");
        let bottleneck = ConvBlock::new("bottleneck", deepest, deepest);
        let mut decoder = Vec::with_capacity(widths.len());
        for i in 0..widths.len() {
            let below = widths.get(i + 1).copied().unwrap_or(deepest);
            let prefix = format!("decoder.block{i}");
            decoder.push((
                ConvBlock::new(&prefix, below + widths[i], widths[i]),
                AttentionBlock::new(&prefix, widths[i], config.channel_attention, config.spatial_attention)?,
            ));
        }
        let head_kr = Head::new("head_kr", widths[0], config.kr_channels());
        let head_w = config
            .residual_branch
            .then(|| Head::new("head_w", widths[0], config.w_channels()));
        Ok(KpnNet {
            config,
            encoder,
            bottleneck,
            decoder,
            head_kr,
            head_w,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    /// Freshly initialised parameters (He-normal weights, zero biases).
    pub fn init_params<T: Real>(&self, seed: u64) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        for b in &self.encoder {
            b.register(&mut store, seed)?;
        }
        self.bottleneck.register(&mut store, seed)?;
        for (b, a) in &self.decoder {
            b.register(&mut store, seed)?;
            a.register(&mut store, seed)?;
        }
        self.head_kr.register(&mut store, seed)?;
        if let Some(h) = &self.head_w {
            h.register(&mut store, seed)?;
        }
        Ok(store)
    }

    /// Check that `params` has every tensor this network reads, with the right shape.
    pub fn check_params<T: Real>(&self, params: &ParamStore<T>) -> Result<()> {
        let reference = self.init_params::<T>(0)?;
        for (name, t) in reference.iter() {
            let got = params.get(name).ok_or_else(|| Error::UnknownParam(name.into()))?;
            if got.shape() != t.shape() {
                return Err(Error::shape(
                    "check_params",
                    "parameter shape",
                    format!("`{name}`: expected {:?}, got {:?}", t.shape(), got.shape()),
                ));
            }
        }
        Ok(())
    }

    fn check_input<T: Real>(&self, g: &Graph<T>, burst: Var, noise_map: Var) -> Result<(usize, usize)> {
        let bs = g.shape(burst);
        if bs.len() != 3 {
            return Err(Error::shape("extract_features", "rank", format!("burst must be [N,H,W], got {bs:?}")));
        }
        if bs[0] != self.config.burst_len {
            return Err(Error::shape(
                "extract_features",
                "frame count",
                format!("network expects {} frames, burst has {}", self.config.burst_len, bs[0]),
            ));
        }
        let (h, w) = (bs[1], bs[2]);
        if g.shape(noise_map) != [h, w] {
            return Err(Error::shape(
                "extract_features",
                "noise map extent",
                format!("expected [{h}, {w}], got {:?}", g.shape(noise_map)),
            ));
        }
        let m = self.config.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::shape(
                "extract_features",
                "spatial extent",
                format!("{h}x{w} must be a positive multiple of {m}; pad the burst first"),
            ));
        }
        Ok((h, w))
    }

    /// Full-resolution features `[widths[0], H, W]` from `[burst, noise_map]`.
    pub fn extract_features<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        burst: Var,
        noise_map: Var,
    ) -> Result<Var> {
        let (h, w) = self.check_input(g, burst, noise_map)?;
        let sigma = g.reshape(noise_map, &[1, h, w])?;
        let mut x = g.concat_channels(&[burst, sigma])?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            let y = block.apply(g, params, x)?;
            skips.push(y);
            x = g.avg_pool2(y)?;
        }
        x = self.bottleneck.apply(g, params, x)?;
        for ((block, attn), skip) in self.decoder.iter().zip(&skips).rev() {
            let up = g.upsample2_nearest(x)?;
            let merged = g.concat_channels(&[up, *skip])?;
            let y = block.apply(g, params, merged)?;
            x = attn.apply(g, params, y)?;
        }
        Ok(x)
    }

    /// Run both heads and split `head_kr` into kernels and residuals.
    pub fn predict<T: Real>(&self, g: &mut Graph<T>, params: &ParamStore<T>, features: Var) -> Result<PredictionBundle> {
        let (h, w) = g.value(features).hw();
        let (n, taps) = (self.config.burst_len, self.config.taps());
        let kr = self.head_kr.apply(g, params, features)?;
        if g.shape(kr)[0] != self.config.kr_channels() {
            return Err(Error::shape("predict", "head channels", format!("{:?}", g.shape(kr))));
        }
        let k = g.narrow_channels(kr, 0, n * taps)?;
        let kernels = g.reshape(k, &[n, taps, h, w])?;
        let (residuals, logits) = match &self.head_w {
            Some(head) => {
                let r = g.narrow_channels(kr, n * taps, n)?;
                let wl = head.apply(g, params, features)?;
                (Some(r), Some(wl))
            }
            None => (None, None),
        };
        Ok(PredictionBundle {
            kernels,
            residuals,
            logits,
        })
    }

    /// Features, prediction and reconstruction on graph inputs.
    pub fn forward_vars<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        burst: Var,
        noise_map: Var,
    ) -> Result<ForwardOutput> {
        let features = self.extract_features(g, params, burst, noise_map)?;
        let bundle = self.predict(g, params, features)?;
        let reconstruction = match (bundle.residuals, bundle.logits) {
            (Some(r), Some(wl)) => reconstruct(g, burst, bundle.kernels, r, wl)?,
            _ => reconstruct_kernel_only(g, burst, bundle.kernels)?,
        };
        Ok(ForwardOutput {
            bundle,
            reconstruction,
        })
    }

    /// Record a forward pass for `burst`, returning the graph handles.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        burst: &Burst<T>,
        noise_map: &NoiseMap<T>,
    ) -> Result<ForwardOutput> {
        let b = g.input(burst.frames().clone());
        let s = g.input(noise_map.sigma.clone());
        self.forward_vars(g, params, b, s)
    }

    /// Inference: `(denoised [H,W], per_frame [N,H,W])`.
    pub fn denoise<T: Real>(
        &self,
        params: &ParamStore<T>,
        burst: &Burst<T>,
        noise_map: &NoiseMap<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, params, burst, noise_map)?;
        let r = out.reconstruction;
        Ok((g.value(r.denoised).clone(), g.value(r.per_frame).clone()))
    }
}

/// Multiply-accumulate count of one forward pass at `h x w`, for sizing runs.
pub fn forward_macs(config: &NetConfig, h: usize, w: usize) -> u64 {
    let mut macs = 0u64;
    let conv = |cin: usize, cout: usize, k: usize, hh: usize, ww: usize| (cin * cout * k * k * hh * ww) as u64;
    let mut in_c = config.burst_len + 1;
    let (mut hh, mut ww) = (h, w);
    let mut dims = vec![];
    for &wd in &config.widths {
        macs += conv(in_c, wd, 3, hh, ww) + conv(wd, wd, 3, hh, ww);
        dims.push((hh, ww));
        in_c = wd;
        hh /= 2;
        ww /= 2;
    }
    let deepest = *config.widths.last().unwrap_or(&0);
    macs += 2 * conv(deepest, deepest, 3, hh, ww);
    for (i, &wd) in config.widths.iter().enumerate() {
        let below = config.widths.get(i + 1).copied().unwrap_or(deepest);
        let (hh, ww) = dims[i];
        macs += conv(below + wd, wd, 3, hh, ww) + conv(wd, wd, 3, hh, ww);
    }
    let w0 = config.widths[0];
    macs += conv(w0, w0, 3, h, w) + conv(w0, config.kr_channels(), 1, h, w);
    if config.residual_branch {
        macs += conv(w0, w0, 3, h, w) + conv(w0, config.w_channels(), 1, h, w);
    }
    macs
}
