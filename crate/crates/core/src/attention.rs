//! Channel and spatial attention gates applied to decoder features.
//!
//! Channel gate: `sigmoid(mlp(avgpool(F)) + mlp(maxpool(F)))` per channel,
//! with a shared `C -> C/r -> C` bottleneck. Spatial gate:
//! `sigmoid(conv_k([mean_c(F), max_c(F)]))` per pixel. The block applies the
//! channel gate first and the spatial gate to its output.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{Graph, Var};
use crate::tensor::Real;

pub const DEFAULT_SPATIAL_KERNEL: usize = 7;
const MAX_REDUCTION: usize = 16;

/// Bottleneck reduction ratio for `channels`: 16 when there are at least 16
/// channels, otherwise `channels` (a single hidden unit).
pub fn default_reduction(channels: usize) -> usize {
    channels.clamp(1, MAX_REDUCTION)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelAttention {
    prefix: String,
    pub channels: usize,
    pub reduction: usize,
}

impl ChannelAttention {
    pub fn new(prefix: &str, channels: usize, reduction: usize) -> Result<Self> {
        if channels == 0 || reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::invalid(
                "channel_attention",
                format!("reduction {reduction} does not divide {channels} channels"),
            ));
        }
        Ok(ChannelAttention {
            prefix: format!("{prefix}.channel_attn"),
            channels,
            reduction,
        })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    fn name(&self, leaf: &str) -> String {
        format!("{}.{leaf}", self.prefix)
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        let (c, h) = (self.channels, self.hidden());
        store.insert_he_normal(&self.name("fc1.weight"), &[h, c, 1, 1], seed)?;
        store.insert_zeros(&self.name("fc1.bias"), &[h])?;
        store.insert_he_normal(&self.name("fc2.weight"), &[c, h, 1, 1], seed)?;
        store.insert_zeros(&self.name("fc2.bias"), &[c])?;
        Ok(())
    }

    fn mlp<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, pooled: Var) -> Result<Var> {
        let w1 = g.param(store, &self.name("fc1.weight"))?;
        let b1 = g.param(store, &self.name("fc1.bias"))?;
        let w2 = g.param(store, &self.name("fc2.weight"))?;
        let b2 = g.param(store, &self.name("fc2.bias"))?;
        let x = g.reshape(pooled, &[self.channels, 1, 1])?;
        let hidden = g.conv2d(x, w1, Some(b1), 1, 0)?;
        let hidden = g.relu(hidden);
        let out = g.conv2d(hidden, w2, Some(b2), 1, 0)?;
        g.reshape(out, &[self.channels])
    }

    /// Per-channel gate in `(0, 1)`, shape `[C]`.
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        if g.shape(features).first() != Some(&self.channels) {
            return Err(Error::shape(
                "channel_attention",
                "channels",
                format!("expected {} channels, got {:?}", self.channels, g.shape(features)),
            ));
        }
        let avg = g.global_avg_pool(features)?;
        let max = g.global_max_pool(features)?;
        let a = self.mlp(g, store, avg)?;
        let m = self.mlp(g, store, max)?;
        let logits = g.add(a, m)?;
        Ok(g.sigmoid(logits))
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        let gate = self.gate(g, store, features)?;
        g.scale_channels(features, gate)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialAttention {
    prefix: String,
    pub kernel: usize,
}

impl SpatialAttention {
    pub fn new(prefix: &str, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::invalid("spatial_attention", format!("kernel size {kernel} must be odd")));
        }
        Ok(SpatialAttention {
            prefix: format!("{prefix}.spatial_attn"),
            kernel,
        })
    }

    fn weight_name(&self) -> String {
        format!("{}.conv.weight", self.prefix)
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        store.insert_he_normal(&self.weight_name(), &[1, 2, self.kernel, self.kernel], seed)
    }

    /// Per-pixel gate in `(0, 1)`, shape `[1, H, W]`.
    pub fn gate<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        let w = g.param(store, &self.weight_name())?;
        let mean = g.channel_mean(features)?;
        let max = g.channel_max(features)?;
        let descriptor = g.concat_channels(&[mean, max])?;
        let logits = g.conv2d(descriptor, w, None, 1, self.kernel / 2)?;
        Ok(g.sigmoid(logits))
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        let gate = self.gate(g, store, features)?;
        g.scale_spatial(features, gate)
    }
}

/// Attention stage of one decoder block; a disabled gate is the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionBlock {
    pub channel: Option<ChannelAttention>,
    pub spatial: Option<SpatialAttention>,
}

impl AttentionBlock {
    pub fn new(prefix: &str, channels: usize, enable_channel: bool, enable_spatial: bool) -> Result<Self> {
        Ok(AttentionBlock {
            channel: enable_channel
                .then(|| ChannelAttention::new(prefix, channels, default_reduction(channels)))
                .transpose()?,
            spatial: enable_spatial
                .then(|| SpatialAttention::new(prefix, DEFAULT_SPATIAL_KERNEL))
                .transpose()?,
        })
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, seed: u64) -> Result<()> {
        if let Some(c) = &self.channel {
            c.register(store, seed)?;
        }
        if let Some(s) = &self.spatial {
            s.register(store, seed)?;
        }
        Ok(())
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, features: Var) -> Result<Var> {
        let mut x = features;
        if let Some(c) = &self.channel {
            x = c.apply(g, store, x)?;
        }
        if let Some(s) = &self.spatial {
            x = s.apply(g, store, x)?;
        }
        Ok(x)
    }
}
