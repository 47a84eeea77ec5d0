use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, CausalSelfAttention};
use super::layers::{FeedForward, FeedForwardCache, LayerNorm, LayerNormCache};
use super::params::ParamBuilder;
use super::Tensor;
use crate::error::{Error, Result};
use crate::switch::{RoutingStats, SwitchCache, SwitchConfig, SwitchLayer};

/// Feed-forward sublayer choice; the switch variant is a drop-in
/// replacement with identical input and output shapes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FfnKind {
    Dense,
    Switch(SwitchConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Small,
    Medium,
    Large,
}

impl Preset {
    /// `(heads, layers, embedding)`.
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Preset::Small => (4, 4, 64),
            Preset::Medium => (8, 4, 64),
            Preset::Large => (8, 4, 128),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_head: usize,
    pub n_layer: usize,
    pub d_embed: usize,
    /// Maximum number of timestep groups in one sequence.
    pub context: usize,
    pub ffn: FfnKind,
}

impl TransformerConfig {
    pub fn preset(preset: Preset, context: usize, ffn: FfnKind) -> Self {
        let (n_head, n_layer, d_embed) = preset.dims();
        TransformerConfig { n_head, n_layer, d_embed, context, ffn }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_head == 0 || self.d_embed == 0 || self.d_embed % self.n_head != 0 {
            return Err(Error::Config(format!("d_embed {} not divisible by n_head {}", self.d_embed, self.n_head)));
        }
        if self.context == 0 {
            return Err(Error::Config("context must be at least 1".into()));
        }
        if let FfnKind::Switch(s) = self.ffn {
            s.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Ffn {
    Dense(FeedForward),
    Switch(SwitchLayer),
}

#[derive(Clone, Debug)]
enum FfnCache {
    Dense(FeedForwardCache),
    Switch(SwitchCache),
}

/// Pre-norm transformer block:
/// `x + attn(ln1(x))`, then `+ ffn(ln2(.))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: CausalSelfAttention,
    pub ln2: LayerNorm,
    pub ffn: Ffn,
}

#[derive(Clone, Debug)]
pub struct BlockCache {
    ln1: LayerNormCache,
    attn: AttentionCache,
    ln2: LayerNormCache,
    ffn: FfnCache,
}

impl BlockCache {
    pub fn aux_loss(&self) -> f64 {
        match &self.ffn {
            FfnCache::Switch(c) => c.aux_loss,
            FfnCache::Dense(_) => 0.0,
        }
    }

    pub fn routing(&self) -> Option<&RoutingStats> {
        match &self.ffn {
            FfnCache::Switch(c) => Some(&c.stats),
            FfnCache::Dense(_) => None,
        }
    }
}

impl Block {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        let d = cfg.d_embed;
        let ffn = match cfg.ffn {
            FfnKind::Dense => Ffn::Dense(FeedForward::new(pb, &format!("{name}.ffn"), d, 4 * d)),
            FfnKind::Switch(s) => Ffn::Switch(SwitchLayer::new(pb, &format!("{name}.switch"), d, s)),
        };
        Block {
            ln1: LayerNorm::new(pb, &format!("{name}.ln1"), d),
            attn: CausalSelfAttention::new(pb, &format!("{name}.attn"), d, cfg.n_head),
            ln2: LayerNorm::new(pb, &format!("{name}.ln2"), d),
            ffn,
        }
    }

    /// Position `t` of the output depends only on input positions `<= t`.
    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, BlockCache) {
        let (h1, ln1) = self.ln1.forward(p, x);
        let (a, attn) = self.attn.forward(p, &h1);
        let mut x2 = x.clone();
        x2.add_assign(&a);
        let (h2, ln2) = self.ln2.forward(p, &x2);
        let (f, ffn) = match &self.ffn {
            Ffn::Dense(l) => {
                let (f, c) = l.forward(p, &h2);
                (f, FfnCache::Dense(c))
            }
            Ffn::Switch(l) => {
                let (f, c) = l.forward(p, &h2);
                (f, FfnCache::Switch(c))
            }
        };
        x2.add_assign(&f);
        (x2, BlockCache { ln1, attn, ln2, ffn })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &BlockCache, dy: &Tensor) -> Tensor {
        let dh2 = match (&self.ffn, &cache.ffn) {
            (Ffn::Dense(l), FfnCache::Dense(c)) => l.backward(p, g, c, dy),
            (Ffn::Switch(l), FfnCache::Switch(c)) => l.backward(p, g, c, dy),
            _ => unreachable!("cache built by a different ffn kind"),
        };
        let mut dx2 = dy.clone();
        dx2.add_assign(&self.ln2.backward(p, g, &cache.ln2, &dh2));
        let dh1 = self.attn.backward(p, g, &cache.attn, &dx2);
        let mut dx = dx2;
        dx.add_assign(&self.ln1.backward(p, g, &cache.ln1, &dh1));
        dx
    }
}

/// Stack of blocks. With zero blocks it returns its input unchanged.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug)]
pub struct BackboneCache {
    blocks: Vec<BlockCache>,
}

impl BackboneCache {
    /// Sum of the weighted load-balancing losses of all switch layers.
    pub fn aux_loss(&self) -> f64 {
        self.blocks.iter().map(BlockCache::aux_loss).sum()
    }

    /// Routing counters merged over all switch layers.
    pub fn routing(&self) -> Option<RoutingStats> {
        let mut total: Option<RoutingStats> = None;
        for s in self.blocks.iter().filter_map(BlockCache::routing) {
            match &mut total {
                Some(t) => t.merge(s),
                None => total = Some(s.clone()),
            }
        }
        total
    }
}

impl Backbone {
    pub fn new(pb: &mut ParamBuilder, name: &str, cfg: &TransformerConfig) -> Self {
        Backbone { blocks: (0..cfg.n_layer).map(|i| Block::new(pb, &format!("{name}.h{i}"), cfg)).collect() }
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, BackboneCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (next, c) = b.forward(p, &h);
            caches.push(c);
            h = next;
        }
        (h, BackboneCache { blocks: caches })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &BackboneCache, dy: &Tensor) -> Tensor {
        let mut d = dy.clone();
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            d = b.backward(p, g, c, &d);
        }
        d
    }
}
