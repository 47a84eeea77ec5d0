use serde::{Deserialize, Serialize};

use crate::dataset::StepTokens;
use crate::error::{Error, Result};
use crate::gridworld::ActionId;
use crate::nn::layers::{LayerNormCache, INIT_STD};
use crate::nn::ops::axpy;
use crate::nn::{Backbone, BackboneCache, Embedding, LayerNorm, Linear, ParamBuilder, Tensor, TransformerConfig};
use crate::switch::RoutingStats;

/// Token kinds inside one timestep group, in stream order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Task = 0,
    ReturnToGo = 1,
    State = 2,
    Action = 3,
}

/// Input description shared by every sequence model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqNetConfig {
    pub transformer: TransformerConfig,
    pub n_tasks: usize,
    pub state_vocab: Vec<usize>,
    /// Whether groups carry a return-to-go token.
    pub with_rtg: bool,
    /// Multiplier applied to return-to-go values before embedding.
    pub rtg_scale: f64,
}

/// Embeds `(task, [return-to-go], state, action)` groups, runs the causal
/// backbone and a final layer norm. Every token of a group shares the
/// group's positional embedding (its index inside the window).
#[derive(Clone, Debug)]
pub struct SeqNet {
    pub cfg: SeqNetConfig,
    task: Embedding,
    rtg: Option<Linear>,
    state: Vec<Embedding>,
    action: Embedding,
    pos: Embedding,
    kind: Embedding,
    pub backbone: Backbone,
    ln_f: LayerNorm,
}

/// Token positions of one group in the flattened stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupPositions {
    pub task: usize,
    pub rtg: Option<usize>,
    pub state: usize,
    pub action: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct SeqCache {
    pub positions: Vec<GroupPositions>,
    tokens: Vec<(usize, TokenKind, usize)>,
    rtg_in: Tensor,
    states: Vec<Vec<u16>>,
    backbone: BackboneCache,
    ln_f: LayerNormCache,
}

impl SeqCache {
    pub fn aux_loss(&self) -> f64 {
        self.backbone.aux_loss()
    }

    pub fn routing(&self) -> Option<RoutingStats> {
        self.backbone.routing()
    }
}

impl SeqNet {
    pub fn new(pb: &mut ParamBuilder, cfg: SeqNetConfig) -> Result<Self> {
        cfg.transformer.validate()?;
        if cfg.n_tasks == 0 || cfg.state_vocab.is_empty() || cfg.state_vocab.contains(&0) {
            return Err(Error::Config("sequence model needs tasks and non-empty state vocabularies".into()));
        }
        let d = cfg.transformer.d_embed;
        let state = cfg
            .state_vocab
            .iter()
            .enumerate()
            .map(|(i, &v)| Embedding::new(pb, &format!("embed.state{i}"), v, d))
            .collect();
        Ok(SeqNet {
            task: Embedding::new(pb, "embed.task", cfg.n_tasks, d),
            rtg: cfg.with_rtg.then(|| Linear::with_init(pb, "embed.rtg", 1, d, INIT_STD, true)),
            state,
            action: Embedding::new(pb, "embed.action", ActionId::COUNT, d),
            pos: Embedding::new(pb, "embed.pos", cfg.transformer.context, d),
            kind: Embedding::new(pb, "embed.kind", 4, d),
            backbone: Backbone::new(pb, "blocks", &cfg.transformer),
            ln_f: LayerNorm::new(pb, "ln_f", d),
            cfg,
        })
    }

    pub fn d_embed(&self) -> usize {
        self.cfg.transformer.d_embed
    }

    pub fn context(&self) -> usize {
        self.cfg.transformer.context
    }

    /// Rejects inputs the embedding tables cannot represent.
    pub fn check(&self, groups: &[StepTokens]) -> Result<()> {
        if groups.is_empty() || groups.len() > self.context() {
            return Err(Error::Shape(format!("{} groups for a context of {}", groups.len(), self.context())));
        }
        for (i, g) in groups.iter().enumerate() {
            if g.task as usize >= self.cfg.n_tasks {
                return Err(Error::Vocabulary(format!("task {} but the model knows {} tasks", g.task, self.cfg.n_tasks)));
            }
            if g.state.0.len() != self.cfg.state_vocab.len()
                || g.state.0.iter().zip(&self.cfg.state_vocab).any(|(&c, &v)| c as usize >= v)
            {
                return Err(Error::Vocabulary(format!("state {:?} outside vocabulary {:?}", g.state.0, self.cfg.state_vocab)));
            }
            if g.action.is_none() && i + 1 != groups.len() {
                return Err(Error::Shape("only the last group may omit its action".into()));
            }
        }
        Ok(())
    }

    pub fn forward(&self, p: &[f64], groups: &[StepTokens]) -> Result<(Tensor, SeqCache)> {
        self.check(groups)?;
        let d = self.d_embed();
        let mut tokens = Vec::with_capacity(groups.len() * 4);
        let mut positions = Vec::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            let task = tokens.len();
            tokens.push((i, TokenKind::Task, g.task as usize));
            let rtg = self.cfg.with_rtg.then(|| {
                tokens.push((i, TokenKind::ReturnToGo, i));
                tokens.len() - 1
            });
            let state = tokens.len();
            tokens.push((i, TokenKind::State, i));
            let action = g.action.map(|a| {
                tokens.push((i, TokenKind::Action, a.index()));
                tokens.len() - 1
            });
            positions.push(GroupPositions { task, rtg, state, action });
        }

        let rtg_in = Tensor::from_vec(&[groups.len(), 1], groups.iter().map(|g| g.rtg * self.cfg.rtg_scale).collect())?;
        let rtg_emb = self.rtg.as_ref().map(|l| l.forward(p, &rtg_in));
        let mut x = Tensor::zeros(&[tokens.len(), d]);
        for (row, &(group, kind, id)) in tokens.iter().enumerate() {
            let out = x.row_mut(row);
            out.copy_from_slice(self.pos.row(p, group));
            axpy(1.0, self.kind.row(p, kind as usize), out);
            match kind {
                TokenKind::Task => axpy(1.0, self.task.row(p, id), out),
                TokenKind::ReturnToGo => axpy(1.0, rtg_emb.as_ref().expect("rtg layer").row(id), out),
                TokenKind::State => {
                    for (emb, &c) in self.state.iter().zip(&groups[id].state.0) {
                        axpy(1.0, emb.row(p, c as usize), out);
                    }
                }
                TokenKind::Action => axpy(1.0, self.action.row(p, id), out),
            }
        }
        let (h, backbone) = self.backbone.forward(p, &x);
        let (y, ln_f) = self.ln_f.forward(p, &h);
        let states = groups.iter().map(|g| g.state.0.clone()).collect();
        Ok((y, SeqCache { positions, tokens, rtg_in, states, backbone, ln_f }))
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &SeqCache, dy: &Tensor) {
        let dh = self.ln_f.backward(p, g, &cache.ln_f, dy);
        let dx = self.backbone.backward(p, g, &cache.backbone, &dh);
        let mut drtg = self.rtg.as_ref().map(|_| Tensor::zeros(&[cache.positions.len(), self.d_embed()]));
        for (row, &(group, kind, id)) in cache.tokens.iter().enumerate() {
            let d = dx.row(row);
            self.pos.backward_row(g, group, d);
            self.kind.backward_row(g, kind as usize, d);
            match kind {
                TokenKind::Task => self.task.backward_row(g, id, d),
                TokenKind::ReturnToGo => drtg.as_mut().expect("rtg layer").row_mut(id).copy_from_slice(d),
                TokenKind::State => {
                    for (emb, &c) in self.state.iter().zip(&cache.states[id]) {
                        emb.backward_row(g, c as usize, d);
                    }
                }
                TokenKind::Action => self.action.backward_row(g, id, d),
            }
        }
        if let (Some(l), Some(drtg)) = (&self.rtg, drtg) {
            l.backward_params(g, &cache.rtg_in, &drtg);
        }
    }
}
