//! Sparsely activated feed-forward layer.
//!
//! A router `W_r` maps each token `x` to gate values `p = softmax(x W_r)`.
//! The token is sent to the `k` most probable experts (ties go to the lowest
//! index) and the layer returns `sum_{i in top-k} p_i * E_i(x)`. With the
//! default `k = 1` exactly one expert runs per token, so the active parameter
//! count per token does not grow with the number of experts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{FeedForward, FeedForwardCache, Linear, INIT_STD};
use crate::nn::ops::{axpy, dot, softmax};
use crate::nn::{ParamBuilder, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchConfig {
    pub n_experts: usize,
    pub top_k: usize,
    /// Weight of the load-balancing term; 0 disables it entirely.
    pub aux_coef: f64,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig { n_experts: 4, top_k: 1, aux_coef: 0.01 }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.top_k == 0 || self.top_k > self.n_experts {
            return Err(Error::Config(format!(
                "switch layer needs 1 <= top_k ({}) <= n_experts ({})",
                self.top_k, self.n_experts
            )));
        }
        if !(self.aux_coef >= 0.0 && self.aux_coef.is_finite()) {
            return Err(Error::Config(format!("aux_coef {} must be finite and >= 0", self.aux_coef)));
        }
        Ok(())
    }
}

/// Router decision for one token.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub probs: Vec<f64>,
    /// Selected experts, most probable first.
    pub chosen: Vec<usize>,
}

impl Gate {
    pub fn top1(&self) -> usize {
        self.chosen[0]
    }
}

/// Indices of the `k` largest values, descending, lowest index first on ties.
pub fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn gate_from_logits(logits: &[f64], k: usize) -> Gate {
    let probs = softmax(logits);
    let chosen = top_k(&probs, k);
    Gate { probs, chosen }
}

/// `n * sum_i f_i * P_i`: equals 1 under perfectly balanced routing and `n`
/// when every token goes to one expert with probability 1.
pub fn load_balance_loss(fractions: &[f64], mean_probs: &[f64]) -> f64 {
    fractions.len() as f64 * dot(fractions, mean_probs)
}

/// Per-expert routing counters; merge across sequences and layers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoutingStats {
    pub tokens: usize,
    /// Token-to-expert assignments per expert.
    pub assigned: Vec<usize>,
    /// Sum of router probabilities per expert.
    pub prob_sum: Vec<f64>,
    /// Number of expert forward evaluations (one per assignment).
    pub evaluations: usize,
}

impl RoutingStats {
    pub fn new(n_experts: usize) -> Self {
        RoutingStats { tokens: 0, assigned: vec![0; n_experts], prob_sum: vec![0.0; n_experts], evaluations: 0 }
    }

    /// Stats from explicit probabilities and assignments.
    pub fn from_assignments(probs: &[Vec<f64>], assignments: &[Vec<usize>]) -> Self {
        let n = probs.first().map_or(0, Vec::len);
        let mut s = RoutingStats::new(n);
        for (p, a) in probs.iter().zip(assignments) {
            s.record(p, a);
        }
        s
    }

    fn record(&mut self, probs: &[f64], chosen: &[usize]) {
        self.tokens += 1;
        axpy(1.0, probs, &mut self.prob_sum);
        for &e in chosen {
            self.assigned[e] += 1;
        }
    }

    pub fn merge(&mut self, other: &RoutingStats) {
        if self.assigned.is_empty() {
            *self = other.clone();
            return;
        }
        self.tokens += other.tokens;
        self.evaluations += other.evaluations;
        for (a, b) in self.assigned.iter_mut().zip(&other.assigned) {
            *a += b;
        }
        axpy(1.0, &other.prob_sum, &mut self.prob_sum);
    }

    /// `f_i`: share of assignments routed to expert `i`.
    pub fn fractions(&self) -> Vec<f64> {
        let total: usize = self.assigned.iter().sum();
        self.assigned.iter().map(|&c| c as f64 / total.max(1) as f64).collect()
    }

    /// `P_i`: mean router probability of expert `i`.
    pub fn mean_probs(&self) -> Vec<f64> {
        self.prob_sum.iter().map(|&s| s / self.tokens.max(1) as f64).collect()
    }

    pub fn load_balance_loss(&self) -> f64 {
        load_balance_loss(&self.fractions(), &self.mean_probs())
    }
}

#[derive(Clone, Debug)]
pub struct SwitchLayer {
    pub router: Linear,
    pub experts: Vec<FeedForward>,
    pub cfg: SwitchConfig,
}

#[derive(Clone, Debug)]
struct ExpertBatch {
    tokens: Vec<usize>,
    cache: FeedForwardCache,
    out: Tensor,
}

#[derive(Clone, Debug)]
pub struct SwitchCache {
    x: Tensor,
    gates: Vec<Gate>,
    batches: Vec<Option<ExpertBatch>>,
    fractions: Vec<f64>,
    pub stats: RoutingStats,
    /// Weighted load-balancing loss of this call (0 when disabled).
    pub aux_loss: f64,
}

impl SwitchLayer {
    pub fn new(pb: &mut ParamBuilder, name: &str, dim: usize, cfg: SwitchConfig) -> Self {
        Self::with_router_std(pb, name, dim, cfg, INIT_STD)
    }

    pub fn with_router_std(pb: &mut ParamBuilder, name: &str, dim: usize, cfg: SwitchConfig, std: f64) -> Self {
        let router = Linear::with_init(pb, &format!("{name}.router"), dim, cfg.n_experts, std, false);
        let experts = (0..cfg.n_experts).map(|i| FeedForward::new(pb, &format!("{name}.expert{i}"), dim, 4 * dim)).collect();
        SwitchLayer { router, experts, cfg }
    }

    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn gate(&self, p: &[f64], x: &[f64]) -> Gate {
        let xt = Tensor::from_vec(&[1, x.len()], x.to_vec()).expect("row vector");
        gate_from_logits(self.router.forward(p, &xt).data(), self.cfg.top_k)
    }

    pub fn forward(&self, p: &[f64], x: &Tensor) -> (Tensor, SwitchCache) {
        let logits = self.router.forward(p, x);
        let gates: Vec<Gate> = (0..x.rows()).map(|t| gate_from_logits(logits.row(t), self.cfg.top_k)).collect();
        self.forward_with_gates(p, x, gates)
    }

    /// Evaluates the experts under the given routing decisions. Tokens are
    /// grouped per expert so each expert runs once on its batch.
    pub fn forward_with_gates(&self, p: &[f64], x: &Tensor, gates: Vec<Gate>) -> (Tensor, SwitchCache) {
        let n = self.n_experts();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut stats = RoutingStats::new(n);
        for (t, gate) in gates.iter().enumerate() {
            stats.record(&gate.probs, &gate.chosen);
            for &e in &gate.chosen {
                members[e].push(t);
            }
        }
        let mut y = Tensor::zeros(x.shape());
        let mut batches = Vec::with_capacity(n);
        for (e, tokens) in members.into_iter().enumerate() {
            if tokens.is_empty() {
                batches.push(None);
                continue;
            }
            let (out, cache) = self.experts[e].forward(p, &x.gather_rows(&tokens));
            stats.evaluations += tokens.len();
            for (m, &t) in tokens.iter().enumerate() {
                axpy(gates[t].probs[e], out.row(m), y.row_mut(t));
            }
            batches.push(Some(ExpertBatch { tokens, cache, out }));
        }
        let fractions = stats.fractions();
        let aux_loss = if self.cfg.aux_coef != 0.0 { self.cfg.aux_coef * stats.load_balance_loss() } else { 0.0 };
        (y, SwitchCache { x: x.clone(), gates, batches, fractions, stats, aux_loss })
    }

    /// Backpropagates `dy` plus the load-balancing term. Gradients reach the
    /// router through the gate values that scale the expert outputs.
    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &SwitchCache, dy: &Tensor) -> Tensor {
        let n = self.n_experts();
        let t_len = dy.rows();
        let mut dx = Tensor::zeros(dy.shape());
        let mut dprob = vec![0.0; t_len * n];
        for (e, batch) in cache.batches.iter().enumerate() {
            let Some(batch) = batch else { continue };
            let mut dout = Tensor::zeros(batch.out.shape());
            for (m, &t) in batch.tokens.iter().enumerate() {
                let pe = cache.gates[t].probs[e];
                axpy(pe, dy.row(t), dout.row_mut(m));
                dprob[t * n + e] += dot(dy.row(t), batch.out.row(m));
            }
            let dxe = self.experts[e].backward(p, g, &batch.cache, &dout);
            for (m, &t) in batch.tokens.iter().enumerate() {
                axpy(1.0, dxe.row(m), dx.row_mut(t));
            }
        }
        if self.cfg.aux_coef != 0.0 && t_len > 0 {
            let scale = self.cfg.aux_coef * n as f64 / t_len as f64;
            for t in 0..t_len {
                axpy(scale, &cache.fractions, &mut dprob[t * n..(t + 1) * n]);
            }
        }
        let mut dlogits = Tensor::zeros(&[t_len, n]);
        for t in 0..t_len {
            let probs = &cache.gates[t].probs;
            let dp = &dprob[t * n..(t + 1) * n];
            let inner = dot(probs, dp);
            for (i, d) in dlogits.row_mut(t).iter_mut().enumerate() {
                *d = probs[i] * (dp[i] - inner);
            }
        }
        dx.add_assign(&self.router.backward(p, g, &cache.x, &dlogits));
        dx
    }

    pub fn n_params(&self) -> usize {
        self.router.n_params() + self.experts.iter().map(FeedForward::n_params).sum::<usize>()
    }

    /// Parameters touched by one token: the router plus `k` experts.
    pub fn active_params_per_token(&self) -> usize {
        self.router.n_params() + self.cfg.top_k * self.experts[0].n_params()
    }
}
