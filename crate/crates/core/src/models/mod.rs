//! The three sequence models and the mean-value baseline.
//!
//! All share [`SeqNet`] and differ in token layout, head and loss:
//!
//! | kind       | groups                        | head position      | output               | loss                          |
//! |------------|-------------------------------|--------------------|----------------------|-------------------------------|
//! | `action`   | task, return-to-go, state, action | every state token | 7 action logits      | cross-entropy                 |
//! | `dynamics` | task, state, action           | every action token | one softmax per state component | summed cross-entropies |
//! | `rtg`      | task, state, action (last `w`) | last action token | `N` atom logits      | cross-entropy on the atom label |
//! | `mean_rtg` | task, state, action (last `w`) | last action token | scalar               | squared error                 |
//!
//! The action model drops the return-to-go token in behaviour-cloning mode.

mod net;
mod train;
mod value;

pub use net::{GroupPositions, SeqCache, SeqNet, SeqNetConfig, TokenKind};
pub use train::{batch_loss_and_grad, evaluate_loss, tile_windows, train, EpochMetrics, TrainConfig, TrainReport, WindowRef};
pub use value::{atom_label, expected_value, AtomSupport, ValueDistribution};

use serde::{Deserialize, Serialize};

use crate::dataset::{window, Dataset, StateEncoding, StepTokens, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::ActionId;
use crate::nn::ops::{argmax, cross_entropy, softmax};
use crate::nn::{checkpoint, Linear, ParamBuilder, ParamSet, Tensor, TransformerConfig};
use crate::switch::RoutingStats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Action,
    Dynamics,
    Rtg,
    MeanRtg,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Action => "action",
            ModelKind::Dynamics => "dynamics",
            ModelKind::Rtg => "rtg",
            ModelKind::MeanRtg => "mean_rtg",
        }
    }

    /// Whether every timestep of a window is supervised (otherwise only the last).
    pub fn supervises_every_step(self) -> bool {
        matches!(self, ModelKind::Action | ModelKind::Dynamics)
    }
}

mod seed_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&seed.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

/// Everything needed to rebuild a model; stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Stored as a string: TOML integers are signed 64-bit.
    #[serde(with = "seed_text")]
    pub seed: u64,
    /// Return scale: inputs are divided by it, the mean head predicts in its units.
    pub value_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<AtomSupport>,
    pub net: SeqNetConfig,
}

impl ModelSpec {
    /// Action model; `with_rtg = false` gives the behaviour-cloning variant.
    pub fn action(t: TransformerConfig, n_tasks: usize, vocab: Vec<usize>, with_rtg: bool, value_max: f64, seed: u64) -> Self {
        Self::build(ModelKind::Action, t, n_tasks, vocab, with_rtg, value_max, None, seed)
    }

    pub fn dynamics(t: TransformerConfig, n_tasks: usize, vocab: Vec<usize>, seed: u64) -> Self {
        Self::build(ModelKind::Dynamics, t, n_tasks, vocab, false, 1.0, None, seed)
    }

    /// Distributional return-to-go model; `t.context` is the window `w`.
    pub fn rtg(t: TransformerConfig, n_tasks: usize, vocab: Vec<usize>, atoms: AtomSupport, seed: u64) -> Self {
        Self::build(ModelKind::Rtg, t, n_tasks, vocab, false, atoms.v_max, Some(atoms), seed)
    }

    pub fn mean_rtg(t: TransformerConfig, n_tasks: usize, vocab: Vec<usize>, value_max: f64, seed: u64) -> Self {
        Self::build(ModelKind::MeanRtg, t, n_tasks, vocab, false, value_max, None, seed)
    }

    #[allow(clippy::too_many_arguments)]
    fn build(
        kind: ModelKind,
        transformer: TransformerConfig,
        n_tasks: usize,
        state_vocab: Vec<usize>,
        with_rtg: bool,
        value_max: f64,
        atoms: Option<AtomSupport>,
        seed: u64,
    ) -> Self {
        let net = SeqNetConfig { transformer, n_tasks, state_vocab, with_rtg, rtg_scale: 1.0 / value_max };
        ModelSpec { kind, seed, value_max, atoms, net }
    }

    fn head_dim(&self) -> Result<usize> {
        Ok(match self.kind {
            ModelKind::Action => ActionId::COUNT,
            ModelKind::Dynamics => self.net.state_vocab.iter().sum(),
            ModelKind::Rtg => self.atoms.ok_or_else(|| Error::Config("rtg model needs an atom support".into()))?.n,
            ModelKind::MeanRtg => 1,
        })
    }
}

/// Loss of one training window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleLoss {
    /// Task loss, excluding load balancing.
    pub loss: f64,
    /// Weighted load-balancing loss (0 for dense models).
    pub aux: f64,
    pub routing: Option<RoutingStats>,
}

/// A sequence model: [`SeqNet`] plus a kind-specific linear head.
#[derive(Clone, Debug)]
pub struct SeqModel {
    pub spec: ModelSpec,
    pub net: SeqNet,
    pub head: Linear,
    pub params: ParamSet,
}

impl SeqModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        if !(spec.value_max > 0.0 && spec.value_max.is_finite()) {
            return Err(Error::Config(format!("value_max {} must be positive", spec.value_max)));
        }
        let head_dim = spec.head_dim()?;
        let mut pb = ParamBuilder::new(spec.seed);
        let net = SeqNet::new(&mut pb, spec.net.clone())?;
        let head = Linear::new(&mut pb, "head", spec.net.transformer.d_embed, head_dim);
        Ok(SeqModel { spec, net, head, params: pb.finish() })
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn context(&self) -> usize {
        self.net.context()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// Parameters one token passes through: every switch layer counts its
    /// router and `top_k` experts only.
    pub fn active_params_per_token(&self) -> usize {
        let idle: usize = self
            .net
            .backbone
            .blocks
            .iter()
            .map(|b| match &b.ffn {
                crate::nn::Ffn::Switch(s) => s.n_params() - s.active_params_per_token(),
                crate::nn::Ffn::Dense(_) => 0,
            })
            .sum();
        self.n_params() - idle
    }

    /// Checks that the dataset's tasks and state vocabulary fit the model.
    pub fn check_dataset(&self, d: &Dataset) -> Result<()> {
        if d.schema.vocab() != self.spec.net.state_vocab {
            return Err(Error::Vocabulary(format!(
                "dataset state vocabulary {:?} differs from the model's {:?}",
                d.schema.vocab(),
                self.spec.net.state_vocab
            )));
        }
        if let Some(t) = d.episodes.iter().map(|e| e.task_id).max() {
            if t as usize >= self.spec.net.n_tasks {
                return Err(Error::Vocabulary(format!("task id {t} but the model knows {} tasks", self.spec.net.n_tasks)));
            }
        }
        Ok(())
    }

    /// Loss of the window ending at step `end`, optionally accumulating the
    /// gradient of `loss + aux` into `grads`.
    pub fn sample_loss(&self, p: &[f64], traj: &Trajectory, end: usize, grads: Option<&mut [f64]>) -> Result<SampleLoss> {
        let groups = window(traj, end, self.context(), false).groups;
        let (h, cache) = self.net.forward(p, &groups)?;
        let rows: Vec<usize> = match self.kind() {
            ModelKind::Action => cache.positions.iter().map(|g| g.state).collect(),
            ModelKind::Dynamics => cache.positions.iter().map(|g| g.action.expect("full window")).collect(),
            ModelKind::Rtg | ModelKind::MeanRtg => vec![cache.positions.last().and_then(|g| g.action).expect("full window")],
        };
        let x = h.gather_rows(&rows);
        let out = self.head.forward(p, &x);
        let mut dout = Tensor::zeros(out.shape());
        let m = rows.len() as f64;
        let mut loss = 0.0;
        match self.kind() {
            ModelKind::Action => {
                for (r, g) in groups.iter().enumerate() {
                    let (l, d) = cross_entropy(out.row(r), g.action.expect("full window").index())?;
                    loss += l / m;
                    dout.row_mut(r).iter_mut().zip(d).for_each(|(o, v)| *o = v / m);
                }
            }
            ModelKind::Dynamics => {
                let start = end + 1 - groups.len();
                for r in 0..groups.len() {
                    let next = traj.next_state(start + r);
                    let mut offset = 0;
                    for (&v, &target) in self.spec.net.state_vocab.iter().zip(&next.0) {
                        let (l, d) = cross_entropy(&out.row(r)[offset..offset + v], target as usize)?;
                        loss += l / m;
                        dout.row_mut(r)[offset..offset + v].iter_mut().zip(d).for_each(|(o, g)| *o = g / m);
                        offset += v;
                    }
                }
            }
            ModelKind::Rtg => {
                let atoms = self.spec.atoms.expect("checked at construction");
                let (l, d) = cross_entropy(out.row(0), atoms.label(traj.returns_to_go[end]))?;
                loss = l;
                dout.row_mut(0).copy_from_slice(&d);
            }
            ModelKind::MeanRtg => {
                let target = traj.returns_to_go[end] / self.spec.value_max;
                let err = out.row(0)[0] - target;
                loss = err * err;
                dout.row_mut(0)[0] = 2.0 * err;
            }
        }
        if let Some(g) = grads {
            let dx = self.head.backward(p, g, &x, &dout);
            let mut dh = Tensor::zeros(h.shape());
            for (r, &row) in rows.iter().enumerate() {
                dh.row_mut(row).copy_from_slice(dx.row(r));
            }
            self.net.backward(p, g, &cache, &dh);
        }
        Ok(SampleLoss { loss, aux: cache.aux_loss(), routing: cache.routing() })
    }

    fn expect_kind(&self, kinds: &[ModelKind], what: &str) -> Result<()> {
        if kinds.contains(&self.kind()) {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} is not available on a {} model", self.kind().name())))
        }
    }

    /// Head output at token `pick` of the (context-truncated) history.
    fn head_at(&self, history: &[StepTokens], pick: impl Fn(&GroupPositions) -> Option<usize>) -> Result<Vec<f64>> {
        let start = history.len().saturating_sub(self.context());
        let groups = &history[start..];
        let (h, cache) = self.net.forward(&self.params.values, groups)?;
        let last = cache.positions.last().expect("non-empty history");
        let row = pick(last).ok_or_else(|| Error::Shape("history does not end with the required token".into()))?;
        Ok(self.head.forward(&self.params.values, &h.gather_rows(&[row])).into_data())
    }

    /// Action logits for a history whose last group ends at its state.
    pub fn action_logits(&self, history: &[StepTokens]) -> Result<Vec<f64>> {
        self.expect_kind(&[ModelKind::Action], "action prediction")?;
        if history.last().is_some_and(|g| g.action.is_some()) {
            return Err(Error::Shape("action query must end at a state token".into()));
        }
        self.head_at(history, |g| Some(g.state))
    }

    /// Per-component next-state distributions for a history ending at an action.
    pub fn next_state_probs(&self, history: &[StepTokens]) -> Result<Vec<Vec<f64>>> {
        self.expect_kind(&[ModelKind::Dynamics], "state prediction")?;
        let logits = self.head_at(history, |g| g.action)?;
        let mut offset = 0;
        Ok(self
            .spec
            .net
            .state_vocab
            .iter()
            .map(|&v| {
                let p = softmax(&logits[offset..offset + v]);
                offset += v;
                p
            })
            .collect())
    }

    /// Most likely next state, decoded component by component.
    pub fn predict_next_state(&self, history: &[StepTokens]) -> Result<StateEncoding> {
        let probs = self.next_state_probs(history)?;
        Ok(StateEncoding(probs.iter().map(|p| argmax(p) as u16).collect()))
    }

    /// Return distribution of the trailing window (history ending at an action).
    pub fn value_distribution(&self, history: &[StepTokens]) -> Result<ValueDistribution> {
        self.expect_kind(&[ModelKind::Rtg], "a value distribution")?;
        let logits = self.head_at(history, |g| g.action)?;
        Ok(ValueDistribution { support: self.spec.atoms.expect("rtg model"), probs: softmax(&logits) })
    }

    /// Scalar value estimate: the distribution's mean or the mean head.
    pub fn value(&self, history: &[StepTokens]) -> Result<f64> {
        self.expect_kind(&[ModelKind::Rtg, ModelKind::MeanRtg], "value estimation")?;
        match self.kind() {
            ModelKind::Rtg => Ok(self.value_distribution(history)?.expected_value()),
            _ => Ok(self.head_at(history, |g| g.action)?[0] * self.spec.value_max),
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let config = toml::to_string(&self.spec).map_err(|e| Error::Config(e.to_string()))?;
        Ok(checkpoint::to_bytes(&self.params, &config))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a model from a checkpoint's stored spec and parameters.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ck = checkpoint::load(path)?;
        let spec: ModelSpec = toml::from_str(&ck.config)
            .map_err(|e| Error::Malformed { what: "checkpoint", detail: format!("config block: {e}") })?;
        let mut model = SeqModel::new(spec)?;
        ck.restore_into(&mut model.params)?;
        Ok(model)
    }
}
