//! Imagined-rollout action selection and the closed-loop episode executor.
//!
//! The planner works against three small traits so the learned sequence
//! models and exact oracles (a wrapped simulator, a scripted expert) are
//! interchangeable. Every model sees at most `context` timestep groups.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{EncodingSchema, StateEncoding, Step, StepTokens, Trajectory};
use crate::error::{Error, Result};
use crate::gridworld::{solve, ActionId, GridEnvState, TaskInstance};
use crate::models::{ModelKind, SeqModel};
use crate::par::{self, Execution};

/// Action model θ: logits over actions for a history ending at a state.
pub trait ActionModel: Sync {
    fn action_logits(&self, history: &[StepTokens]) -> Result<Vec<f64>>;
}

/// Dynamics model f: the next state for a history ending at an action.
pub trait DynamicsModel: Sync {
    fn predict_next_state(&self, history: &[StepTokens]) -> Result<StateEncoding>;
}

/// Value model φ: scores a history ending at an action.
pub trait ValueModel: Sync {
    fn value(&self, history: &[StepTokens]) -> Result<f64>;
}

impl ActionModel for SeqModel {
    fn action_logits(&self, history: &[StepTokens]) -> Result<Vec<f64>> {
        SeqModel::action_logits(self, history)
    }
}

impl DynamicsModel for SeqModel {
    fn predict_next_state(&self, history: &[StepTokens]) -> Result<StateEncoding> {
        SeqModel::predict_next_state(self, history)
    }
}

impl ValueModel for SeqModel {
    fn value(&self, history: &[StepTokens]) -> Result<f64> {
        SeqModel::value(self, history)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanMode {
    /// Imagine `horizon` steps per candidate and keep the best-valued one.
    SwitchPlan,
    /// Greedy action of a return-conditioned action model.
    DtDirect,
    /// Greedy action of an action model trained without returns.
    Bc,
    /// Uniformly random actions (needs no models).
    Random,
}

impl PlanMode {
    pub fn name(self) -> &'static str {
        match self {
            PlanMode::SwitchPlan => "switch_plan",
            PlanMode::DtDirect => "dt_direct",
            PlanMode::Bc => "bc",
            PlanMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [PlanMode::SwitchPlan, PlanMode::DtDirect, PlanMode::Bc, PlanMode::Random]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown planner mode {s:?}")))
    }
}

/// Return-to-go token given to imagined steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImaginedRtg {
    /// The value model's estimate on the window so far.
    Value,
    /// Keep the previous token, i.e. assume no reward inside the horizon.
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlannerConfig {
    pub candidates: usize,
    pub horizon: usize,
    /// Most timestep groups any model is shown.
    pub context: usize,
    pub target_return: f64,
    pub mode: PlanMode,
    pub imagined_rtg: ImaginedRtg,
    /// Keep per-step candidate records and imagined rollouts.
    pub record: bool,
    pub exec: Execution,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            candidates: 4,
            horizon: 3,
            context: 30,
            target_return: 1.0,
            mode: PlanMode::SwitchPlan,
            imagined_rtg: ImaginedRtg::Value,
            record: false,
            exec: Execution::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.candidates == 0 || self.candidates > ActionId::COUNT {
            return Err(Error::Config(format!("candidate count must be in 1..={} (got {})", ActionId::COUNT, self.candidates)));
        }
        if self.horizon == 0 || self.context == 0 {
            return Err(Error::Config("horizon and context must be positive".into()));
        }
        if !self.target_return.is_finite() {
            return Err(Error::Config("target return must be finite".into()));
        }
        Ok(())
    }
}

/// The models a planner mode draws on. Unused slots may be `None`.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub action: Option<&'a dyn ActionModel>,
    pub dynamics: Option<&'a dyn DynamicsModel>,
    pub value: Option<&'a dyn ValueModel>,
}

impl<'a> Models<'a> {
    pub fn none() -> Self {
        Models { action: None, dynamics: None, value: None }
    }

    pub fn greedy(action: &'a dyn ActionModel) -> Self {
        Models { action: Some(action), ..Models::none() }
    }

    pub fn full(action: &'a dyn ActionModel, dynamics: &'a dyn DynamicsModel, value: &'a dyn ValueModel) -> Self {
        Models { action: Some(action), dynamics: Some(dynamics), value: Some(value) }
    }

    fn need_action(&self) -> Result<&'a dyn ActionModel> {
        self.action.ok_or_else(|| Error::Config("planner mode needs an action model".into()))
    }
}

fn tail(history: &[StepTokens], context: usize) -> &[StepTokens] {
    &history[history.len().saturating_sub(context)..]
}

/// Indices of the `c` largest logits, descending; equal logits keep index order.
fn top_indices(logits: &[f64], c: usize) -> Result<Vec<usize>> {
    if c == 0 || c > logits.len() {
        return Err(Error::Config(format!("{c} candidates from {} actions", logits.len())));
    }
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx.truncate(c);
    Ok(idx)
}

fn to_action(i: usize) -> Result<ActionId> {
    ActionId::from_index(i).ok_or_else(|| Error::Shape(format!("action index {i} outside the action set")))
}

/// The `c` most probable actions under θ for a history ending at a state.
pub fn candidates(theta: &dyn ActionModel, history: &[StepTokens], c: usize) -> Result<Vec<ActionId>> {
    let logits = theta.action_logits(history)?;
    top_indices(&logits, c)?.into_iter().map(to_action).collect()
}

fn greedy(theta: &dyn ActionModel, history: &[StepTokens]) -> Result<ActionId> {
    Ok(candidates(theta, history, 1)?[0])
}

/// One imagined timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ImaginedStep {
    pub state: StateEncoding,
    pub action: ActionId,
    pub rtg: f64,
}

/// An imagined rollout: the root step with its candidate action followed by
/// `horizon` predicted steps, and the value of the whole window.
#[derive(Clone, Debug, PartialEq)]
pub struct Imagined {
    pub steps: Vec<ImaginedStep>,
    pub value: f64,
}

/// Rolls `horizon` steps from `history` (ending at a state) after taking
/// `a0`: each step predicts the next state with f, gives it a return-to-go
/// token and picks θ's greedy action. The final window is scored with φ.
#[allow(clippy::too_many_arguments)]
pub fn imagine(
    f: &dyn DynamicsModel,
    theta: &dyn ActionModel,
    phi: &dyn ValueModel,
    history: &[StepTokens],
    a0: ActionId,
    horizon: usize,
    context: usize,
    rtg_mode: ImaginedRtg,
) -> Result<Imagined> {
    let root = history.last().ok_or_else(|| Error::Shape("empty history".into()))?;
    if root.action.is_some() {
        return Err(Error::Shape("planning history must end at a state".into()));
    }
    let mut x: Vec<StepTokens> = tail(history, context).to_vec();
    x.last_mut().expect("non-empty").action = Some(a0);
    let mut steps = vec![ImaginedStep { state: root.state.clone(), action: a0, rtg: root.rtg }];
    for _ in 0..horizon {
        let state = f.predict_next_state(tail(&x, context))?;
        let prev = x.last().expect("non-empty");
        let rtg = match rtg_mode {
            ImaginedRtg::Value => phi.value(tail(&x, context))?,
            ImaginedRtg::Hold => prev.rtg,
        };
        x.push(StepTokens { task: prev.task, rtg, state: state.clone(), action: None });
        let action = greedy(theta, tail(&x, context))?;
        x.last_mut().expect("non-empty").action = Some(action);
        steps.push(ImaginedStep { state, action, rtg });
    }
    let value = phi.value(tail(&x, context))?;
    Ok(Imagined { steps, value })
}

/// Outcome of planning one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub action: ActionId,
    /// Candidates in θ's order with their imagined values.
    pub scored: Vec<(ActionId, f64)>,
    pub rollouts: Vec<Imagined>,
}

/// Imagines every candidate and returns the first action of the best-valued
/// rollout; equal values go to the lowest action index.
pub fn plan(cfg: &PlannerConfig, models: Models<'_>, history: &[StepTokens]) -> Result<Decision> {
    cfg.validate()?;
    let theta = models.need_action()?;
    let (f, phi) = match (models.dynamics, models.value) {
        (Some(f), Some(phi)) => (f, phi),
        _ => return Err(Error::Config("planning needs dynamics and value models".into())),
    };
    let window = tail(history, cfg.context);
    let cands = candidates(theta, window, cfg.candidates)?;
    let rollouts: Vec<Imagined> = par::map(cfg.exec, &cands, |&a| {
        imagine(f, theta, phi, window, a, cfg.horizon, cfg.context, cfg.imagined_rtg)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let scored: Vec<(ActionId, f64)> = cands.iter().zip(&rollouts).map(|(&a, r)| (a, r.value)).collect();
    let best = scored
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.1 > best.1 || (c.1 == best.1 && c.0.index() < best.0.index()) {
                c
            } else {
                best
            }
        })
        .expect("at least one candidate");
    Ok(Decision { action: best.0, scored, rollouts })
}

/// One executed step as recorded for inspection.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub rtg: f64,
    pub action: ActionId,
    pub reward: f64,
    pub scored: Vec<(ActionId, f64)>,
    pub rollouts: Vec<Imagined>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub total_return: f64,
    pub trajectory: Trajectory,
    /// The return-to-go token fed at each executed step.
    pub rtg_tokens: Vec<f64>,
    pub records: Vec<StepRecord>,
}

impl EpisodeResult {
    /// Writes one line per step: step, chosen action, fed return-to-go,
    /// reward, then `action=value` for each candidate, followed by the
    /// imagined rollouts as `t action rtg` triples.
    pub fn write_dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "step\taction\trtg\treward\tcandidates")?;
        for r in &self.records {
            let cands: Vec<String> = r.scored.iter().map(|(a, v)| format!("{a}={v:.6}")).collect();
            writeln!(w, "{}\t{}\t{:.6}\t{:.6}\t{}", r.t, r.action, r.rtg, r.reward, cands.join(" "))?;
            for (roll, (a, _)) in r.rollouts.iter().zip(&r.scored) {
                let steps: Vec<String> = roll
                    .steps
                    .iter()
                    .enumerate()
                    .map(|(j, s)| format!("({} {} {:.4})", r.t + j, s.action, s.rtg))
                    .collect();
                writeln!(w, "\t{a}\t{}", steps.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Runs one episode of `task` from `instance.reset(seed)`. The return-to-go
/// token starts at the target and drops by each observed reward:
/// `R_t = R_0 - (r_0 + ... + r_{t-1})`, with the sum accumulated in order.
pub fn run_episode(
    cfg: &PlannerConfig,
    models: Models<'_>,
    instance: &TaskInstance,
    schema: &EncodingSchema,
    seed: u64,
) -> Result<EpisodeResult> {
    cfg.validate()?;
    let task = instance.spec.task_id;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = instance.reset(seed);
    let mut history: Vec<StepTokens> = Vec::new();
    let mut steps = Vec::new();
    let mut rtg_tokens = Vec::new();
    let mut records = Vec::new();
    let mut reward_sum = 0.0;
    while !state.done {
        let t = steps.len();
        let rtg = cfg.target_return - reward_sum;
        let enc = schema.encode(&state);
        history.push(StepTokens { task, rtg, state: enc.clone(), action: None });
        if history.len() > cfg.context {
            history.remove(0);
        }
        let (action, scored, rollouts) = match cfg.mode {
            PlanMode::Random => (ActionId::ALL[rng.gen_range(0..ActionId::COUNT)], vec![], vec![]),
            PlanMode::DtDirect | PlanMode::Bc => (greedy(models.need_action()?, &history)?, vec![], vec![]),
            PlanMode::SwitchPlan => {
                let d = plan(cfg, models, &history)?;
                (d.action, d.scored, d.rollouts)
            }
        };
        history.last_mut().expect("pushed above").action = Some(action);
        let tr = instance.step(&state, action)?;
        if cfg.record {
            records.push(StepRecord { t, rtg, action, reward: tr.reward, scored, rollouts });
        }
        rtg_tokens.push(rtg);
        steps.push(Step { state: enc, action, reward: tr.reward });
        reward_sum += tr.reward;
        state = tr.state;
    }
    let trajectory = Trajectory::new(task, steps, schema.encode(&state), 1.0);
    Ok(EpisodeResult { total_return: reward_sum, trajectory, rtg_tokens, records })
}

/// Episode returns for each seed, in seed order.
pub fn run_episodes(
    cfg: &PlannerConfig,
    models: Models<'_>,
    instance: &TaskInstance,
    schema: &EncodingSchema,
    seeds: &[u64],
) -> Result<Vec<f64>> {
    // Planning already fans out over candidates; episodes run in parallel otherwise.
    let inner = PlannerConfig { exec: Execution::Sequential, ..*cfg };
    par::map(cfg.exec, seeds, |&s| run_episode(&inner, models, instance, schema, s).map(|r| r.total_return))
        .into_iter()
        .collect()
}

/// Exact models built from the simulator: f steps the true environment and
/// θ puts all its preference on the first action of a shortest solving plan.
#[derive(Clone, Debug)]
pub struct Simulator {
    schema: EncodingSchema,
    tasks: BTreeMap<u16, TaskInstance>,
}

/// Logit given to the scripted action; every other action gets zero.
const SCRIPTED_LOGIT: f64 = 10.0;

impl Simulator {
    pub fn new(schema: EncodingSchema, tasks: impl IntoIterator<Item = TaskInstance>) -> Self {
        Simulator { schema, tasks: tasks.into_iter().map(|t| (t.spec.task_id, t)).collect() }
    }

    fn decode(&self, g: &StepTokens) -> Result<(&TaskInstance, GridEnvState)> {
        let inst = self.tasks.get(&g.task).ok_or_else(|| Error::Vocabulary(format!("unknown task {}", g.task)))?;
        Ok((inst, self.schema.decode(inst.initial_state(), &g.state)?))
    }
}

impl ActionModel for Simulator {
    fn action_logits(&self, history: &[StepTokens]) -> Result<Vec<f64>> {
        let (_, s) = self.decode(history.last().ok_or_else(|| Error::Shape("empty history".into()))?)?;
        let mut logits = vec![0.0; ActionId::COUNT];
        if let Some(a) = solve(&s).and_then(|p| p.first().copied()) {
            logits[a.index()] = SCRIPTED_LOGIT;
        }
        Ok(logits)
    }
}

impl DynamicsModel for Simulator {
    fn predict_next_state(&self, history: &[StepTokens]) -> Result<StateEncoding> {
        let last = history.last().ok_or_else(|| Error::Shape("empty history".into()))?;
        let action = last.action.ok_or_else(|| Error::Shape("dynamics query must end at an action".into()))?;
        let (inst, s) = self.decode(last)?;
        Ok(self.schema.encode(&inst.step(&s, action)?.state))
    }
}

/// Checks that a trained triple fits a planner mode.
pub fn check_models(mode: PlanMode, action: Option<&SeqModel>, dynamics: Option<&SeqModel>, value: Option<&SeqModel>) -> Result<()> {
    let expect = |m: Option<&SeqModel>, kinds: &[ModelKind], what: &str| match m {
        Some(m) if kinds.contains(&m.kind()) => Ok(()),
        Some(m) => Err(Error::Config(format!("{what} slot holds a {} model", m.kind().name()))),
        None => Err(Error::Config(format!("{} mode needs a {what} model", mode.name()))),
    };
    match mode {
        PlanMode::Random => Ok(()),
        PlanMode::DtDirect | PlanMode::Bc => expect(action, &[ModelKind::Action], "action"),
        PlanMode::SwitchPlan => {
            expect(action, &[ModelKind::Action], "action")?;
            expect(dynamics, &[ModelKind::Dynamics], "dynamics")?;
            expect(value, &[ModelKind::Rtg, ModelKind::MeanRtg], "value")
        }
    }
}
