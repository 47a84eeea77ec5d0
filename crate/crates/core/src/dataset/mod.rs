//! Multi-task offline datasets: collection, returns-to-go, the token
//! representation consumed by the sequence models, splitting, persistence.

mod encoding;
mod format;

pub use encoding::{EncodingSchema, StateEncoding};
pub use format::{load, read_from, save, write_to, DATASET_MAGIC, DATASET_VERSION};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gridworld::{scripted_episode, ActionId, TaskInstance, TaskSpec};
use crate::par::{self, Execution};

/// One recorded step: the state the action was taken in, the action, and
/// the reward it earned.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: StateEncoding,
    pub action: ActionId,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub task_id: u16,
    pub steps: Vec<Step>,
    /// State reached by the last action; the dynamics target of the final step.
    pub final_state: StateEncoding,
    pub returns_to_go: Vec<f64>,
}

impl Trajectory {
    pub fn new(task_id: u16, steps: Vec<Step>, final_state: StateEncoding, gamma: f64) -> Self {
        let rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
        let returns_to_go = compute_rtg_discounted(&rewards, gamma);
        Trajectory { task_id, steps, final_state, returns_to_go }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.returns_to_go.first().copied().unwrap_or(0.0)
    }

    /// State following step `t`.
    pub fn next_state(&self, t: usize) -> &StateEncoding {
        self.steps.get(t + 1).map_or(&self.final_state, |s| &s.state)
    }
}

/// Suffix sums of `rewards` (undiscounted returns-to-go).
pub fn compute_rtg(rewards: &[f64]) -> Vec<f64> {
    compute_rtg_discounted(rewards, 1.0)
}

/// `out[t] = rewards[t] + gamma * out[t + 1]`.
pub fn compute_rtg_discounted(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// A combined multi-task dataset. Task ids index `tasks`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: EncodingSchema,
    pub tasks: Vec<TaskSpec>,
    pub gamma: f64,
    pub episodes: Vec<Trajectory>,
}

impl Dataset {
    pub fn empty(schema: EncodingSchema, tasks: Vec<TaskSpec>) -> Self {
        Dataset { schema, tasks, gamma: 1.0, episodes: Vec::new() }
    }

    pub fn n_timesteps(&self) -> usize {
        self.episodes.iter().map(Trajectory::len).sum()
    }

    pub fn task_ids(&self) -> std::collections::BTreeSet<u16> {
        self.episodes.iter().map(|e| e.task_id).collect()
    }

    /// Largest absolute return-to-go, used to scale the return input.
    pub fn value_max(&self) -> f64 {
        self.tasks.iter().map(|t| t.reward_mode.value_max()).fold(1.0, f64::max)
    }

    fn with_episodes(&self, episodes: Vec<Trajectory>) -> Dataset {
        Dataset { schema: self.schema, tasks: self.tasks.clone(), gamma: self.gamma, episodes }
    }
}

/// One timestep of the token stream: `(task, return-to-go, state, action)`.
/// The action is absent on the final group of a prediction query.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTokens {
    pub task: u16,
    pub rtg: f64,
    pub state: StateEncoding,
    pub action: Option<ActionId>,
}

/// A single token of the flattened stream.
#[derive(Clone, Debug, PartialEq)]
pub enum Token {
    Task(u16),
    ReturnToGo(f64),
    State(StateEncoding),
    Action(ActionId),
}

/// The last `<= context` timestep groups of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub context: usize,
    /// Trajectory timestep of the first group.
    pub start: usize,
    pub groups: Vec<StepTokens>,
}

impl TokenSequence {
    /// Flattens groups in `(task, return-to-go, state, action)` order.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.groups.len() * 4);
        for g in &self.groups {
            out.push(Token::Task(g.task));
            out.push(Token::ReturnToGo(g.rtg));
            out.push(Token::State(g.state.clone()));
            if let Some(a) = g.action {
                out.push(Token::Action(a));
            }
        }
        out
    }
}

/// The groups for timesteps `t_end + 1 - min(context, t_end + 1) ..= t_end`.
/// With `query` set the final group omits its action.
pub fn window(traj: &Trajectory, t_end: usize, context: usize, query: bool) -> TokenSequence {
    assert!(t_end < traj.len(), "t_end {t_end} outside trajectory of length {}", traj.len());
    let start = (t_end + 1).saturating_sub(context.max(1));
    let groups = (start..=t_end)
        .map(|t| StepTokens {
            task: traj.task_id,
            rtg: traj.returns_to_go[t],
            state: traj.steps[t].state.clone(),
            action: (!query || t < t_end).then_some(traj.steps[t].action),
        })
        .collect();
    TokenSequence { context, start, groups }
}

/// Episode-level split; the first dataset holds `round(fraction * n)`
/// episodes. Deterministic given `seed`.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let n = dataset.episodes.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (fraction * n as f64).round() as usize;
    let (mut train_idx, mut val_idx) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset.episodes[i].clone()).collect();
    Ok((dataset.with_episodes(pick(&train_idx)), dataset.with_episodes(pick(&val_idx))))
}

/// SplitMix64-style mixing for deriving independent seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How much data to gather per task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Budget {
    Episodes(usize),
    /// Whole episodes are collected until at least this many timesteps.
    Timesteps(usize),
}

/// Collection settings. Episode `e` of a task runs with
/// `epsilons[e % epsilons.len()]`.
#[derive(Clone, Debug)]
pub struct CollectConfig {
    pub budget: Budget,
    pub epsilons: Vec<f64>,
    pub seed: u64,
    pub gamma: f64,
    pub exec: Execution,
}

impl CollectConfig {
    pub fn new(budget: Budget, epsilons: Vec<f64>, seed: u64) -> Self {
        CollectConfig { budget, epsilons, seed, gamma: 1.0, exec: Execution::default() }
    }
}

/// Builds the encoding schema and task instances for a suite.
pub fn prepare_suite(specs: &[TaskSpec]) -> Result<(EncodingSchema, Vec<TaskInstance>)> {
    let tasks = specs.iter().map(|s| TaskInstance::new(s.clone())).collect::<Result<Vec<_>>>()?;
    let schema = EncodingSchema::covering(tasks.iter().map(|t| t.initial_state()));
    Ok((schema, tasks))
}

/// Runs epsilon-greedy scripted episodes on every task and returns the
/// combined dataset. Results do not depend on `cfg.exec`.
pub fn collect(specs: &[TaskSpec], cfg: &CollectConfig) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::Config("collect needs at least one task".into()));
    }
    if cfg.epsilons.is_empty() || cfg.epsilons.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::Config(format!("epsilon schedule {:?} must be non-empty, in [0, 1]", cfg.epsilons)));
    }
    let (schema, tasks) = prepare_suite(specs)?;
    let mut dataset = Dataset::empty(schema, specs.to_vec());
    dataset.gamma = cfg.gamma;

    for task in &tasks {
        let run = |e: usize| -> Trajectory {
            let episode_seed = mix_seed(mix_seed(cfg.seed, task.spec.task_id as u64), e as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
            let epsilon = cfg.epsilons[e % cfg.epsilons.len()];
            let (states, actions, rewards, end) = scripted_episode(task, task.reset(episode_seed), epsilon, &mut rng);
            let steps = states
                .iter()
                .zip(actions)
                .zip(rewards)
                .map(|((s, action), reward)| Step { state: schema.encode(s), action, reward })
                .collect();
            Trajectory::new(task.spec.task_id, steps, schema.encode(&end), cfg.gamma)
        };
        match cfg.budget {
            Budget::Episodes(n) => dataset.episodes.extend(par::map_range(cfg.exec, n, run)),
            Budget::Timesteps(target) => {
                const BATCH: usize = 32;
                let mut collected = 0;
                let mut next = 0;
                'outer: while collected < target {
                    for traj in par::map_range(cfg.exec, BATCH, |i| run(next + i)) {
                        collected += traj.len();
                        dataset.episodes.push(traj);
                        if collected >= target {
                            break 'outer;
                        }
                    }
                    next += BATCH;
                }
            }
        }
    }
    Ok(dataset)
}
