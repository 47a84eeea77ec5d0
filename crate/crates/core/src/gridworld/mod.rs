//! Deterministic, seedable sparse-reward grid navigation tasks.
//!
//! A [`TaskSpec`] names a layout family, grid size, step budget, reward mode
//! and seed. [`TaskInstance`] generates the layout once; episodes then start
//! from [`TaskInstance::reset`] and advance through [`TaskInstance::step`],
//! which is a pure state-in/state-out transition.

mod layouts;
mod solver;
mod spec;
mod state;

pub use solver::{scripted_episode, scripted_policy, solve, ScriptedAgent};
pub use spec::{default_suite, LayoutFamily, RewardMode, TaskSpec};
pub use state::{ActionId, Cell, Direction, DoorState, GridEnvState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Success reward for reaching the goal after `steps` of `max_steps`.
pub fn success_reward(steps: u32, max_steps: u32) -> f64 {
    1.0 - 0.9 * (steps as f64 / max_steps as f64)
}

/// Shaped-mode episodes of an optimal agent total roughly this much.
pub const SHAPED_TARGET_RETURN: f64 = 25.0;

/// Outcome of a single environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: GridEnvState,
    pub reward: f64,
    pub done: bool,
}

/// A generated task: its spec, the canonical initial state and the cells an
/// episode may start from.
#[derive(Clone, Debug)]
pub struct TaskInstance {
    pub spec: TaskSpec,
    initial: GridEnvState,
    start_cells: Vec<(u8, u8)>,
    random_dir: bool,
    shaping_scale: f64,
}

/// Builds the canonical initial state of a task.
pub fn make_task(spec: &TaskSpec) -> Result<GridEnvState> {
    Ok(TaskInstance::new(spec.clone())?.initial)
}

impl TaskInstance {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        const MAX_ATTEMPTS: u32 = 100;
        for attempt in 0..MAX_ATTEMPTS {
            let sub_seed = spec.seed.wrapping_add(attempt as u64);
            let generated = layouts::generate(&spec, sub_seed);
            if let Some(plan) = solve(&generated.initial) {
                let shaping_scale = match spec.reward_mode {
                    RewardMode::Shaped => (SHAPED_TARGET_RETURN - 1.0) / plan.len().max(1) as f64,
                    _ => 0.0,
                };
                return Ok(TaskInstance {
                    spec,
                    initial: generated.initial,
                    start_cells: generated.start_cells,
                    random_dir: generated.random_dir,
                    shaping_scale,
                });
            }
        }
        Err(Error::UnreachableGoal { task: spec.to_string(), attempts: MAX_ATTEMPTS })
    }

    /// The canonical initial state (what [`make_task`] returns).
    pub fn initial_state(&self) -> &GridEnvState {
        &self.initial
    }

    /// Initial state for one episode. The layout is fixed by the task seed;
    /// families with randomized starts place the agent from `episode_seed`.
    pub fn reset(&self, episode_seed: u64) -> GridEnvState {
        let mut state = self.initial.clone();
        if self.start_cells.len() > 1 || self.random_dir {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0x5EED_0F_E915_0DE5);
            let cell = self.start_cells[rng.gen_range(0..self.start_cells.len())];
            state.agent_pos = cell;
            if self.random_dir {
                state.agent_dir = Direction::from_index(rng.gen_range(0..4));
            }
        }
        state
    }

    /// Advances one step. Stepping a finished episode is an error.
    pub fn step(&self, state: &GridEnvState, action: ActionId) -> Result<Transition> {
        if state.done {
            return Err(Error::EpisodeDone);
        }
        let mut next = state.clone();
        let reached_goal = next.apply(action);
        next.step_count += 1;
        let timed_out = next.step_count >= self.spec.max_steps;
        next.done = reached_goal || timed_out;

        let success = if reached_goal {
            match self.spec.reward_mode {
                RewardMode::Binary => 1.0,
                _ => success_reward(next.step_count, self.spec.max_steps),
            }
        } else {
            0.0
        };
        let reward = match self.spec.reward_mode {
            RewardMode::Shaped => success + self.shaping_bonus(state, &next, reached_goal),
            _ => success,
        };
        let done = next.done;
        Ok(Transition { state: next, reward, done })
    }

    fn shaping_bonus(&self, before: &GridEnvState, after: &GridEnvState, reached_goal: bool) -> f64 {
        let d_before = solve(before).map(|p| p.len());
        let d_after = if reached_goal { Some(0) } else { solve(after).map(|p| p.len()) };
        match (d_before, d_after) {
            (Some(b), Some(a)) => self.shaping_scale * (b as f64 - a as f64),
            _ => 0.0,
        }
    }

    /// Largest return an episode of this task can plausibly reach; the
    /// upper end of the value-distribution support.
    pub fn value_max(&self) -> f64 {
        self.spec.reward_mode.value_max()
    }
}

/// Free-function form of [`TaskInstance::step`]; regenerates the layout, so
/// prefer the method inside loops.
pub fn step(state: &GridEnvState, action: ActionId, spec: &TaskSpec) -> Result<Transition> {
    TaskInstance::new(spec.clone())?.step(state, action)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(n: u8) -> TaskSpec {
        TaskSpec::new(0, LayoutFamily::Empty, n, n)
    }

    #[test]
    fn empty_initial_state_contract() {
        let s = make_task(&empty(5)).unwrap();
        assert_eq!(s.agent_pos, (1, 1));
        assert_eq!(s.agent_dir, Direction::Right);
        assert_eq!(s.step_count, 0);
        assert!(!s.done);
        assert_eq!(s.cell(3, 3), Cell::Goal);
    }

    #[test]
    fn make_task_is_deterministic() {
        for family in LayoutFamily::ALL {
            let spec = TaskSpec::new(0, family, 9, 9).with_seed(3);
            assert_eq!(make_task(&spec).unwrap(), make_task(&spec).unwrap());
        }
    }

    #[test]
    fn doorkey_has_one_key_one_locked_door_one_goal() {
        let spec = TaskSpec::new(0, LayoutFamily::DoorKey, 8, 8).with_seed(7);
        let s = make_task(&spec).unwrap();
        let count = |pred: &dyn Fn(Cell) -> bool| s.cells.iter().filter(|c| pred(**c)).count();
        assert_eq!(count(&|c| matches!(c, Cell::Key(_))), 1);
        assert_eq!(count(&|c| matches!(c, Cell::Door { state: DoorState::Locked, .. })), 1);
        assert_eq!(count(&|c| matches!(c, Cell::Door { .. })), 1);
        assert_eq!(count(&|c| c == Cell::Goal), 1);
    }

    #[test]
    fn forward_into_wall_is_blocked() {
        let inst = TaskInstance::new(empty(5)).unwrap();
        let mut s = inst.reset(0);
        // (1,1) facing right: two forwards reach (3,1); the next hits the border.
        for _ in 0..2 {
            s = inst.step(&s, ActionId::Forward).unwrap().state;
        }
        let t = inst.step(&s, ActionId::Forward).unwrap();
        assert_eq!(t.state.agent_pos, (3, 1));
        assert_eq!(t.reward, 0.0);
        assert!(!t.done);
    }

    #[test]
    fn goal_reward_follows_step_budget() {
        let spec = empty(5).with_max_steps(100);
        let inst = TaskInstance::new(spec).unwrap();
        let mut s = inst.reset(0);
        // Burn 6 steps turning in place, then walk the 5-step path.
        for _ in 0..3 {
            s = inst.step(&s, ActionId::Left).unwrap().state;
            s = inst.step(&s, ActionId::Right).unwrap().state;
        }
        for a in [ActionId::Forward, ActionId::Forward, ActionId::Right, ActionId::Forward] {
            let t = inst.step(&s, a).unwrap();
            assert_eq!(t.reward, 0.0);
            s = t.state;
        }
        let t = inst.step(&s, ActionId::Forward).unwrap();
        assert!(t.done);
        assert_eq!(t.state.step_count, 11);
        assert!((t.reward - (1.0 - 0.9 * 11.0 / 100.0)).abs() < 1e-15);
    }

    #[test]
    fn reward_at_step_ten_of_hundred() {
        assert!((success_reward(10, 100) - 0.91).abs() < 1e-15);
    }

    #[test]
    fn stepping_done_episode_errors() {
        let inst = TaskInstance::new(empty(5).with_max_steps(25)).unwrap();
        let mut s = inst.reset(0);
        while !s.done {
            s = inst.step(&s, ActionId::Done).unwrap().state;
        }
        assert_eq!(s.step_count, 25);
        assert!(matches!(inst.step(&s, ActionId::Left), Err(Error::EpisodeDone)));
    }

    #[test]
    fn binary_mode_pays_one() {
        let inst = TaskInstance::new(empty(5).with_reward(RewardMode::Binary)).unwrap();
        let mut s = inst.reset(0);
        let mut total = 0.0;
        for a in [ActionId::Forward, ActionId::Forward, ActionId::Right, ActionId::Forward, ActionId::Forward] {
            let t = inst.step(&s, a).unwrap();
            total += t.reward;
            s = t.state;
        }
        assert!(s.done);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn shaped_optimal_episode_totals_about_target() {
        for family in [LayoutFamily::Empty, LayoutFamily::DoorKey] {
            let spec = TaskSpec::new(0, family, 7, 7).with_seed(2).with_reward(RewardMode::Shaped);
            let inst = TaskInstance::new(spec).unwrap();
            let mut s = inst.initial_state().clone();
            let mut total = 0.0;
            while !s.done {
                let a = solve(&s).unwrap()[0];
                let t = inst.step(&s, a).unwrap();
                total += t.reward;
                s = t.state;
            }
            assert!((total - SHAPED_TARGET_RETURN).abs() < 1.0, "{family:?}: {total}");
        }
    }

    #[test]
    fn toggle_locked_door_needs_matching_key() {
        let spec = TaskSpec::new(0, LayoutFamily::DoorKey, 6, 6).with_seed(1);
        let s0 = make_task(&spec).unwrap();
        let door = s0.find(|c| matches!(c, Cell::Door { .. })).unwrap();
        // Put the agent right next to the door, facing it, without the key.
        let mut s = s0.clone();
        s.agent_pos = (door.0 - 1, door.1);
        s.agent_dir = Direction::Right;
        if s.cell(s.agent_pos.0, s.agent_pos.1) != Cell::Floor {
            s.set_cell(s.agent_pos.0, s.agent_pos.1, Cell::Floor);
        }
        let inst = TaskInstance::new(spec).unwrap();
        let t = inst.step(&s, ActionId::Toggle).unwrap();
        assert!(matches!(t.state.cell(door.0, door.1), Cell::Door { state: DoorState::Locked, .. }));
        let mut with_key = s.clone();
        with_key.carrying = Some(0);
        let t = inst.step(&with_key, ActionId::Toggle).unwrap();
        assert!(matches!(t.state.cell(door.0, door.1), Cell::Door { state: DoorState::Open, .. }));
        let mut wrong_key = s;
        wrong_key.carrying = Some(1);
        let t = inst.step(&wrong_key, ActionId::Toggle).unwrap();
        assert!(matches!(t.state.cell(door.0, door.1), Cell::Door { state: DoorState::Locked, .. }));
    }

    #[test]
    fn reset_randomizes_start_for_random_families() {
        let inst = TaskInstance::new(TaskSpec::new(0, LayoutFamily::FourRooms, 9, 9).with_seed(4)).unwrap();
        let starts: std::collections::HashSet<_> =
            (0..20).map(|e| { let s = inst.reset(e); (s.agent_pos, s.agent_dir) }).collect();
        assert!(starts.len() > 1);
        let empty = TaskInstance::new(empty(6)).unwrap();
        assert_eq!(empty.reset(0), empty.reset(99));
    }
}
