use std::collections::{HashMap, VecDeque};

use rand::Rng;

use super::spec::TaskSpec;
use super::state::{ActionId, GridEnvState};
use super::TaskInstance;

/// Shortest action sequence from `state` to the goal, found by breadth-first
/// search over the true simulator (pickup, toggle and drop included). The
/// step budget is ignored. Successors expand in action-index order, so the
/// returned plan is deterministic.
pub fn solve(state: &GridEnvState) -> Option<Vec<ActionId>> {
    let mut nodes: Vec<(GridEnvState, usize, ActionId)> = vec![(state.clone(), usize::MAX, ActionId::Done)];
    let mut seen = HashMap::new();
    seen.insert(state.dynamic_key(), 0usize);
    let mut queue = VecDeque::from([0usize]);

    while let Some(idx) = queue.pop_front() {
        for action in ActionId::ALL {
            if action == ActionId::Done {
                continue;
            }
            let mut next = nodes[idx].0.clone();
            let reached = next.apply(action);
            if reached {
                let mut plan = vec![action];
                let mut cur = idx;
                while cur != 0 {
                    let (_, parent, a) = &nodes[cur];
                    plan.push(*a);
                    cur = *parent;
                }
                plan.reverse();
                return Some(plan);
            }
            let key = next.dynamic_key();
            if seen.contains_key(&key) {
                continue;
            }
            seen.insert(key, nodes.len());
            queue.push_back(nodes.len());
            nodes.push((next, idx, action));
        }
    }
    None
}

fn random_action(rng: &mut impl Rng) -> ActionId {
    ActionId::ALL[rng.gen_range(0..ActionId::COUNT)]
}

/// Epsilon-greedy scripted expert: with probability `epsilon` a uniformly
/// random action, otherwise the first action of a shortest solving plan.
/// Falls back to a random action when no plan exists.
pub fn scripted_policy(state: &GridEnvState, _spec: &TaskSpec, epsilon: f64, rng: &mut impl Rng) -> ActionId {
    if rng.gen::<f64>() < epsilon {
        return random_action(rng);
    }
    match solve(state) {
        Some(plan) => plan[0],
        None => random_action(rng),
    }
}

/// [`scripted_policy`] with plan caching: the solver only reruns after the
/// agent leaves the cached plan (e.g. after a random action). Every greedy
/// action still lies on a shortest solving plan.
#[derive(Debug, Default)]
pub struct ScriptedAgent {
    plan: VecDeque<ActionId>,
    expected: Option<GridEnvState>,
}

impl ScriptedAgent {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn act(&mut self, state: &GridEnvState, epsilon: f64, rng: &mut impl Rng) -> ActionId {
        if rng.gen::<f64>() < epsilon {
            self.plan.clear();
            return random_action(rng);
        }
        let on_plan = matches!(&self.expected, Some(e) if e.dynamic_key() == state.dynamic_key());
        if !on_plan || self.plan.is_empty() {
            self.plan = solve(state).map(VecDeque::from).unwrap_or_default();
        }
        match self.plan.pop_front() {
            Some(action) => {
                let mut next = state.clone();
                next.apply(action);
                self.expected = Some(next);
                action
            }
            None => {
                self.expected = None;
                random_action(rng)
            }
        }
    }
}

/// Runs the scripted agent for a full episode; returns the visited states,
/// actions, rewards and the final state.
pub fn scripted_episode(
    task: &TaskInstance,
    start: GridEnvState,
    epsilon: f64,
    rng: &mut impl Rng,
) -> (Vec<GridEnvState>, Vec<ActionId>, Vec<f64>, GridEnvState) {
    let mut agent = ScriptedAgent::new();
    let mut state = start;
    let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    while !state.done {
        let action = agent.act(&state, epsilon, rng);
        let t = task.step(&state, action).expect("episode not done");
        states.push(state);
        actions.push(action);
        rewards.push(t.reward);
        state = t.state;
    }
    (states, actions, rewards, state)
}
