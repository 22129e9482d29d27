//! Exports finite environments to `DeterministicTabularMdp` by enumerating
//! reachable states, so the exact dynamic-programming oracle can run on them.
//!
//! Goal rewards in the gridworlds depend on the step counter. With
//! `t_augmented = true` the counter is folded into the state and the export
//! bit-matches the environment's step function (including truncation, which
//! becomes an absorbing state). Without augmentation the reward is taken at
//! `t = 0`, an approximation that keeps the state space small.

use std::collections::HashMap;
use std::hash::Hash;

use super::doorkey::{DoorKeyLiteEnv, DoorKeyState, DOORKEY_NUM_ACTIONS};
use super::grid::{goal_reward, GridAgentState, GridEmptyEnv, GRID_MAX_STEPS};
use super::tabular::TabularEnv;
use super::EnvError;
use crate::mdp::DeterministicTabularMdp;

pub const EXPORT_STATE_CAP: usize = 200_000;

/// An exported MDP together with the mapping from environment states to
/// tabular state indices (breadth-first discovery order, initial state 0).
#[derive(Debug, Clone)]
pub struct ExportedMdp<K> {
    pub mdp: DeterministicTabularMdp,
    pub index: HashMap<K, usize>,
}

impl<K: Eq + Hash> ExportedMdp<K> {
    pub fn index_of(&self, key: &K) -> Option<usize> {
        self.index.get(key).copied()
    }
}

/// Enumerates the reachable closure of `initial` under `step`, which returns
/// `(next_state, reward, is_terminal_entry)`. Terminal entries are collapsed
/// into absorbing zero-reward states.
fn enumerate<K, F>(
    initial: K,
    num_actions: usize,
    is_terminal: impl Fn(&K) -> bool,
    step: F,
) -> Result<ExportedMdp<K>, EnvError>
where
    K: Copy + Eq + Hash,
    F: Fn(K, usize) -> (K, f64),
{
    let mut index = HashMap::new();
    let mut order = vec![initial];
    index.insert(initial, 0usize);
    let mut transition = Vec::new();
    let mut reward = Vec::new();
    let mut terminal_mask = Vec::new();

    let mut cursor = 0usize;
    while cursor < order.len() {
        let state = order[cursor];
        let terminal = is_terminal(&state);
        terminal_mask.push(terminal);
        for action in 0..num_actions {
            if terminal {
                transition.push(cursor);
                reward.push(0.0);
                continue;
            }
            let (next, r) = step(state, action);
            let next_idx = *index.entry(next).or_insert_with(|| {
                order.push(next);
                order.len() - 1
            });
            if order.len() > EXPORT_STATE_CAP {
                return Err(EnvError::StateSpaceTooLarge { cap: EXPORT_STATE_CAP });
            }
            transition.push(next_idx);
            reward.push(r);
        }
        cursor += 1;
    }

    let num_states = order.len();
    let mut initial_distribution = vec![0.0; num_states];
    initial_distribution[0] = 1.0;
    let mdp = DeterministicTabularMdp {
        num_states,
        num_actions,
        transition,
        reward,
        initial_distribution,
        terminal_mask,
    }
    .validate()?;
    Ok(ExportedMdp { mdp, index })
}

impl GridEmptyEnv {
    /// Tabular export over agent poses; see the module docs for the
    /// `t_augmented` semantics.
    pub fn export_tabular(&self, t_augmented: bool) -> Result<ExportedMdp<GridAgentState>, EnvError> {
        let goal = GridEmptyEnv::goal();
        let template = self.clone();
        let initial = GridEmptyEnv::new(self.modified_turns).agent_state(t_augmented);
        enumerate(
            initial,
            7,
            |s| (s.x, s.y) == goal || s.t == Some(GRID_MAX_STEPS),
            move |s, action| {
                let (nx, ny, nh) = template.apply_pose(s.x, s.y, s.heading, action);
                let t_next = s.t.map(|t| t + 1);
                let r = if (nx, ny) == goal {
                    goal_reward(t_next.unwrap_or(0), GRID_MAX_STEPS)
                } else {
                    0.0
                };
                (GridAgentState { x: nx, y: ny, heading: nh, t: t_next }, r)
            },
        )
    }
}

impl DoorKeyLiteEnv {
    pub fn export_tabular(&self, t_augmented: bool) -> Result<ExportedMdp<DoorKeyState>, EnvError> {
        let goal = (6usize, 6usize);
        let mut initial = DoorKeyLiteEnv::new().agent_state(false);
        initial.t = t_augmented.then_some(0);
        enumerate(
            initial,
            DOORKEY_NUM_ACTIONS,
            |s| (s.x, s.y) == goal || s.t == Some(GRID_MAX_STEPS),
            move |s, action| {
                let t_free = DoorKeyState { t: None, ..s };
                let mut next = DoorKeyLiteEnv::apply(t_free, action);
                next.t = s.t.map(|t| t + 1);
                let r = if (next.x, next.y) == goal {
                    goal_reward(next.t.unwrap_or(0), GRID_MAX_STEPS)
                } else {
                    0.0
                };
                (next, r)
            },
        )
    }
}

impl TabularEnv {
    /// A tabular environment is already tabular: the export is its MDP with
    /// the identity indexing.
    pub fn export_tabular(&self) -> ExportedMdp<usize> {
        let mdp = self.mdp().clone();
        let index = (0..mdp.num_states).map(|s| (s, s)).collect();
        ExportedMdp { mdp, index }
    }
}
