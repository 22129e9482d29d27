//! A fixed-layout two-room gridworld with a key and a locked door, used for
//! smoke tests only. Movement follows the turn-and-move semantics of the
//! empty grid; `pickup` grabs the key when standing on it, `toggle` opens the
//! door when holding the key next to it.

use rand_chacha::ChaCha8Rng;

use super::grid::{encode_pose, goal_reward, move_agent, Heading, GRID_MAX_STEPS, GRID_SIZE};
use super::{EnvError, EnvStepOutcome, Environment};
use crate::mdp::TerminalKind;

pub const DOORKEY_NUM_ACTIONS: usize = 7;
/// Pose one-hot plus the two inventory bits.
pub const DOORKEY_OBS_DIM: usize = 2 * (GRID_SIZE - 2) + 4 + 2;

const WALL_X: usize = 3;
const DOOR: (usize, usize) = (3, 3);
const KEY: (usize, usize) = (2, 2);
const GOAL: (usize, usize) = (6, 6);

/// Full agent state, optionally t-augmented for exact exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DoorKeyState {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub has_key: bool,
    pub door_open: bool,
    pub t: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DoorKeyLiteEnv {
    x: usize,
    y: usize,
    heading: Heading,
    has_key: bool,
    door_open: bool,
    t: usize,
    done: bool,
}

impl DoorKeyLiteEnv {
    pub fn new() -> Self {
        DoorKeyLiteEnv {
            x: 1,
            y: 1,
            heading: Heading::East,
            has_key: false,
            door_open: false,
            t: 0,
            done: false,
        }
    }

    fn passable(x: usize, y: usize, door_open: bool) -> bool {
        let inside = (1..=GRID_SIZE - 2).contains(&x) && (1..=GRID_SIZE - 2).contains(&y);
        if !inside {
            return false;
        }
        if x == WALL_X {
            return (x, y) == DOOR && door_open;
        }
        true
    }

    pub fn agent_state(&self, with_t: bool) -> DoorKeyState {
        DoorKeyState {
            x: self.x,
            y: self.y,
            heading: self.heading,
            has_key: self.has_key,
            door_open: self.door_open,
            t: with_t.then_some(self.t),
        }
    }

    /// Pure transition on t-free states.
    pub(super) fn apply(state: DoorKeyState, action: usize) -> DoorKeyState {
        let mut next = state;
        match action {
            0..=2 => {
                let open = state.door_open;
                let (nx, ny, nh) =
                    move_agent(state.x, state.y, state.heading, action, true, |x, y| {
                        Self::passable(x, y, open)
                    });
                (next.x, next.y, next.heading) = (nx, ny, nh);
            }
            3 => {
                if (state.x, state.y) == KEY && !state.has_key {
                    next.has_key = true;
                }
            }
            4 => {
                let adjacent = state.x.abs_diff(DOOR.0) + state.y.abs_diff(DOOR.1) == 1;
                if state.has_key && !state.door_open && adjacent {
                    next.door_open = true;
                }
            }
            _ => {}
        }
        next
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut obs = encode_pose(self.x, self.y, self.heading);
        obs.push(self.has_key as u8 as f64);
        obs.push(self.door_open as u8 as f64);
        obs
    }
}

impl Default for DoorKeyLiteEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for DoorKeyLiteEnv {
    fn observation_dim(&self) -> usize {
        DOORKEY_OBS_DIM
    }

    fn num_actions(&self) -> usize {
        DOORKEY_NUM_ACTIONS
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        *self = DoorKeyLiteEnv::new();
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::NeedsReset);
        }
        if action >= DOORKEY_NUM_ACTIONS {
            return Err(EnvError::ActionOutOfRange { action, num_actions: DOORKEY_NUM_ACTIONS });
        }
        let next = Self::apply(self.agent_state(false), action);
        (self.x, self.y, self.heading) = (next.x, next.y, next.heading);
        self.has_key = next.has_key;
        self.door_open = next.door_open;
        self.t += 1;

        let (reward, terminal_kind) = if (self.x, self.y) == GOAL {
            (goal_reward(self.t, GRID_MAX_STEPS), TerminalKind::Terminated)
        } else if self.t >= GRID_MAX_STEPS {
            (0.0, TerminalKind::Truncated)
        } else {
            (0.0, TerminalKind::None)
        };
        self.done = terminal_kind.is_episode_end();
        Ok(EnvStepOutcome { observation: self.observe(), reward, terminal_kind })
    }
}
