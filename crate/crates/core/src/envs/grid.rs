//! The 8x8 empty gridworld with combined turn-and-move actions.
//!
//! Seven discrete actions: turn-left, turn-right, forward, and four no-ops.
//! With `modified_turns` (the default), the turning actions also advance one
//! cell in the new heading, so no step is wasted on maneuvering and multiple
//! optimal trajectories exist. The goal transition pays `1 - 0.9 t / T`;
//! hitting the step cap `T = 256` truncates with zero reward.

use rand_chacha::ChaCha8Rng;
use std::collections::{HashMap, VecDeque};

use super::{EnvError, EnvStepOutcome, Environment};
use crate::mdp::TerminalKind;

pub const GRID_SIZE: usize = 8;
pub const GRID_MAX_STEPS: usize = 256;
pub const GRID_NUM_ACTIONS: usize = 7;
/// One-hot (x, y, heading) over the 6x6 interior and 4 headings.
pub const GRID_OBS_DIM: usize = 2 * (GRID_SIZE - 2) + 4;

/// Agent heading; clockwise order so turning right increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Heading {
    East = 0,
    South = 1,
    West = 2,
    North = 3,
}

impl Heading {
    pub fn from_index(i: usize) -> Heading {
        match i % 4 {
            0 => Heading::East,
            1 => Heading::South,
            2 => Heading::West,
            _ => Heading::North,
        }
    }

    pub fn left(self) -> Heading {
        Heading::from_index(self as usize + 3)
    }

    pub fn right(self) -> Heading {
        Heading::from_index(self as usize + 1)
    }

    pub fn delta(self) -> (isize, isize) {
        match self {
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
            Heading::North => (0, -1),
        }
    }
}

/// Agent pose, optionally augmented with the step counter for exact exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridAgentState {
    pub x: usize,
    pub y: usize,
    pub heading: Heading,
    pub t: Option<usize>,
}

/// Goal reward as a function of the number of steps taken.
pub fn goal_reward(t: usize, max_steps: usize) -> f64 {
    1.0 - 0.9 * (t as f64) / (max_steps as f64)
}

/// Turn/move resolution shared by the gridworld environments. Turning
/// changes the heading even when the subsequent move is blocked; a blocked
/// move clamps the position in place.
pub(super) fn move_agent(
    x: usize,
    y: usize,
    heading: Heading,
    action: usize,
    modified_turns: bool,
    passable: impl Fn(usize, usize) -> bool,
) -> (usize, usize, Heading) {
    let (new_heading, advance) = match action {
        0 => (heading.left(), modified_turns),
        1 => (heading.right(), modified_turns),
        2 => (heading, true),
        _ => (heading, false),
    };
    if !advance {
        return (x, y, new_heading);
    }
    let (dx, dy) = new_heading.delta();
    let nx = (x as isize + dx) as usize;
    let ny = (y as isize + dy) as usize;
    if passable(nx, ny) {
        (nx, ny, new_heading)
    } else {
        (x, y, new_heading)
    }
}

#[derive(Debug, Clone)]
pub struct GridEmptyEnv {
    x: usize,
    y: usize,
    heading: Heading,
    t: usize,
    done: bool,
    pub modified_turns: bool,
}

impl GridEmptyEnv {
    pub fn new(modified_turns: bool) -> Self {
        GridEmptyEnv { x: 1, y: 1, heading: Heading::East, t: 0, done: false, modified_turns }
    }

    pub const fn goal() -> (usize, usize) {
        (GRID_SIZE - 2, GRID_SIZE - 2)
    }

    fn passable(x: usize, y: usize) -> bool {
        (1..=GRID_SIZE - 2).contains(&x) && (1..=GRID_SIZE - 2).contains(&y)
    }

    pub fn agent_state(&self, with_t: bool) -> GridAgentState {
        GridAgentState {
            x: self.x,
            y: self.y,
            heading: self.heading,
            t: with_t.then_some(self.t),
        }
    }

    /// Pure transition on poses; the step counter and reward live in `step`.
    pub(super) fn apply_pose(
        &self,
        x: usize,
        y: usize,
        heading: Heading,
        action: usize,
    ) -> (usize, usize, Heading) {
        move_agent(x, y, heading, action, self.modified_turns, Self::passable)
    }

    pub fn observe(&self) -> Vec<f64> {
        encode_pose(self.x, self.y, self.heading)
    }

    /// Fewest steps from the start pose to the goal cell, by BFS over the
    /// environment's own transition function.
    pub fn optimal_steps(&self) -> usize {
        let start = (1usize, 1usize, Heading::East);
        let mut dist = HashMap::from([(start, 0usize)]);
        let mut queue = VecDeque::from([start]);
        while let Some((x, y, h)) = queue.pop_front() {
            let d = dist[&(x, y, h)];
            for action in 0..3 {
                let (nx, ny, nh) = self.apply_pose(x, y, h, action);
                if (nx, ny) == Self::goal() {
                    return d + 1;
                }
                if !dist.contains_key(&(nx, ny, nh)) {
                    dist.insert((nx, ny, nh), d + 1);
                    queue.push_back((nx, ny, nh));
                }
            }
        }
        unreachable!("goal is always reachable in the empty grid")
    }
}

/// One-hot (x, y, heading) encoding: interior coordinates map to blocks of
/// size 6, headings to a block of 4; exactly three ones.
pub(super) fn encode_pose(x: usize, y: usize, heading: Heading) -> Vec<f64> {
    let interior = GRID_SIZE - 2;
    let mut obs = vec![0.0; GRID_OBS_DIM];
    obs[x - 1] = 1.0;
    obs[interior + (y - 1)] = 1.0;
    obs[2 * interior + heading as usize] = 1.0;
    obs
}

impl Environment for GridEmptyEnv {
    fn observation_dim(&self) -> usize {
        GRID_OBS_DIM
    }

    fn num_actions(&self) -> usize {
        GRID_NUM_ACTIONS
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        *self = GridEmptyEnv::new(self.modified_turns);
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::NeedsReset);
        }
        if action >= GRID_NUM_ACTIONS {
            return Err(EnvError::ActionOutOfRange { action, num_actions: GRID_NUM_ACTIONS });
        }
        let (nx, ny, nh) = self.apply_pose(self.x, self.y, self.heading, action);
        (self.x, self.y, self.heading) = (nx, ny, nh);
        self.t += 1;

        let (reward, terminal_kind) = if (self.x, self.y) == Self::goal() {
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
