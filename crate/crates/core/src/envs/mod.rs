//! Deterministic discrete environments: the modified empty gridworld, a
//! two-room door/key gridworld, and tabular-MDP wrappers (chain, seeded
//! random) used as oracle and estimator test substrates.

mod doorkey;
mod export;
mod grid;
mod tabular;

pub use doorkey::{DoorKeyLiteEnv, DoorKeyState};
pub use export::ExportedMdp;
pub use grid::{goal_reward, GridAgentState, GridEmptyEnv, Heading};
pub use tabular::{chain_mdp, random_tabular_mdp, TabularEnv};

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::mdp::TerminalKind;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range (0..{num_actions})")]
    ActionOutOfRange { action: usize, num_actions: usize },
    #[error("environment must be reset before stepping")]
    NeedsReset,
    #[error("state space exceeds the export cap of {cap} states")]
    StateSpaceTooLarge { cap: usize },
    #[error("unknown environment name `{0}`")]
    UnknownName(String),
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
}

/// What a single environment step produced. `observation` is the state the
/// step landed in, before any reset.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal_kind: TerminalKind,
}

/// A single-owner deterministic environment. Reset draws (if any) come from
/// the caller-provided stream so trajectories are reproducible per stream.
pub trait Environment: Send {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<EnvStepOutcome, EnvError>;
}

/// Builds an environment from its config-file name:
/// `grid_empty`, `doorkey_lite`, `chain:<n>:<k>`, `random:<seed>:<S>:<A>`.
pub fn make_env(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    let parts: Vec<&str> = name.split(':').collect();
    match parts.as_slice() {
        ["grid_empty"] => Ok(Box::new(GridEmptyEnv::new(true))),
        ["doorkey_lite"] => Ok(Box::new(DoorKeyLiteEnv::new())),
        ["chain", n, k] => {
            let parse = |t: &str| t.parse::<usize>().map_err(|_| EnvError::UnknownName(name.into()));
            let mdp = chain_mdp(parse(n)?, parse(k)?)?;
            Ok(Box::new(TabularEnv::new(mdp, TabularEnv::DEFAULT_MAX_STEPS)))
        }
        ["random", seed, s, a] => {
            let seed: u64 = seed.parse().map_err(|_| EnvError::UnknownName(name.into()))?;
            let parse = |t: &str| t.parse::<usize>().map_err(|_| EnvError::UnknownName(name.into()));
            let mdp = random_tabular_mdp(seed, parse(s)?, parse(a)?);
            Ok(Box::new(TabularEnv::new(mdp, TabularEnv::DEFAULT_MAX_STEPS)))
        }
        _ => Err(EnvError::UnknownName(name.into())),
    }
}

/// Fewest actions from the initial state until a positive-reward transition
/// fires, by breadth-first search. `None` if no reward is reachable.
pub fn shortest_positive_reward_path(mdp: &crate::mdp::DeterministicTabularMdp) -> Option<usize> {
    use std::collections::VecDeque;
    let mut dist = vec![usize::MAX; mdp.num_states];
    let mut queue = VecDeque::new();
    for (s, &p) in mdp.initial_distribution.iter().enumerate() {
        if p > 0.0 && dist[s] == usize::MAX {
            dist[s] = 0;
            queue.push_back(s);
        }
    }
    let mut best: Option<usize> = None;
    while let Some(s) = queue.pop_front() {
        if mdp.is_terminal(s) {
            continue;
        }
        for a in 0..mdp.num_actions {
            if mdp.reward_at(s, a) > 0.0 {
                let steps = dist[s] + 1;
                best = Some(best.map_or(steps, |b| b.min(steps)));
            }
            let next = mdp.next_state(s, a);
            if dist[next] == usize::MAX {
                dist[next] = dist[s] + 1;
                queue.push_back(next);
            }
        }
    }
    best
}
