//! Tabular MDP generators and an episodic environment wrapper around
//! `DeterministicTabularMdp`, used as small substrates for oracle and
//! estimator tests.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EnvError, EnvStepOutcome, Environment};
use crate::mdp::{DeterministicTabularMdp, MdpError, TerminalKind};

/// A line of `n` states: action 0 moves right, every other action stays put.
/// Entering the last state pays reward 1 and terminates.
pub fn chain_mdp(n: usize, k: usize) -> Result<DeterministicTabularMdp, MdpError> {
    if n < 2 || k < 2 {
        return Err(MdpError::BadSize(format!("chain needs n >= 2 and k >= 2, got ({n}, {k})")));
    }
    let mut transition = vec![0usize; n * k];
    let mut reward = vec![0.0; n * k];
    for s in 0..n - 1 {
        for a in 0..k {
            let next = if a == 0 { s + 1 } else { s };
            transition[s * k + a] = next;
            reward[s * k + a] = if next == n - 1 { 1.0 } else { 0.0 };
        }
    }
    for a in 0..k {
        transition[(n - 1) * k + a] = n - 1;
    }
    let mut initial_distribution = vec![0.0; n];
    initial_distribution[0] = 1.0;
    let mut terminal_mask = vec![false; n];
    terminal_mask[n - 1] = true;
    DeterministicTabularMdp {
        num_states: n,
        num_actions: k,
        transition,
        reward,
        initial_distribution,
        terminal_mask,
    }
    .validate()
}

/// A seeded random deterministic MDP for gradient and estimator checks.
///
/// Draws, in order, from `ChaCha8Rng::seed_from_u64(seed)`:
/// transitions row-major (uniform state index), rewards row-major (uniform
/// in [-1, 1)), then one terminal state (uniform), whose rows are overwritten
/// with the absorbing zero-reward convention. The initial distribution is
/// uniform over all states.
pub fn random_tabular_mdp(seed: u64, num_states: usize, num_actions: usize) -> DeterministicTabularMdp {
    use rand::SeedableRng;
    assert!((2..=10).contains(&num_states), "num_states must lie in 2..=10");
    assert!((2..=4).contains(&num_actions), "num_actions must lie in 2..=4");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = num_states * num_actions;
    let mut transition: Vec<usize> = (0..table).map(|_| rng.random_range(0..num_states)).collect();
    let mut reward: Vec<f64> = (0..table).map(|_| rng.random_range(-1.0..1.0)).collect();
    let terminal = rng.random_range(0..num_states);
    for a in 0..num_actions {
        transition[terminal * num_actions + a] = terminal;
        reward[terminal * num_actions + a] = 0.0;
    }
    let mut terminal_mask = vec![false; num_states];
    terminal_mask[terminal] = true;
    DeterministicTabularMdp {
        num_states,
        num_actions,
        transition,
        reward,
        initial_distribution: vec![1.0 / num_states as f64; num_states],
        terminal_mask,
    }
    .validate()
    .expect("generated MDP satisfies the invariants by construction")
}

/// Episodic wrapper: one-hot state observations, initial states drawn from the
/// MDP's distribution, termination on entering a terminal state, truncation at
/// `max_steps`.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: DeterministicTabularMdp,
    state: usize,
    t: usize,
    max_steps: usize,
    done: bool,
    ready: bool,
}

impl TabularEnv {
    pub const DEFAULT_MAX_STEPS: usize = 256;

    pub fn new(mdp: DeterministicTabularMdp, max_steps: usize) -> Self {
        TabularEnv { mdp, state: 0, t: 0, max_steps, done: false, ready: false }
    }

    pub fn mdp(&self) -> &DeterministicTabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.num_states];
        obs[self.state] = 1.0;
        obs
    }

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (s, &p) in self.mdp.initial_distribution.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return s;
            }
        }
        self.mdp.num_states - 1
    }
}

impl Environment for TabularEnv {
    fn observation_dim(&self) -> usize {
        self.mdp.num_states
    }

    fn num_actions(&self) -> usize {
        self.mdp.num_actions
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state = self.sample_initial(rng);
        self.t = 0;
        self.done = false;
        self.ready = true;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<EnvStepOutcome, EnvError> {
        if self.done || !self.ready {
            return Err(EnvError::NeedsReset);
        }
        if action >= self.mdp.num_actions {
            return Err(EnvError::ActionOutOfRange { action, num_actions: self.mdp.num_actions });
        }
        let reward = self.mdp.reward_at(self.state, action);
        self.state = self.mdp.next_state(self.state, action);
        self.t += 1;
        let terminal_kind = if self.mdp.is_terminal(self.state) {
            TerminalKind::Terminated
        } else if self.t >= self.max_steps {
            TerminalKind::Truncated
        } else {
            TerminalKind::None
        };
        self.done = terminal_kind.is_episode_end();
        Ok(EnvStepOutcome { observation: self.observe(), reward, terminal_kind })
    }
}
