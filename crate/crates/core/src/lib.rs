//! A self-contained maximum-entropy on-policy reinforcement-learning
//! laboratory: deterministic discrete environments, an exact
//! dynamic-programming oracle for entropy-regularized MDPs, a from-scratch
//! differentiable actor-critic network, dual-stream advantage estimation, and
//! PPO/TRPO-style policy optimisation with a soft (entropy-augmented)
//! advantage.

pub mod envs;
pub mod mdp;
pub mod oracle;

pub use mdp::{
    DeterministicTabularMdp, EpisodeSlice, EstimatorConfig, Fragment, MdpError, RolloutBuffer,
    StepRecord, TerminalKind,
};
