//! Core domain types shared by environments, estimators, the oracle, and the
//! training algorithms: deterministic tabular MDPs, estimator configuration,
//! and the on-policy rollout buffer.

use std::fmt::Write as _;

use thiserror::Error;

/// Normalization slack for probability vectors.
pub const DIST_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("transition[{state},{action}] = {target} is outside the state set (0..{num_states})")]
    IndexOutOfRange {
        state: usize,
        action: usize,
        target: usize,
        num_states: usize,
    },
    #[error("initial distribution sums to {sum}, expected 1 within {DIST_TOL}")]
    BadDistribution { sum: f64 },
    #[error("terminal state {state} has an outgoing transition or nonzero reward")]
    NonAbsorbingTerminal { state: usize },
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// How a recorded step ended its episode, if at all.
///
/// `Terminated` means the environment reached an absorbing state (zero
/// continuation value); `Truncated` means a time limit cut the episode short
/// (estimators bootstrap the critic there).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    None,
    Terminated,
    Truncated,
}

impl TerminalKind {
    pub fn is_episode_end(self) -> bool {
        !matches!(self, TerminalKind::None)
    }
}

/// A finite MDP with deterministic transitions, stored as dense tables.
///
/// Terminal states are absorbing: they self-loop with zero reward, so the
/// infinite-horizon discounted recursions apply uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicTabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transition[s * num_actions + a]` = successor state index.
    pub transition: Vec<usize>,
    /// `reward[s * num_actions + a]` = immediate reward.
    pub reward: Vec<f64>,
    /// Initial state distribution; entries >= 0, sums to 1.
    pub initial_distribution: Vec<f64>,
    /// `terminal_mask[s]` marks absorbing states.
    pub terminal_mask: Vec<bool>,
}

impl DeterministicTabularMdp {
    pub fn next_state(&self, state: usize, action: usize) -> usize {
        self.transition[state * self.num_actions + action]
    }

    pub fn reward_at(&self, state: usize, action: usize) -> f64 {
        self.reward[state * self.num_actions + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal_mask[state]
    }

    /// Checks all structural invariants and returns the MDP unchanged.
    pub fn validate(self) -> Result<Self, MdpError> {
        let (s_count, a_count) = (self.num_states, self.num_actions);
        if s_count == 0 || a_count == 0 {
            return Err(MdpError::BadSize("empty state or action set".into()));
        }
        let table_len = s_count * a_count;
        if self.transition.len() != table_len
            || self.reward.len() != table_len
            || self.initial_distribution.len() != s_count
            || self.terminal_mask.len() != s_count
        {
            return Err(MdpError::BadSize(format!(
                "table sizes do not match {s_count} states x {a_count} actions"
            )));
        }
        for s in 0..s_count {
            for a in 0..a_count {
                let target = self.next_state(s, a);
                if target >= s_count {
                    return Err(MdpError::IndexOutOfRange {
                        state: s,
                        action: a,
                        target,
                        num_states: s_count,
                    });
                }
            }
        }
        let sum: f64 = self.initial_distribution.iter().sum();
        if (sum - 1.0).abs() > DIST_TOL || self.initial_distribution.iter().any(|&p| p < 0.0) {
            return Err(MdpError::BadDistribution { sum });
        }
        for s in 0..s_count {
            if !self.terminal_mask[s] {
                continue;
            }
            for a in 0..a_count {
                if self.next_state(s, a) != s || self.reward_at(s, a) != 0.0 {
                    return Err(MdpError::NonAbsorbingTerminal { state: s });
                }
            }
        }
        Ok(self)
    }

    /// Serializes to the plain-text tabular format (see `from_text`).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# tabular-mdp v1");
        let _ = writeln!(out, "states {} actions {}", self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                let _ = writeln!(out, "{} {}", self.next_state(s, a), self.reward_at(s, a));
            }
        }
        let rho: Vec<String> = self.initial_distribution.iter().map(|p| p.to_string()).collect();
        let _ = writeln!(out, "{}", rho.join(" "));
        let mask: Vec<&str> = self.terminal_mask.iter().map(|&t| if t { "1" } else { "0" }).collect();
        let _ = writeln!(out, "{}", mask.join(" "));
        out
    }

    /// Parses the plain-text tabular format:
    ///
    /// ```text
    /// states <S> actions <A>
    /// <next_state> <reward>      # one line per (state, action), row-major
    /// ...                        # S*A transition lines
    /// <rho_0> ... <rho_{S-1}>    # initial distribution
    /// <t_0> ... <t_{S-1}>        # terminal mask, 0 or 1
    /// ```
    ///
    /// Blank lines and `#` comments are ignored. The result is validated.
    pub fn from_text(text: &str) -> Result<Self, MdpError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (line_no, header) = lines
            .next()
            .ok_or(MdpError::Parse { line: 0, msg: "empty input".into() })?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "states" || toks[2] != "actions" {
            return Err(MdpError::Parse {
                line: line_no,
                msg: format!("expected `states <S> actions <A>`, got `{header}`"),
            });
        }
        let parse_count = |tok: &str, line: usize| {
            tok.parse::<usize>().map_err(|e| MdpError::Parse { line, msg: e.to_string() })
        };
        let num_states = parse_count(toks[1], line_no)?;
        let num_actions = parse_count(toks[3], line_no)?;

        let mut transition = Vec::with_capacity(num_states * num_actions);
        let mut reward = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states * num_actions {
            let (line_no, line) = lines.next().ok_or(MdpError::Parse {
                line: 0,
                msg: "missing transition lines".into(),
            })?;
            let mut parts = line.split_whitespace();
            let next = parse_count(parts.next().unwrap_or(""), line_no)?;
            let r: f64 = parts
                .next()
                .unwrap_or("")
                .parse()
                .map_err(|e: std::num::ParseFloatError| MdpError::Parse {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            transition.push(next);
            reward.push(r);
        }

        let mut parse_row = |expected: usize, what: &str| -> Result<(usize, Vec<f64>), MdpError> {
            let (line_no, line) = lines.next().ok_or(MdpError::Parse {
                line: 0,
                msg: format!("missing {what} line"),
            })?;
            let row: Result<Vec<f64>, _> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect();
            let row = row.map_err(|e| MdpError::Parse { line: line_no, msg: e.to_string() })?;
            if row.len() != expected {
                return Err(MdpError::Parse {
                    line: line_no,
                    msg: format!("expected {expected} {what} entries, got {}", row.len()),
                });
            }
            Ok((line_no, row))
        };
        let (_, initial_distribution) = parse_row(num_states, "initial distribution")?;
        let (mask_line, mask_row) = parse_row(num_states, "terminal mask")?;
        let terminal_mask: Result<Vec<bool>, MdpError> = mask_row
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(false),
                v if v == 1.0 => Ok(true),
                v => Err(MdpError::Parse {
                    line: mask_line,
                    msg: format!("terminal mask entry must be 0 or 1, got {v}"),
                }),
            })
            .collect();

        DeterministicTabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            initial_distribution,
            terminal_mask: terminal_mask?,
        }
        .validate()
    }
}

/// Discounting and loss-weighting knobs for the two estimation streams.
///
/// `(gamma_v, lambda_v)` drive the task-value stream, `(gamma_h, lambda_h)`
/// the trajectory-entropy stream, and `tau` weighs the entropy advantage in
/// the combined soft advantage.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub gamma_v: f64,
    pub lambda_v: f64,
    pub gamma_h: f64,
    pub lambda_h: f64,
    pub tau: f64,
    pub clip_epsilon: f64,
    /// Critic loss weight (applies to both critic losses).
    pub c1: f64,
    /// Entropy-critic loss weight, nested inside `c1`.
    pub c2: f64,
    pub normalize_advantage: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            gamma_v: 0.99,
            lambda_v: 0.95,
            gamma_h: 0.9,
            lambda_h: 0.0,
            tau: 0.003,
            clip_epsilon: 0.2,
            c1: 0.5,
            c2: 1.0,
            normalize_advantage: true,
        }
    }
}

impl EstimatorConfig {
    /// `gamma_v` must contract; `gamma_h = 1` is permitted only for episodic
    /// environments, which the caller asserts by setting `episodic`.
    pub fn validate(&self, episodic: bool) -> Result<(), MdpError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..1.0).contains(&self.gamma_v) {
            return Err(MdpError::BadSize(format!("gamma_v = {} must lie in [0,1)", self.gamma_v)));
        }
        if !in_unit(self.gamma_h) || (self.gamma_h == 1.0 && !episodic) {
            return Err(MdpError::BadSize(format!(
                "gamma_h = {} must lie in [0,1], with 1 only for episodic tasks",
                self.gamma_h
            )));
        }
        if !in_unit(self.lambda_v) || !in_unit(self.lambda_h) {
            return Err(MdpError::BadSize("lambda_v and lambda_h must lie in [0,1]".into()));
        }
        if self.tau < 0.0 || self.clip_epsilon <= 0.0 || self.c1 < 0.0 || self.c2 < 0.0 {
            return Err(MdpError::BadSize("tau, c1, c2 must be >= 0 and clip_epsilon > 0".into()));
        }
        Ok(())
    }
}

/// One on-policy timestep as recorded by the collector.
///
/// `value_pred` and `entropy_value_pred` are stored in raw (denormalized)
/// scale. `log_prob` is the behaviour policy's log-probability of the action
/// actually taken.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub log_prob: f64,
    pub value_pred: f64,
    pub entropy_value_pred: f64,
    pub terminal_kind: TerminalKind,
    /// Denormalized `(value, entropy value)` critic predictions at the
    /// post-truncation observation. Present exactly when `terminal_kind` is
    /// `Truncated`; the estimator bootstraps from it instead of zeroing the
    /// continuation like a true termination.
    pub truncation_bootstrap: Option<(f64, f64)>,
}

/// One environment's contiguous chunk of a rollout, plus the critic
/// predictions used to bootstrap a fragment that ends mid-episode.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Fragment {
    pub steps: Vec<StepRecord>,
    pub bootstrap_value: f64,
    pub bootstrap_entropy_value: f64,
}

/// On-policy rollout storage: an ordered sequence of per-environment
/// fragments. Flat indices run fragment by fragment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBuffer {
    pub fragments: Vec<Fragment>,
}

/// A maximal run of steps belonging to one episode (or episode fragment),
/// in flat buffer indices. `start..=end` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpisodeSlice {
    pub start: usize,
    pub end: usize,
    pub terminal_kind: TerminalKind,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.fragments.iter().map(|f| f.steps.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.fragments.iter().all(|f| f.steps.is_empty())
    }

    /// Iterates step records in flat order.
    pub fn iter_steps(&self) -> impl Iterator<Item = &StepRecord> {
        self.fragments.iter().flat_map(|f| f.steps.iter())
    }

    /// Partitions the buffer into episode slices, in order. Each slice ends
    /// at a terminated/truncated record or at its fragment's end. The slices
    /// cover every index exactly once.
    pub fn episode_slices(&self) -> Vec<EpisodeSlice> {
        let mut slices = Vec::new();
        let mut base = 0usize;
        for fragment in &self.fragments {
            let mut start = 0usize;
            for (i, step) in fragment.steps.iter().enumerate() {
                if step.terminal_kind.is_episode_end() {
                    slices.push(EpisodeSlice {
                        start: base + start,
                        end: base + i,
                        terminal_kind: step.terminal_kind,
                    });
                    start = i + 1;
                }
            }
            if start < fragment.steps.len() {
                slices.push(EpisodeSlice {
                    start: base + start,
                    end: base + fragment.steps.len() - 1,
                    terminal_kind: TerminalKind::None,
                });
            }
            base += fragment.steps.len();
        }
        slices
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 2-state chain: action 0 moves 0 -> 1, state 1 terminal.
    fn two_state_chain() -> DeterministicTabularMdp {
        DeterministicTabularMdp {
            num_states: 2,
            num_actions: 2,
            transition: vec![1, 0, 1, 1],
            reward: vec![1.0, 0.0, 0.0, 0.0],
            initial_distribution: vec![1.0, 0.0],
            terminal_mask: vec![false, true],
        }
    }

    fn record(kind: TerminalKind) -> StepRecord {
        StepRecord {
            observation: vec![0.0],
            action: 0,
            reward: 0.0,
            log_prob: 0.0,
            value_pred: 0.0,
            entropy_value_pred: 0.0,
            terminal_kind: kind,
            truncation_bootstrap: None,
        }
    }

    #[test]
    fn validate_accepts_valid_chain() {
        assert!(two_state_chain().validate().is_ok());
    }

    #[test]
    fn validate_rejects_out_of_range_transition() {
        let mut mdp = two_state_chain();
        mdp.transition[0] = 2; // == num_states
        assert_eq!(
            mdp.validate().unwrap_err(),
            MdpError::IndexOutOfRange { state: 0, action: 0, target: 2, num_states: 2 }
        );
    }

    #[test]
    fn validate_rejects_unnormalized_distribution() {
        let mut mdp = two_state_chain();
        mdp.initial_distribution = vec![0.5, 0.6];
        match mdp.validate().unwrap_err() {
            MdpError::BadDistribution { sum } => assert!((sum - 1.1).abs() < 1e-12),
            other => panic!("expected BadDistribution, got {other:?}"),
        }
    }

    #[test]
    fn validate_rejects_non_absorbing_terminal() {
        let mut mdp = two_state_chain();
        mdp.reward[2] = 0.5; // terminal state 1, action 0
        assert_eq!(mdp.validate().unwrap_err(), MdpError::NonAbsorbingTerminal { state: 1 });

        let mut mdp = two_state_chain();
        mdp.transition[2] = 0;
        assert_eq!(mdp.validate().unwrap_err(), MdpError::NonAbsorbingTerminal { state: 1 });
    }

    #[test]
    fn episode_slices_split_at_terminations() {
        let mut steps: Vec<StepRecord> = (0..5).map(|_| record(TerminalKind::None)).collect();
        steps[3].terminal_kind = TerminalKind::Terminated;
        let buffer = RolloutBuffer {
            fragments: vec![Fragment { steps, ..Fragment::default() }],
        };
        assert_eq!(
            buffer.episode_slices(),
            vec![
                EpisodeSlice { start: 0, end: 3, terminal_kind: TerminalKind::Terminated },
                EpisodeSlice { start: 4, end: 4, terminal_kind: TerminalKind::None },
            ]
        );
    }

    #[test]
    fn episode_slices_whole_fragment_when_no_terminal() {
        let buffer = RolloutBuffer {
            fragments: vec![Fragment {
                steps: (0..4).map(|_| record(TerminalKind::None)).collect(),
                ..Fragment::default()
            }],
        };
        assert_eq!(
            buffer.episode_slices(),
            vec![EpisodeSlice { start: 0, end: 3, terminal_kind: TerminalKind::None }]
        );
    }

    #[test]
    fn episode_slices_empty_buffer() {
        assert!(RolloutBuffer::default().episode_slices().is_empty());
    }

    #[test]
    fn episode_slices_partition_without_gaps() {
        // Property: over randomized fragment layouts, slices tile 0..len.
        use rand::{Rng, SeedableRng};
        for seed in 0..200u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut fragments = Vec::new();
            for _ in 0..rng.random_range(0..4usize) {
                let len = rng.random_range(0..10usize);
                let steps: Vec<StepRecord> = (0..len)
                    .map(|i| {
                        let kind = match rng.random_range(0..4u8) {
                            0 => TerminalKind::Terminated,
                            1 => TerminalKind::Truncated,
                            _ => TerminalKind::None,
                        };
                        let mut r = record(kind);
                        // A fragment may end mid-episode; interior records keep
                        // episodes contiguous automatically by construction.
                        r.action = i;
                        r
                    })
                    .collect();
                fragments.push(Fragment { steps, ..Fragment::default() });
            }
            let buffer = RolloutBuffer { fragments };
            let slices = buffer.episode_slices();
            let mut expected_start = 0usize;
            for s in &slices {
                assert_eq!(s.start, expected_start, "gap or overlap at seed {seed}");
                assert!(s.end >= s.start);
                expected_start = s.end + 1;
            }
            assert_eq!(expected_start, buffer.len(), "slices must cover the buffer, seed {seed}");
        }
    }

    #[test]
    fn text_round_trip_preserves_mdp() {
        let mdp = two_state_chain().validate().unwrap();
        let text = mdp.to_text();
        let parsed = DeterministicTabularMdp::from_text(&text).unwrap();
        assert_eq!(mdp, parsed);
    }

    #[test]
    fn text_parse_rejects_garbage() {
        assert!(DeterministicTabularMdp::from_text("").is_err());
        assert!(DeterministicTabularMdp::from_text("states 2 actions").is_err());
        let missing_rows = "states 2 actions 1\n1 0.0\n";
        assert!(DeterministicTabularMdp::from_text(missing_rows).is_err());
    }

    #[test]
    fn estimator_config_validation() {
        let cfg = EstimatorConfig::default();
        assert!(cfg.validate(true).is_ok());
        let bad = EstimatorConfig { gamma_v: 1.0, ..cfg };
        assert!(bad.validate(true).is_err());
        let episodic_only = EstimatorConfig { gamma_h: 1.0, ..cfg };
        assert!(episodic_only.validate(true).is_ok());
        assert!(episodic_only.validate(false).is_err());
    }
}
