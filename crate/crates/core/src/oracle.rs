//! Exact dynamic-programming ground truth for entropy-regularized
//! deterministic MDPs: task values, trajectory-entropy values, advantages,
//! the soft objective `J = E[V + tau * V_H]`, its exact gradient for tabular
//! softmax policies, and a finite-difference checker.
//!
//! Values are obtained by direct dense linear solves over the nonterminal
//! states (terminal states pin `V = V_H = 0`), so every quantity is exact up
//! to factorization round-off. State spaces are expected to be small.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mdp::{DeterministicTabularMdp, EstimatorConfig};

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("linear system is singular (gamma = 1 with recurrent nonterminal states?)")]
    SingularSystem,
    #[error("bad policy: {0}")]
    BadPolicy(String),
}

/// A tabular policy, optionally parameterized by per-state softmax logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub num_states: usize,
    pub num_actions: usize,
    probs: Vec<f64>,
    logits: Option<Vec<f64>>,
}

impl TabularPolicy {
    pub fn from_probs(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self, OracleError> {
        if probs.len() != num_states * num_actions {
            return Err(OracleError::BadPolicy("probability table has the wrong shape".into()));
        }
        for s in 0..num_states {
            let row = &probs[s * num_actions..(s + 1) * num_actions];
            if row.iter().any(|&p| p < 0.0) {
                return Err(OracleError::BadPolicy(format!("negative probability at state {s}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(OracleError::BadPolicy(format!("state {s} row sums to {sum}")));
            }
        }
        Ok(TabularPolicy { num_states, num_actions, probs, logits: None })
    }

    /// Row-wise softmax of `logits`; keeps the logits so gradients are defined.
    pub fn from_logits(num_states: usize, num_actions: usize, logits: Vec<f64>) -> Result<Self, OracleError> {
        if logits.len() != num_states * num_actions {
            return Err(OracleError::BadPolicy("logit table has the wrong shape".into()));
        }
        let mut probs = vec![0.0; logits.len()];
        for s in 0..num_states {
            let row = &logits[s * num_actions..(s + 1) * num_actions];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (a, &l) in row.iter().enumerate() {
                let e = (l - max).exp();
                probs[s * num_actions + a] = e;
                z += e;
            }
            for a in 0..num_actions {
                probs[s * num_actions + a] /= z;
            }
        }
        Ok(TabularPolicy { num_states, num_actions, probs, logits: Some(logits) })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        TabularPolicy {
            num_states,
            num_actions,
            probs: vec![p; num_states * num_actions],
            logits: Some(vec![0.0; num_states * num_actions]),
        }
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[state * self.num_actions + action]
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    /// Shannon entropy of the action distribution at `state`, in nats.
    pub fn entropy(&self, state: usize) -> f64 {
        (0..self.num_actions)
            .map(|a| {
                let p = self.prob(state, a);
                if p > 0.0 {
                    -p * p.ln()
                } else {
                    0.0
                }
            })
            .sum()
    }
}

/// Everything the oracle knows about one (MDP, policy, config) triple.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub v: Vec<f64>,
    pub v_h: Vec<f64>,
    pub q: Vec<f64>,
    pub q_h: Vec<f64>,
    pub a: Vec<f64>,
    pub a_h: Vec<f64>,
    pub a_soft: Vec<f64>,
    pub j: f64,
}

fn check_shapes(mdp: &DeterministicTabularMdp, policy: &TabularPolicy) -> Result<(), OracleError> {
    if policy.num_states != mdp.num_states || policy.num_actions != mdp.num_actions {
        return Err(OracleError::BadPolicy(format!(
            "policy shape ({}, {}) does not match MDP ({}, {})",
            policy.num_states, policy.num_actions, mdp.num_states, mdp.num_actions
        )));
    }
    Ok(())
}

/// Solves `V(s) = b(s) + gamma * sum_a pi(a|s) V(T(s,a))` over the
/// nonterminal states with `V(terminal) = 0`, by dense LU factorization.
fn solve_bellman(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    gamma: f64,
    local: impl Fn(usize) -> f64,
) -> Result<Vec<f64>, OracleError> {
    let nonterminal: Vec<usize> = (0..mdp.num_states).filter(|&s| !mdp.is_terminal(s)).collect();
    let row_of: std::collections::HashMap<usize, usize> =
        nonterminal.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = nonterminal.len();
    let mut matrix = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (i, &s) in nonterminal.iter().enumerate() {
        rhs[i] = local(s);
        for a in 0..mdp.num_actions {
            let next = mdp.next_state(s, a);
            if let Some(&j) = row_of.get(&next) {
                matrix[(i, j)] -= gamma * policy.prob(s, a);
            }
        }
    }
    let solution = matrix.lu().solve(&rhs).ok_or(OracleError::SingularSystem)?;
    let mut values = vec![0.0; mdp.num_states];
    for (i, &s) in nonterminal.iter().enumerate() {
        values[s] = solution[i];
    }
    Ok(values)
}

/// Task value and action-value under the policy: `V`, and
/// `Q(s,a) = r(s,a) + gamma_v * V(T(s,a))`.
pub fn solve_value(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    gamma_v: f64,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    check_shapes(mdp, policy)?;
    let expected_reward = |s: usize| -> f64 {
        (0..mdp.num_actions).map(|a| policy.prob(s, a) * mdp.reward_at(s, a)).sum()
    };
    let v = solve_bellman(mdp, policy, gamma_v, expected_reward)?;
    let q = (0..mdp.num_states * mdp.num_actions)
        .map(|idx| {
            let (s, a) = (idx / mdp.num_actions, idx % mdp.num_actions);
            mdp.reward_at(s, a) + gamma_v * v[mdp.next_state(s, a)]
        })
        .collect();
    Ok((v, q))
}

/// Trajectory-entropy value (entropy rate) and its action-value:
/// `V_H(s) = H(pi(.|s)) + gamma_h * sum_a pi(a|s) V_H(T(s,a))` and
/// `Q_H(s,a) = gamma_h * V_H(T(s,a))`.
pub fn solve_entropy_value(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    gamma_h: f64,
) -> Result<(Vec<f64>, Vec<f64>), OracleError> {
    check_shapes(mdp, policy)?;
    let v_h = solve_bellman(mdp, policy, gamma_h, |s| policy.entropy(s))?;
    let q_h = (0..mdp.num_states * mdp.num_actions)
        .map(|idx| {
            let (s, a) = (idx / mdp.num_actions, idx % mdp.num_actions);
            gamma_h * v_h[mdp.next_state(s, a)]
        })
        .collect();
    Ok((v_h, q_h))
}

/// The soft objective `J(pi) = E_{s0 ~ rho}[V(s0) + tau * V_H(s0)]`.
pub fn soft_objective(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    cfg: &EstimatorConfig,
) -> Result<f64, OracleError> {
    let (v, _) = solve_value(mdp, policy, cfg.gamma_v)?;
    let (v_h, _) = solve_entropy_value(mdp, policy, cfg.gamma_h)?;
    Ok(mdp
        .initial_distribution
        .iter()
        .enumerate()
        .map(|(s, &p)| p * (v[s] + cfg.tau * v_h[s]))
        .sum())
}

/// Full advantage tables. `A = Q - V`; the entropy advantage is
/// `A_H(s,a) = Q_H(s,a) - V_H(s) + H(pi(.|s))` (mean zero under the policy);
/// the soft advantage is `A + tau * A_H`. Terminal rows are zero.
pub fn oracle_advantages(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    cfg: &EstimatorConfig,
) -> Result<OracleSolution, OracleError> {
    let (v, q) = solve_value(mdp, policy, cfg.gamma_v)?;
    let (v_h, q_h) = solve_entropy_value(mdp, policy, cfg.gamma_h)?;
    let table = mdp.num_states * mdp.num_actions;
    let mut a = vec![0.0; table];
    let mut a_h = vec![0.0; table];
    let mut a_soft = vec![0.0; table];
    for s in 0..mdp.num_states {
        if mdp.is_terminal(s) {
            continue;
        }
        let entropy = policy.entropy(s);
        for action in 0..mdp.num_actions {
            let idx = s * mdp.num_actions + action;
            a[idx] = q[idx] - v[s];
            a_h[idx] = q_h[idx] - v_h[s] + entropy;
            a_soft[idx] = a[idx] + cfg.tau * a_h[idx];
        }
    }
    let j = mdp
        .initial_distribution
        .iter()
        .enumerate()
        .map(|(s, &p)| p * (v[s] + cfg.tau * v_h[s]))
        .sum();
    Ok(OracleSolution { v, v_h, q, q_h, a, a_h, a_soft, j })
}

/// Discounted state occupancy `rho_gamma(s) = sum_t gamma^t P(s_t = s)`,
/// solved from `(I - gamma * P_pi^T) x = rho`. Requires `gamma < 1`.
pub fn discounted_occupancy(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    gamma: f64,
) -> Result<Vec<f64>, OracleError> {
    check_shapes(mdp, policy)?;
    let n = mdp.num_states;
    let mut matrix = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        for a in 0..mdp.num_actions {
            matrix[(mdp.next_state(s, a), s)] -= gamma * policy.prob(s, a);
        }
    }
    let rho = DVector::from_iterator(n, mdp.initial_distribution.iter().cloned());
    let occupancy = matrix.lu().solve(&rho).ok_or(OracleError::SingularSystem)?;
    Ok(occupancy.iter().cloned().collect())
}

/// Expected number of visits to each nonterminal state before absorption
/// (undiscounted occupancy). Singular when the policy can avoid absorption.
pub fn undiscounted_visits(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, OracleError> {
    check_shapes(mdp, policy)?;
    let nonterminal: Vec<usize> = (0..mdp.num_states).filter(|&s| !mdp.is_terminal(s)).collect();
    let row_of: std::collections::HashMap<usize, usize> =
        nonterminal.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let n = nonterminal.len();
    let mut matrix = DMatrix::<f64>::identity(n, n);
    for (i, &s) in nonterminal.iter().enumerate() {
        for a in 0..mdp.num_actions {
            if let Some(&j) = row_of.get(&mdp.next_state(s, a)) {
                matrix[(j, i)] -= policy.prob(s, a);
            }
        }
    }
    let rho = DVector::from_iterator(n, nonterminal.iter().map(|&s| mdp.initial_distribution[s]));
    let visits = matrix.lu().solve(&rho).ok_or(OracleError::SingularSystem)?;
    let mut out = vec![0.0; mdp.num_states];
    for (i, &s) in nonterminal.iter().enumerate() {
        out[s] = visits[i];
    }
    Ok(out)
}

/// The gradient of `log pi(a|s)` with respect to logit `(s, b)` is
/// `1[a = b] - pi(b|s)`; this accumulates `sum_a pi(a|s) w(a) * grad log pi`
/// into the state's logit row.
fn accumulate_score_terms(
    grad_row: &mut [f64],
    policy: &TabularPolicy,
    state: usize,
    weight: impl Fn(usize) -> f64,
) {
    let num_actions = policy.num_actions;
    let mut weighted: Vec<f64> = (0..num_actions).map(|a| policy.prob(state, a) * weight(a)).collect();
    let total: f64 = weighted.iter().sum();
    for b in 0..num_actions {
        weighted[b] -= policy.prob(state, b) * total;
        grad_row[b] += weighted[b];
    }
}

/// Exact gradient of the soft objective with respect to tabular softmax
/// logits.
///
/// The task stream weights advantages by the `gamma_v`-discounted occupancy.
/// The entropy stream, weighted by the `gamma_h`-discounted occupancy, scores
/// `A_H(s,a) - log pi(a|s) - H(pi(.|s))`: the pointwise `-log pi` term is the
/// per-state entropy gradient, which the advantage-only form misses (a purely
/// entropy-generating state has `A_H = 0` everywhere yet `J` still changes
/// with its logits). Verified against central finite differences of
/// `soft_objective`.
pub fn exact_soft_policy_gradient(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>, OracleError> {
    if policy.logits().is_none() {
        return Err(OracleError::BadPolicy("gradient requires a softmax-logit policy".into()));
    }
    let sol = oracle_advantages(mdp, policy, cfg)?;
    let rho_v = discounted_occupancy(mdp, policy, cfg.gamma_v)?;
    let rho_h = discounted_occupancy(mdp, policy, cfg.gamma_h)?;
    let num_actions = mdp.num_actions;
    let mut grad = vec![0.0; mdp.num_states * num_actions];
    for s in 0..mdp.num_states {
        if mdp.is_terminal(s) {
            continue;
        }
        let row = &mut grad[s * num_actions..(s + 1) * num_actions];
        accumulate_score_terms(row, policy, s, |a| rho_v[s] * sol.a[s * num_actions + a]);
        if cfg.tau != 0.0 {
            let entropy = policy.entropy(s);
            accumulate_score_terms(row, policy, s, |a| {
                let local = sol.a_h[s * num_actions + a] - policy.prob(s, a).ln() - entropy;
                cfg.tau * rho_h[s] * local
            });
        }
    }
    Ok(grad)
}

/// The practical sampled-gradient analogue: a single undiscounted visitation
/// measure weighting the pointwise soft-advantage term. Differs from the
/// exact gradient by the dropped `gamma^t` occupancy weighting (and by an
/// overall scale equal to the expected episode length when normalized).
pub fn approx_soft_policy_gradient(
    mdp: &DeterministicTabularMdp,
    policy: &TabularPolicy,
    cfg: &EstimatorConfig,
) -> Result<Vec<f64>, OracleError> {
    if policy.logits().is_none() {
        return Err(OracleError::BadPolicy("gradient requires a softmax-logit policy".into()));
    }
    let sol = oracle_advantages(mdp, policy, cfg)?;
    let visits = undiscounted_visits(mdp, policy)?;
    let num_actions = mdp.num_actions;
    let mut grad = vec![0.0; mdp.num_states * num_actions];
    for s in 0..mdp.num_states {
        if mdp.is_terminal(s) {
            continue;
        }
        let entropy = policy.entropy(s);
        let row = &mut grad[s * num_actions..(s + 1) * num_actions];
        accumulate_score_terms(row, policy, s, |a| {
            let idx = s * num_actions + a;
            let entropy_part = sol.a_h[idx] - policy.prob(s, a).ln() - entropy;
            visits[s] * (sol.a[idx] + cfg.tau * entropy_part)
        });
    }
    Ok(grad)
}

/// Central finite differences of an arbitrary scalar function of a flat
/// parameter vector.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = f(&probe);
        probe[i] = original - h;
        let minus = f(&probe);
        probe[i] = original;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}

/// Central finite differences of the soft objective over logits.
pub fn finite_difference_gradient(
    mdp: &DeterministicTabularMdp,
    logits: &[f64],
    cfg: &EstimatorConfig,
    h: f64,
) -> Vec<f64> {
    assert!(h > 0.0, "finite-difference step must be positive");
    central_difference(
        |theta| {
            let policy = TabularPolicy::from_logits(mdp.num_states, mdp.num_actions, theta.to_vec())
                .expect("logit shape is fixed");
            soft_objective(mdp, &policy, cfg).expect("objective solvable at perturbed logits")
        },
        logits,
        h,
    )
}

/// Max relative error with an absolute floor, the comparison metric for all
/// gradient checks: `|a - b| / max(floor, |a|, |b|)`.
pub fn max_relative_error(lhs: &[f64], rhs: &[f64], floor: f64) -> f64 {
    assert_eq!(lhs.len(), rhs.len());
    lhs.iter()
        .zip(rhs)
        .map(|(&a, &b)| (a - b).abs() / floor.max(a.abs()).max(b.abs()))
        .fold(0.0, f64::max)
}
