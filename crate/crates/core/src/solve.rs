//! Exact dynamic programming on a [`TabularMdp`]: optimal and worst-case
//! action values, fixed-policy evaluation and greedy extraction.
//!
//! All sweeps are synchronous: each new table is computed entirely from the
//! previous one. Iteration stops once the sup-norm change between sweeps is at
//! most `epsilon`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, Policy, QTable, RewardTable, TabularMdp};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub epsilon: f64,
    pub max_sweeps: usize,
}

impl SolveConfig {
    pub fn new(epsilon: f64, max_sweeps: usize) -> Result<Self> {
        let cfg = Self { epsilon, max_sweeps };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_sweeps == 0 {
            return Err(Error::invalid("max_sweeps must be at least 1"));
        }
        Ok(())
    }
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

/// Result of an iterative solve, with the sup-norm change of every sweep.
#[derive(Clone, Debug)]
pub struct Solution {
    pub q: QTable,
    pub sweeps: usize,
    pub residual: f64,
    pub deltas: Vec<f64>,
}

/// Transition rows joined with their rewards: `(s', p, r)` per `(s, a)`.
#[derive(Clone, Debug)]
pub struct Kernel {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    terminal: Vec<bool>,
    rows: Vec<Vec<(usize, f64, f64)>>,
}

impl Kernel {
    pub fn new(mdp: &TabularMdp, rewards: &RewardTable) -> Result<Self> {
        if rewards.n_states() != mdp.n_states() || rewards.n_actions() != mdp.n_actions() {
            return Err(Error::invalid("reward table shape does not match the MDP"));
        }
        let mut rows = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let row = mdp
                    .successors(s, a)
                    .iter()
                    .filter(|x| x.prob > 0.0)
                    .map(|x| Ok((x.state, x.prob, rewards.reward(s, a, x.state)?)))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
        Ok(Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            terminal: (0..mdp.n_states()).map(|s| mdp.is_terminal(s)).collect(),
            rows,
        })
    }

    fn row(&self, s: usize, a: usize) -> &[(usize, f64, f64)] {
        &self.rows[s * self.n_actions + a]
    }

    /// `(T Q)(s, a) = Σ p [r + γ max_{a' ∈ mask} Q(s', a')]`; terminal rows are 0.
    pub fn optimal_backup(&self, q: &QTable, mask: Option<&ActionMask>) -> QTable {
        let values: Vec<f64> = (0..self.n_states)
            .map(|s| match mask {
                Some(m) => q.state_value_masked(s, m.allowed(s)),
                None => q.state_value(s),
            })
            .collect();
        self.backup_with(|sp| values[sp])
    }

    /// `(T^π Q)(s, a) = Σ p [r + γ Q(s', π(s'))]`.
    pub fn policy_backup(&self, q: &QTable, policy: &Policy) -> QTable {
        self.backup_with(|sp| q.get(sp, policy.action(sp)))
    }

    fn backup_with(&self, next_value: impl Fn(usize) -> f64) -> QTable {
        let gamma = self.gamma;
        QTable::from_fn(self.n_states, self.n_actions, |s, a| {
            if self.terminal[s] {
                return 0.0;
            }
            self.row(s, a)
                .iter()
                .map(|&(sp, p, r)| {
                    let v = if self.terminal[sp] { 0.0 } else { next_value(sp) };
                    p * (r + gamma * v)
                })
                .sum()
        })
    }
}

fn iterate(cfg: &SolveConfig, n_states: usize, n_actions: usize, step: impl Fn(&QTable) -> QTable) -> Result<Solution> {
    cfg.check()?;
    let mut q = QTable::zeros(n_states, n_actions);
    let mut deltas = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let next = step(&q);
        let delta = next.sup_distance(&q);
        deltas.push(delta);
        q = next;
        if delta <= cfg.epsilon {
            return Ok(Solution {
                q,
                sweeps: sweep,
                residual: delta,
                deltas,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: cfg.max_sweeps,
        residual: deltas.last().copied().unwrap_or(f64::INFINITY),
    })
}

pub fn value_iteration(mdp: &TabularMdp, rewards: &RewardTable, cfg: &SolveConfig) -> Result<QTable> {
    value_iteration_traced(mdp, rewards, None, cfg).map(|s| s.q)
}

/// Value iteration with the max over next actions restricted to `mask`.
pub fn value_iteration_masked(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    mask: &ActionMask,
    cfg: &SolveConfig,
) -> Result<QTable> {
    value_iteration_traced(mdp, rewards, Some(mask), cfg).map(|s| s.q)
}

pub fn value_iteration_traced(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    mask: Option<&ActionMask>,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let kernel = Kernel::new(mdp, rewards)?;
    iterate(cfg, mdp.n_states(), mdp.n_actions(), |q| kernel.optimal_backup(q, mask))
}

/// Worst-policy action values, computed as `−Q*_{−R}`.
pub fn q_mu(mdp: &TabularMdp, rewards: &RewardTable, cfg: &SolveConfig) -> Result<QTable> {
    Ok(value_iteration(mdp, &rewards.negated(), cfg)?.map(|v| -v))
}

pub fn policy_evaluation(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    policy: &Policy,
    cfg: &SolveConfig,
) -> Result<QTable> {
    if policy.actions.len() != mdp.n_states() {
        return Err(Error::invalid("policy length does not match the state count"));
    }
    if let Some(&a) = policy.actions.iter().find(|&&a| a >= mdp.n_actions()) {
        return Err(Error::invalid(format!("policy action {a} out of range")));
    }
    let kernel = Kernel::new(mdp, rewards)?;
    iterate(cfg, mdp.n_states(), mdp.n_actions(), |q| kernel.policy_backup(q, policy)).map(|s| s.q)
}

/// Argmax per state over the allowed actions; ties go to the lowest index.
pub fn greedy_policy(q: &QTable, mask: Option<&ActionMask>) -> Result<Policy> {
    let all: Vec<usize> = (0..q.n_actions()).collect();
    let actions = (0..q.n_states())
        .map(|s| {
            let allowed = mask.map_or(all.as_slice(), |m| m.allowed(s));
            greedy_action(q, s, allowed).ok_or(Error::EmptyAllowedSet(s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy { actions })
}

pub(crate) fn greedy_action(q: &QTable, s: usize, allowed: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &a in allowed {
        let v = q.get(s, a);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::three_state_mdp;

    fn cfg() -> SolveConfig {
        SolveConfig::new(1e-12, 100_000).unwrap()
    }

    /// One state, two actions, both ending the episode with rewards +1 / -1.
    fn two_armed() -> (TabularMdp, RewardTable) {
        let mut mdp = TabularMdp::new(2, 2, 0.9, 0, [1]);
        mdp.set_row(0, 0, [(1, 1.0)]);
        mdp.set_row(0, 1, [(1, 1.0)]);
        let rewards = RewardTable::from_fn(&mdp, |_, a, _| if a == 0 { 1.0 } else { -1.0 });
        (mdp, rewards)
    }

    #[test]
    fn single_step_to_terminal() {
        let mut mdp = TabularMdp::new(2, 1, 0.9, 0, [1]);
        mdp.set_row(0, 0, [(1, 1.0)]);
        let rewards = RewardTable::from_fn(&mdp, |_, _, _| 1.0);
        let q = value_iteration(&mdp, &rewards, &cfg()).unwrap();
        assert_eq!(q.get(0, 0), 1.0);
        assert_eq!(q.get(1, 0), 0.0);
    }

    #[test]
    fn two_step_chain() {
        let mut mdp = TabularMdp::new(3, 1, 0.5, 0, [2]);
        mdp.set_row(0, 0, [(1, 1.0)]);
        mdp.set_row(1, 0, [(2, 1.0)]);
        let rewards = RewardTable::from_fn(&mdp, |_, _, _| 1.0);
        let q = value_iteration(&mdp, &rewards, &cfg()).unwrap();
        assert!((q.get(0, 0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn three_state_true_value() {
        // v = 1 + 0.5 * (0.5 v)  =>  v = 4/3
        let (mdp, rewards) = three_state_mdp();
        let q = value_iteration(&mdp, &rewards, &SolveConfig::default()).unwrap();
        assert!((q.get(0, 0) - 4.0 / 3.0).abs() < 1e-6);
        assert!((q.get(1, 0) - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn worst_case_values_flip_sign() {
        let (mdp, rewards) = two_armed();
        let mu = q_mu(&mdp, &rewards, &cfg()).unwrap();
        assert_eq!(mu.row(0), &[1.0, -1.0]);
        assert_eq!(mu.state_value(0).min(mu.get(0, 1)), -1.0);

        let zero = RewardTable::from_fn(&mdp, |_, _, _| 0.0);
        let mu = q_mu(&mdp, &zero, &cfg()).unwrap();
        let star = value_iteration(&mdp, &zero, &cfg()).unwrap();
        assert_eq!(mu, star);
        assert!(mu.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn evaluating_a_fixed_policy() {
        let (mdp, rewards) = two_armed();
        let pi = Policy { actions: vec![1, 0] };
        let q = policy_evaluation(&mdp, &rewards, &pi, &cfg()).unwrap();
        assert_eq!(q.get(0, 1), -1.0);

        let (mdp, rewards) = three_state_mdp();
        let pi = Policy { actions: vec![0, 0, 0] };
        let q = policy_evaluation(&mdp, &rewards, &pi, &cfg()).unwrap();
        assert!((q.get(0, 0) - 4.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn optimal_policy_evaluates_to_optimal_values() {
        let (mdp, rewards) = three_state_mdp();
        let c = SolveConfig::default();
        let q = value_iteration(&mdp, &rewards, &c).unwrap();
        let pi = greedy_policy(&q, None).unwrap();
        let qp = policy_evaluation(&mdp, &rewards, &pi, &c).unwrap();
        assert!(q.sup_distance(&qp) <= 2.0 * c.epsilon / (1.0 - mdp.gamma()));
    }

    #[test]
    fn greedy_tie_breaks_low_and_respects_mask() {
        let q = QTable::from_rows(vec![vec![0.2, 0.9], vec![0.5, 0.5], vec![7.0, 1.0]]).unwrap();
        let mask = ActionMask::from_sets(vec![vec![0, 1], vec![0, 1], vec![1]]);
        assert_eq!(greedy_policy(&q, None).unwrap().actions, vec![1, 0, 0]);
        assert_eq!(greedy_policy(&q, Some(&mask)).unwrap().actions, vec![1, 0, 1]);
        let empty = ActionMask::from_sets(vec![vec![0], vec![], vec![0]]);
        assert!(matches!(greedy_policy(&q, Some(&empty)), Err(Error::EmptyAllowedSet(1))));
    }

    #[test]
    fn sweep_cap_reports_residual() {
        let (mdp, rewards) = three_state_mdp();
        let err = value_iteration(&mdp, &rewards, &SolveConfig::new(1e-12, 3).unwrap()).unwrap_err();
        match err {
            Error::NonConvergence { sweeps, residual } => {
                assert_eq!(sweeps, 3);
                assert!(residual > 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(SolveConfig::new(0.0, 1).is_err());
        assert!(SolveConfig::new(1e-3, 0).is_err());
    }
}
