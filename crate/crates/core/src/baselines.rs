//! Inputs for the transfer baselines: a GPI warm start (SFQL) and prior
//! bounds for TD-target clipping (SQB).

use crate::bounds::BoundPair;
use crate::error::{Error, Result};
use crate::mdp::{Policy, QTable, RewardTable, TabularMdp};
use crate::solve::{greedy_policy, policy_evaluation, q_mu, value_iteration, SolveConfig};

/// What a source task hands over: its reward, its Q-variants and its policy.
#[derive(Clone, Debug)]
pub struct SourceBehavior {
    pub rewards: RewardTable,
    pub q_star: QTable,
    pub q_mu: QTable,
    /// `Q*` under `|R|`.
    pub q_star_abs: QTable,
    pub policy: Policy,
}

impl SourceBehavior {
    /// Solves all Q-variants of `rewards` on the shared dynamics.
    pub fn solve(mdp: &TabularMdp, rewards: RewardTable, cfg: &SolveConfig) -> Result<Self> {
        let q_star = value_iteration(mdp, &rewards, cfg)?;
        let q_mu = q_mu(mdp, &rewards, cfg)?;
        let q_star_abs = value_iteration(mdp, &rewards.abs(), cfg)?;
        let policy = greedy_policy(&q_star, None)?;
        Ok(Self {
            rewards,
            q_star,
            q_mu,
            q_star_abs,
            policy,
        })
    }
}

/// Pointwise max over the sources' policies evaluated on the target reward.
pub fn sfql_bootstrap(
    mdp: &TabularMdp,
    target_r: &RewardTable,
    sources: &[SourceBehavior],
    cfg: &SolveConfig,
) -> Result<QTable> {
    let mut evals = sources
        .iter()
        .map(|src| policy_evaluation(mdp, target_r, &src.policy, cfg));
    let first = evals
        .next()
        .ok_or_else(|| Error::invalid("GPI bootstrap needs at least one source"))??;
    evals.try_fold(first, |acc, q| Ok(acc.zip_with(&q?, f64::max)))
}

/// SQB receives the same initial bounds that seed M-Q-M.
pub fn sqb_bounds_from_mqm(init: &BoundPair) -> BoundPair {
    let mut out = init.clone();
    out.provenance = format!("sqb<-{}", init.provenance);
    out
}
