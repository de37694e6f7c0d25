//! Episodic tabular Q-learning with an optional action mask, warm start and
//! TD-target clipping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{BoundPair, NoiseRange};
use crate::error::{Error, Result};
use crate::mdp::{sample_step, ActionMask, Policy, QTable, RewardTable, TabularMdp};
use crate::solve::greedy_action;

/// Per-episode multiplicative decay: `max(floor, initial · decay^episode)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub initial: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Schedule {
    pub fn constant(value: f64) -> Self {
        Self {
            initial: value,
            decay: 1.0,
            floor: value,
        }
    }

    pub fn at(&self, episode: usize) -> f64 {
        (self.initial * self.decay.powi(episode.min(i32::MAX as usize) as i32)).max(self.floor)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    pub episodes: usize,
    pub t_max: usize,
    pub alpha: Schedule,
    pub epsilon_explore: Schedule,
    #[serde(default)]
    pub seed: u64,
    /// Uniform noise added to every observed reward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_noise: Option<NoiseRange>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            episodes: 500,
            t_max: 100,
            alpha: Schedule::constant(0.1),
            epsilon_explore: Schedule {
                initial: 1.0,
                decay: 0.99,
                floor: 0.05,
            },
            seed: 0,
            reward_noise: None,
        }
    }
}

impl LearnConfig {
    pub fn check(&self) -> Result<()> {
        if self.episodes == 0 || self.t_max == 0 {
            return Err(Error::invalid("episodes and t_max must be positive"));
        }
        let a = &self.alpha;
        if !(a.initial > 0.0 && a.initial <= 1.0 && a.floor > 0.0 && a.floor <= 1.0) {
            return Err(Error::invalid("learning rate must lie in (0, 1]"));
        }
        let e = &self.epsilon_explore;
        if e.initial != 1.0 {
            return Err(Error::invalid("exploration must start at 1.0"));
        }
        if !(0.0..1.0).contains(&e.floor) || !(0.0..=1.0).contains(&e.decay) {
            return Err(Error::invalid("exploration floor must lie in [0, 1) and decay in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub undiscounted_return: f64,
    pub discounted_return: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub episodes: Vec<EpisodeRecord>,
}

impl LearningCurve {
    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.undiscounted_return).collect()
    }
}

/// Independent RNG streams derived from one seed.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const ENV_STREAM: u64 = 0;
const EXPLORE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Runs `cfg.episodes` episodes of ε-greedy Q-learning from the initial state.
///
/// * `mask` restricts both action choice and the bootstrap max.
/// * `init_q` warm-starts the table.
/// * `clip` clamps every TD target into `[lb, ub]`; without `init_q` the table
///   then starts at the midpoint of the bounds.
pub fn q_learning(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    cfg: &LearnConfig,
    mask: Option<&ActionMask>,
    init_q: Option<&QTable>,
    clip: Option<&BoundPair>,
) -> Result<(QTable, LearningCurve)> {
    cfg.check()?;
    let (n_states, n_actions) = (mdp.n_states(), mdp.n_actions());
    let full = ActionMask::full(n_states, n_actions);
    let mask = mask.unwrap_or(&full);
    if mask.n_states() != n_states {
        return Err(Error::invalid("mask does not cover every state"));
    }
    if let Some(s) = mdp.non_terminal_states().find(|&s| mask.allowed(s).is_empty()) {
        return Err(Error::EmptyAllowedSet(s));
    }
    for table in init_q.into_iter().chain(clip.iter().flat_map(|c| [&c.ub, &c.lb])) {
        if table.n_states() != n_states || table.n_actions() != n_actions {
            return Err(Error::invalid("Q-table shape does not match the MDP"));
        }
    }

    let mut q = match (init_q, clip) {
        (Some(q0), _) => q0.clone(),
        (None, Some(c)) => c.ub.zip_with(&c.lb, |u, l| 0.5 * (u + l)),
        (None, None) => QTable::zeros(n_states, n_actions),
    };
    let gamma = mdp.gamma();
    let mut env_rng = stream(cfg.seed, ENV_STREAM);
    let mut explore_rng = stream(cfg.seed, EXPLORE_STREAM);
    let mut noise_rng = stream(cfg.seed, NOISE_STREAM);
    let mut curve = LearningCurve {
        episodes: Vec::with_capacity(cfg.episodes),
    };

    for episode in 0..cfg.episodes {
        let alpha = cfg.alpha.at(episode);
        let eps = cfg.epsilon_explore.at(episode);
        let mut s = mdp.initial_state();
        let (mut ret, mut disc_ret, mut discount, mut steps) = (0.0, 0.0, 1.0, 0);
        while steps < cfg.t_max {
            let allowed = mask.allowed(s);
            let a = if explore_rng.gen::<f64>() < eps {
                *allowed.choose(&mut explore_rng).expect("non-empty allowed set")
            } else {
                greedy_action(&q, s, allowed).expect("non-empty allowed set")
            };
            debug_assert!(mask.is_allowed(s, a), "masked action {a} chosen in state {s}");

            let step = sample_step(mdp, rewards, s, a, &mut env_rng)?;
            let reward = match cfg.reward_noise {
                Some(n) if n.n_max > n.n_min => step.reward + noise_rng.gen_range(n.n_min..=n.n_max),
                Some(n) => step.reward + n.n_min,
                None => step.reward,
            };
            let bootstrap = if step.done {
                0.0
            } else {
                q.state_value_masked(step.next, mask.allowed(step.next))
            };
            let mut target = reward + gamma * bootstrap;
            if let Some(c) = clip {
                target = target.max(c.lb.get(s, a)).min(c.ub.get(s, a));
            }
            let old = q.get(s, a);
            q.set(s, a, old + alpha * (target - old));

            ret += reward;
            disc_ret += discount * reward;
            discount *= gamma;
            steps += 1;
            s = step.next;
            if step.done {
                break;
            }
        }
        curve.episodes.push(EpisodeRecord {
            episode,
            undiscounted_return: ret,
            discounted_return: disc_ret,
            steps,
        });
    }
    Ok((q, curve))
}

/// Monte-Carlo mean undiscounted return of a fixed policy.
pub fn evaluate_policy_return<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    policy: &Policy,
    n_episodes: usize,
    t_max: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_episodes == 0 {
        return Err(Error::invalid("need at least one episode"));
    }
    let mut total = 0.0;
    for _ in 0..n_episodes {
        let mut s = mdp.initial_state();
        for _ in 0..t_max {
            let step = sample_step(mdp, rewards, s, policy.action(s), rng)?;
            total += step.reward;
            s = step.next;
            if step.done {
                break;
            }
        }
    }
    Ok(total / n_episodes as f64)
}

/// Exact expected undiscounted return of `policy` over at most `t_max` steps
/// from the initial state.
pub fn expected_return(mdp: &TabularMdp, rewards: &RewardTable, policy: &Policy, t_max: usize) -> Result<f64> {
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..t_max {
        let mut next = vec![0.0; mdp.n_states()];
        for s in mdp.non_terminal_states() {
            let a = policy.action(s);
            let mut acc = 0.0;
            for succ in mdp.successors(s, a) {
                acc += succ.prob * (rewards.reward(s, a, succ.state)? + v[succ.state]);
            }
            next[s] = acc;
        }
        v = next;
    }
    Ok(v[mdp.initial_state()])
}
