#![allow(dead_code)]

use qmanip::mdp::{QTable, RewardTable, TabularMdp};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random MDP with 1..=2 terminals, supports of size 1..=`max_support` and
/// discount in [0.5, 0.95].
pub fn random_mdp(seed: u64, max_states: usize, max_actions: usize, max_support: usize) -> TabularMdp {
    let mut r = rng(seed);
    let n = r.gen_range(3..=max_states.max(3));
    let m = r.gen_range(1..=max_actions.max(1));
    let gamma = r.gen_range(0.5..0.95);
    let n_term = r.gen_range(1..=2);
    let terminals = sample(&mut r, n, n_term).into_vec();
    let initial = (0..n).find(|s| !terminals.contains(s)).unwrap();
    let mut mdp = TabularMdp::new(n, m, gamma, initial, terminals.iter().copied());
    for s in 0..n {
        if terminals.contains(&s) {
            continue;
        }
        for a in 0..m {
            let k = r.gen_range(1..=max_support.min(n));
            let mut next = sample(&mut r, n, k).into_vec();
            next.sort_unstable();
            let w: Vec<f64> = next.iter().map(|_| r.gen_range(0.05..1.0)).collect();
            let total: f64 = w.iter().sum();
            mdp.set_row(s, a, next.into_iter().zip(w.into_iter().map(|x| x / total)));
        }
    }
    mdp
}

pub fn deterministic_mdp(seed: u64, max_states: usize, max_actions: usize) -> TabularMdp {
    random_mdp(seed, max_states, max_actions, 1)
}

pub fn random_rewards(mdp: &TabularMdp, seed: u64) -> RewardTable {
    let mut r = rng(seed ^ 0xA5A5_5A5A);
    RewardTable::from_fn(mdp, |_, _, _| r.gen_range(-1.0..1.0))
}

pub fn random_table(n_states: usize, n_actions: usize, seed: u64, scale: f64) -> QTable {
    let mut r = rng(seed);
    QTable::from_fn(n_states, n_actions, |_, _| r.gen_range(-scale..scale))
}

/// Direct Bellman iteration where the state value folds the row with `pick`.
fn bellman(mdp: &TabularMdp, rewards: &RewardTable, sweeps: usize, pick: fn(f64, f64) -> f64, seed: f64) -> QTable {
    let (n, m) = (mdp.n_states(), mdp.n_actions());
    let mut q = QTable::zeros(n, m);
    for _ in 0..sweeps {
        let v: Vec<f64> = (0..n).map(|s| q.row(s).iter().copied().fold(seed, pick)).collect();
        q = QTable::from_fn(n, m, |s, a| {
            if mdp.is_terminal(s) {
                return 0.0;
            }
            mdp.successors(s, a)
                .iter()
                .map(|x| {
                    let tail = if mdp.is_terminal(x.state) { 0.0 } else { v[x.state] };
                    x.prob * (rewards.get(s, a, x.state).unwrap() + mdp.gamma() * tail)
                })
                .sum()
        });
    }
    q
}

/// Worst-policy values: the agent always picks the lowest-valued action.
pub fn worst_policy_values(mdp: &TabularMdp, rewards: &RewardTable, sweeps: usize) -> QTable {
    bellman(mdp, rewards, sweeps, f64::min, f64::INFINITY)
}

pub fn optimal_values(mdp: &TabularMdp, rewards: &RewardTable, sweeps: usize) -> QTable {
    bellman(mdp, rewards, sweeps, f64::max, f64::NEG_INFINITY)
}
