//! Finite MDPs with sparse transition rows, rewards on `(s, a, s')`,
//! 1-step reachability models and the dense tables derived from them.
//!
//! Terminal states are absorbing by omission: they have no outgoing rows and
//! contribute zero future value to every solver in this crate.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a transition row.
pub const PROB_SUM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Successor {
    pub state: usize,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    initial_state: usize,
    terminal: Vec<bool>,
    rows: Vec<Vec<Successor>>,
}

impl TabularMdp {
    /// Creates an MDP with every transition row empty. Rows are filled with
    /// [`TabularMdp::set_row`]; nothing is checked until [`validate`].
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        initial_state: usize,
        terminal: impl IntoIterator<Item = usize>,
    ) -> Self {
        let mut flags = vec![false; n_states];
        for s in terminal {
            if s < n_states {
                flags[s] = true;
            }
        }
        Self {
            n_states,
            n_actions,
            gamma,
            initial_state,
            terminal: flags,
            rows: vec![Vec::new(); n_states * n_actions],
        }
    }

    pub fn set_row(&mut self, s: usize, a: usize, next: impl IntoIterator<Item = (usize, f64)>) {
        let idx = self.index(s, a);
        self.rows[idx] = next
            .into_iter()
            .map(|(state, prob)| Successor { state, prob })
            .collect();
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal
            .iter()
            .enumerate()
            .filter_map(|(s, &t)| t.then_some(s))
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_states).filter(|&s| !self.terminal[s])
    }

    pub fn successors(&self, s: usize, a: usize) -> &[Successor] {
        &self.rows[self.index(s, a)]
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }
}

/// Rewards `R(s, a, s')`, stored only on the transition support.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardTable {
    n_states: usize,
    n_actions: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl RewardTable {
    pub fn empty(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            rows: vec![Vec::new(); n_states * n_actions],
        }
    }

    /// Evaluates `f` on exactly the support of `mdp`.
    pub fn from_fn(mdp: &TabularMdp, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut table = Self::empty(mdp.n_states, mdp.n_actions);
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let idx = s * mdp.n_actions + a;
                table.rows[idx] = mdp.rows[idx]
                    .iter()
                    .map(|succ| (succ.state, f(s, a, succ.state)))
                    .collect();
            }
        }
        table
    }

    /// Sets `R(s, a, sp)`, replacing any previous entry.
    pub fn insert(&mut self, s: usize, a: usize, sp: usize, r: f64) {
        let row = &mut self.rows[s * self.n_actions + a];
        match row.iter_mut().find(|(t, _)| *t == sp) {
            Some(entry) => entry.1 = r,
            None => row.push((sp, r)),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize, sp: usize) -> Option<f64> {
        if s >= self.n_states || a >= self.n_actions {
            return None;
        }
        self.rows[s * self.n_actions + a]
            .iter()
            .find(|(t, _)| *t == sp)
            .map(|&(_, r)| r)
    }

    /// Like [`RewardTable::get`] but off-support reads are errors.
    pub fn reward(&self, s: usize, a: usize, sp: usize) -> Result<f64> {
        self.get(s, a, sp).ok_or_else(|| {
            Error::invalid(format!("reward read off the transition support at ({s}, {a}, {sp})"))
        })
    }

    pub fn entries(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.rows[s * self.n_actions + a]
    }

    /// All `(s, a, s', r)` entries in `(s, a)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(idx, row)| {
            let (s, a) = (idx / self.n_actions, idx % self.n_actions);
            row.iter().map(move |&(sp, r)| (s, a, sp, r))
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&(sp, r)| (sp, f(r))).collect())
                .collect(),
        }
    }

    pub fn negated(&self) -> Self {
        self.map(|r| -r)
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    /// Smallest and largest entry, or `None` for an empty table.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.iter().fold(None, |acc, (_, _, _, r)| match acc {
            None => Some((r, r)),
            Some((lo, hi)) => Some((lo.min(r), hi.max(r))),
        })
    }

    /// True when both tables are defined on the same `(s, a, s')` keys.
    pub fn same_support(&self, other: &RewardTable) -> bool {
        self.n_states == other.n_states
            && self.n_actions == other.n_actions
            && self.rows.iter().zip(&other.rows).all(|(x, y)| {
                x.len() == y.len() && x.iter().all(|(sp, _)| y.iter().any(|(t, _)| t == sp))
            })
    }
}

/// The 1-step reachable successor sets `T̂(·|s, a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LiteModel {
    n_states: usize,
    n_actions: usize,
    reachable: Vec<Vec<usize>>,
}

impl LiteModel {
    pub fn from_sets(n_states: usize, n_actions: usize, reachable: Vec<Vec<usize>>) -> Result<Self> {
        if reachable.len() != n_states * n_actions {
            return Err(Error::invalid(format!(
                "lite model needs {} rows, got {}",
                n_states * n_actions,
                reachable.len()
            )));
        }
        if let Some(&bad) = reachable.iter().flatten().find(|&&sp| sp >= n_states) {
            return Err(Error::invalid(format!("reachable state {bad} out of range")));
        }
        Ok(Self {
            n_states,
            n_actions,
            reachable,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn reachable(&self, s: usize, a: usize) -> &[usize] {
        &self.reachable[s * self.n_actions + a]
    }

    /// A state whose rows are all empty is treated as terminal.
    pub fn is_terminal(&self, s: usize) -> bool {
        (0..self.n_actions).all(|a| self.reachable(s, a).is_empty())
    }
}

pub fn extract_lite_model(mdp: &TabularMdp) -> LiteModel {
    let reachable = mdp
        .rows
        .iter()
        .map(|row| {
            let mut next: Vec<usize> = row.iter().filter(|s| s.prob > 0.0).map(|s| s.state).collect();
            next.sort_unstable();
            next.dedup();
            next
        })
        .collect();
    LiteModel {
        n_states: mdp.n_states,
        n_actions: mdp.n_actions,
        reachable,
    }
}

/// Stochastic branching factor: the largest successor support over all
/// non-terminal `(s, a)`.
pub fn sbf(mdp: &TabularMdp) -> Result<usize> {
    mdp.non_terminal_states()
        .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
        .map(|(s, a)| mdp.successors(s, a).iter().filter(|x| x.prob > 0.0).count())
        .max()
        .ok_or(Error::NoTransitions)
}

/// Dense `|S| x |A|` action-value table.
#[derive(Clone, Debug, PartialEq)]
pub struct QTable {
    n_states: usize,
    n_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self::filled(n_states, n_actions, 0.0)
    }

    pub fn filled(n_states: usize, n_actions: usize, value: f64) -> Self {
        Self {
            n_states,
            n_actions,
            values: vec![value; n_states * n_actions],
        }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..n_states)
            .flat_map(|s| (0..n_actions).map(move |a| (s, a)))
            .map(|(s, a)| f(s, a))
            .collect();
        Self {
            n_states,
            n_actions,
            values,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::invalid("ragged Q-table rows"));
        }
        Ok(Self {
            n_states,
            n_actions,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.n_actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn row_mut(&mut self, s: usize) -> &mut [f64] {
        &mut self.values[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// `max_a Q(s, a)`.
    #[inline]
    pub fn state_value(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_{a in allowed} Q(s, a)`.
    pub fn state_value_masked(&self, s: usize, allowed: &[usize]) -> f64 {
        allowed
            .iter()
            .map(|&a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.n_actions.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn is_congruent(&self, other: &QTable) -> bool {
        self.n_states == other.n_states && self.n_actions == other.n_actions
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `‖self − other‖∞`.
    pub fn sup_distance(&self, other: &QTable) -> f64 {
        assert!(self.is_congruent(other), "Q-table shapes differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &QTable, f: impl Fn(f64, f64) -> f64) -> Self {
        assert!(self.is_congruent(other), "Q-table shapes differ");
        Self {
            n_states: self.n_states,
            n_actions: self.n_actions,
            values: self.values.iter().zip(&other.values).map(|(&x, &y)| f(x, y)).collect(),
        }
    }
}

impl Serialize for QTable {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QTable {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        QTable::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

/// Per-state allowed action sets `Ã(s)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionMask {
    allowed: Vec<Vec<usize>>,
}

impl ActionMask {
    pub fn full(n_states: usize, n_actions: usize) -> Self {
        Self {
            allowed: vec![(0..n_actions).collect(); n_states],
        }
    }

    /// Builds a mask from explicit sets; each set is sorted and deduplicated.
    pub fn from_sets(mut allowed: Vec<Vec<usize>>) -> Self {
        for set in &mut allowed {
            set.sort_unstable();
            set.dedup();
        }
        Self { allowed }
    }

    pub fn n_states(&self) -> usize {
        self.allowed.len()
    }

    pub fn allowed(&self, s: usize) -> &[usize] {
        &self.allowed[s]
    }

    pub fn is_allowed(&self, s: usize, a: usize) -> bool {
        self.allowed[s].binary_search(&a).is_ok()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub actions: Vec<usize>,
}

impl Policy {
    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }
}

/// One broken model invariant.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    Gamma(f64),
    InitialOutOfRange(usize),
    InitialTerminal(usize),
    SuccessorOutOfRange { s: usize, a: usize, sp: usize },
    NegativeProbability { s: usize, a: usize, sp: usize, p: f64 },
    ProbabilitySum { s: usize, a: usize, sum: f64 },
    EmptyRow { s: usize, a: usize },
    DuplicateSuccessor { s: usize, a: usize, sp: usize },
    TerminalTransitions { s: usize, a: usize },
    RewardShape { n_states: usize, n_actions: usize },
    RewardOffSupport { s: usize, a: usize, sp: usize },
    RewardMissing { s: usize, a: usize, sp: usize },
    RewardNotFinite { s: usize, a: usize, sp: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::Gamma(g) => write!(f, "discount {g} outside [0, 1)"),
            Violation::InitialOutOfRange(s) => write!(f, "initial state {s} out of range"),
            Violation::InitialTerminal(s) => write!(f, "initial state {s} is terminal"),
            Violation::SuccessorOutOfRange { s, a, sp } => {
                write!(f, "({s}, {a}): successor {sp} out of range")
            }
            Violation::NegativeProbability { s, a, sp, p } => {
                write!(f, "({s}, {a}): negative probability {p} for successor {sp}")
            }
            Violation::ProbabilitySum { s, a, sum } => {
                write!(f, "({s}, {a}): probabilities sum to {sum}")
            }
            Violation::EmptyRow { s, a } => write!(f, "({s}, {a}): no successors"),
            Violation::DuplicateSuccessor { s, a, sp } => {
                write!(f, "({s}, {a}): successor {sp} listed twice")
            }
            Violation::TerminalTransitions { s, a } => {
                write!(f, "({s}, {a}): terminal state has outgoing transitions")
            }
            Violation::RewardShape { n_states, n_actions } => {
                write!(f, "reward table shaped {n_states}x{n_actions} does not match the MDP")
            }
            Violation::RewardOffSupport { s, a, sp } => {
                write!(f, "reward on ({s}, {a}, {sp}) which is not a transition")
            }
            Violation::RewardMissing { s, a, sp } => write!(f, "no reward for ({s}, {a}, {sp})"),
            Violation::RewardNotFinite { s, a, sp } => {
                write!(f, "non-finite reward on ({s}, {a}, {sp})")
            }
        }
    }
}

/// Checks every MDP invariant. An empty report means the model is valid.
pub fn validate_mdp(mdp: &TabularMdp) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(0.0..1.0).contains(&mdp.gamma) {
        out.push(Violation::Gamma(mdp.gamma));
    }
    if mdp.initial_state >= mdp.n_states {
        out.push(Violation::InitialOutOfRange(mdp.initial_state));
    } else if mdp.terminal[mdp.initial_state] {
        out.push(Violation::InitialTerminal(mdp.initial_state));
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.successors(s, a);
            if mdp.terminal[s] {
                if !row.is_empty() {
                    out.push(Violation::TerminalTransitions { s, a });
                }
                continue;
            }
            if row.is_empty() {
                out.push(Violation::EmptyRow { s, a });
                continue;
            }
            let mut seen = Vec::with_capacity(row.len());
            for succ in row {
                if succ.state >= mdp.n_states {
                    out.push(Violation::SuccessorOutOfRange { s, a, sp: succ.state });
                }
                if succ.prob < 0.0 || !succ.prob.is_finite() {
                    out.push(Violation::NegativeProbability {
                        s,
                        a,
                        sp: succ.state,
                        p: succ.prob,
                    });
                }
                if seen.contains(&succ.state) {
                    out.push(Violation::DuplicateSuccessor { s, a, sp: succ.state });
                }
                seen.push(succ.state);
            }
            let sum: f64 = row.iter().map(|x| x.prob).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL {
                out.push(Violation::ProbabilitySum { s, a, sum });
            }
        }
    }
    out
}

/// Checks the MDP and the reward table against it.
pub fn validate(mdp: &TabularMdp, rewards: &RewardTable) -> Vec<Violation> {
    let mut out = validate_mdp(mdp);
    if rewards.n_states != mdp.n_states || rewards.n_actions != mdp.n_actions {
        out.push(Violation::RewardShape {
            n_states: rewards.n_states,
            n_actions: rewards.n_actions,
        });
        return out;
    }
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let row = mdp.successors(s, a);
            for &(sp, r) in rewards.entries(s, a) {
                if !row.iter().any(|x| x.state == sp && x.prob > 0.0) {
                    out.push(Violation::RewardOffSupport { s, a, sp });
                } else if !r.is_finite() {
                    out.push(Violation::RewardNotFinite { s, a, sp });
                }
            }
            for succ in row.iter().filter(|x| x.prob > 0.0) {
                if rewards.get(s, a, succ.state).is_none() {
                    out.push(Violation::RewardMissing { s, a, sp: succ.state });
                }
            }
        }
    }
    out
}

/// Fails with [`Error::Validation`] when the report is non-empty.
pub fn ensure_valid(mdp: &TabularMdp, rewards: &RewardTable) -> Result<()> {
    let report = validate(mdp, rewards);
    if report.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(report))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub next: usize,
    pub reward: f64,
    pub done: bool,
}

/// Samples `s' ~ T(·|s, a)` and returns `R(s, a, s')`.
pub fn sample_step<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    rewards: &RewardTable,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<Step> {
    if mdp.is_terminal(s) {
        return Err(Error::EpisodeFinished(s));
    }
    if a >= mdp.n_actions {
        return Err(Error::invalid(format!("action {a} out of range")));
    }
    let row = mdp.successors(s, a);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut next = row.last().map(|x| x.state).ok_or(Error::NoTransitions)?;
    for succ in row {
        acc += succ.prob;
        if u < acc {
            next = succ.state;
            break;
        }
    }
    Ok(Step {
        next,
        reward: rewards.reward(s, a, next)?,
        done: mdp.is_terminal(next),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NextEntry {
    pub sp: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEntry {
    pub s: usize,
    pub a: usize,
    pub next: Vec<NextEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub s: usize,
    pub a: usize,
    pub sp: usize,
    pub r: f64,
}

/// JSON interchange form of an MDP together with one reward table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub initial_state: usize,
    pub terminal: Vec<usize>,
    pub transitions: Vec<TransitionEntry>,
    pub rewards: Vec<RewardEntry>,
}

impl MdpDocument {
    pub fn from_model(mdp: &TabularMdp, rewards: &RewardTable) -> Self {
        let transitions = (0..mdp.n_states)
            .flat_map(|s| (0..mdp.n_actions).map(move |a| (s, a)))
            .filter(|&(s, a)| !mdp.successors(s, a).is_empty())
            .map(|(s, a)| TransitionEntry {
                s,
                a,
                next: mdp
                    .successors(s, a)
                    .iter()
                    .map(|x| NextEntry { sp: x.state, p: x.prob })
                    .collect(),
            })
            .collect();
        Self {
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            gamma: mdp.gamma,
            initial_state: mdp.initial_state,
            terminal: mdp.terminal_states().collect(),
            transitions,
            rewards: encode_rewards(rewards),
        }
    }

    /// Rebuilds the model; out-of-range indices are rejected, all other
    /// invariants are left to [`validate`].
    pub fn into_model(self) -> Result<(TabularMdp, RewardTable)> {
        let mut mdp = TabularMdp::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.initial_state,
            self.terminal.iter().copied(),
        );
        if let Some(&bad) = self.terminal.iter().find(|&&s| s >= self.n_states) {
            return Err(Error::invalid(format!("terminal state {bad} out of range")));
        }
        for t in self.transitions {
            check_pair(t.s, t.a, self.n_states, self.n_actions)?;
            mdp.set_row(t.s, t.a, t.next.into_iter().map(|n| (n.sp, n.p)));
        }
        let rewards = decode_rewards(&self.rewards, self.n_states, self.n_actions)?;
        Ok((mdp, rewards))
    }
}

pub fn encode_rewards(rewards: &RewardTable) -> Vec<RewardEntry> {
    rewards
        .iter()
        .map(|(s, a, sp, r)| RewardEntry { s, a, sp, r })
        .collect()
}

pub fn decode_rewards(entries: &[RewardEntry], n_states: usize, n_actions: usize) -> Result<RewardTable> {
    let mut table = RewardTable::empty(n_states, n_actions);
    for e in entries {
        check_pair(e.s, e.a, n_states, n_actions)?;
        table.insert(e.s, e.a, e.sp, e.r);
    }
    Ok(table)
}

fn check_pair(s: usize, a: usize, n_states: usize, n_actions: usize) -> Result<()> {
    if s >= n_states || a >= n_actions {
        Err(Error::invalid(format!("pair ({s}, {a}) out of range")))
    } else {
        Ok(())
    }
}
