//! Evaluation domains: Dollar-Euro, Frozen Lake, Racetrack and randomly
//! generated MDPs, each with its source rewards and combination function.
//!
//! Grid layouts are fixed here (row 0 is the top row, states are numbered
//! row-major):
//!
//! ```text
//! Dollar-Euro (5x9)        Frozen Lake (6x6)     Racetrack (7x7)
//! $ . . . B . . . E        S . . h . .           . . . G . . .
//! . . . . . . . . .        . . . . . .           . . . . . . .
//! . . . . . . . . .        . . H . . .           . # # # # . .
//! . . . . . . . . .        h . . . . .           . . . . . . .
//! . . . . S . . . .        . . . . H .           . . . # # # .
//!                          . . . . . G           . . . . . . .
//!                                                . . . S . . .
//! ```
//!
//! `$`/`E`/`B`: dollar, euro and split-color terminals. `h`: holes rewarded
//! by the first source, `H`: holes rewarded by the second. `#`: obstacles
//! (crashing into one ends the episode).
//!
//! Before SBF randomization every move succeeds with probability 0.8 and
//! otherwise lands where one of the other actions would have, uniformly.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{combine_rewards, CombinationSpec};
use crate::error::{Error, Result};
use crate::mdp::{
    decode_rewards, encode_rewards, extract_lite_model, validate, LiteModel, MdpDocument, RewardEntry,
    RewardTable, TabularMdp, Violation,
};

pub const INTENDED_PROB: f64 = 0.8;

#[derive(Clone, Debug, PartialEq)]
pub struct DomainBundle {
    pub name: String,
    pub mdp: TabularMdp,
    pub source_rewards: Vec<RewardTable>,
    pub combination: CombinationSpec,
    pub labels: Vec<String>,
    pub layout: Option<(usize, usize)>,
}

impl DomainBundle {
    pub fn target_rewards(&self) -> Result<RewardTable> {
        combine_rewards(&self.source_rewards, &self.combination)
    }

    pub fn lite(&self) -> LiteModel {
        extract_lite_model(&self.mdp)
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for r in &self.source_rewards {
            for v in validate(&self.mdp, r) {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn with_combination(mut self, combination: CombinationSpec) -> Self {
        self.combination = combination;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleExtra {
    pub name: String,
    pub source_rewards: Vec<Vec<RewardEntry>>,
    pub combination: CombinationSpec,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<[usize; 2]>,
}

/// The MDP interchange document (carrying the combined target reward) with a
/// `bundle` member for everything else.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleDocument {
    #[serde(flatten)]
    pub mdp: MdpDocument,
    pub bundle: BundleExtra,
}

impl BundleDocument {
    pub fn from_bundle(bundle: &DomainBundle) -> Result<Self> {
        Ok(Self {
            mdp: MdpDocument::from_model(&bundle.mdp, &bundle.target_rewards()?),
            bundle: BundleExtra {
                name: bundle.name.clone(),
                source_rewards: bundle.source_rewards.iter().map(encode_rewards).collect(),
                combination: bundle.combination.clone(),
                labels: bundle.labels.clone(),
                layout: bundle.layout.map(|(r, c)| [r, c]),
            },
        })
    }

    pub fn into_bundle(self) -> Result<DomainBundle> {
        let (mdp, _) = self.mdp.into_model()?;
        let source_rewards = self
            .bundle
            .source_rewards
            .iter()
            .map(|entries| decode_rewards(entries, mdp.n_states(), mdp.n_actions()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DomainBundle {
            name: self.bundle.name,
            mdp,
            source_rewards,
            combination: self.bundle.combination,
            labels: self.bundle.labels,
            layout: self.bundle.layout.map(|[r, c]| (r, c)),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    DollarEuro,
    FrozenLake,
    Racetrack,
    Autogen,
}

impl DomainKind {
    pub const ALL: [DomainKind; 4] = [Self::DollarEuro, Self::FrozenLake, Self::Racetrack, Self::Autogen];

    pub fn name(self) -> &'static str {
        match self {
            Self::DollarEuro => "dollar_euro",
            Self::FrozenLake => "frozen_lake",
            Self::Racetrack => "racetrack",
            Self::Autogen => "autogen",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name || k.name().replace('_', "-") == name)
            .ok_or_else(|| Error::invalid(format!("unknown domain {name:?}")))
    }

    /// Low, middle and highest SBF setting used for each domain.
    pub fn sbf_levels(self) -> [usize; 3] {
        match self {
            Self::DollarEuro | Self::FrozenLake => [1, 2, 4],
            Self::Racetrack => [1, 5, 7],
            Self::Autogen => [1, 5, 9],
        }
    }

    pub fn build<R: Rng + ?Sized>(self, sbf: usize, rng: &mut R) -> Result<DomainBundle> {
        match self {
            Self::DollarEuro => dollar_euro(sbf, rng),
            Self::FrozenLake => frozen_lake(sbf, rng),
            Self::Racetrack => racetrack(sbf, rng),
            Self::Autogen => autogen(60, 9, sbf, CombinationSpec::linear([1.0, 1.0]), rng),
        }
    }
}

/// Cuts every non-terminal row down to `k ~ U{1..min(sbf, |support|)}`
/// successors: the most likely successor is always kept, the other `k − 1`
/// are drawn without replacement, and the row is renormalized.
pub fn randomize_sbf<R: Rng + ?Sized>(mdp: &TabularMdp, sbf: usize, rng: &mut R) -> Result<TabularMdp> {
    if sbf == 0 {
        return Err(Error::invalid("SBF must be at least 1"));
    }
    let mut out = mdp.clone();
    for s in mdp.non_terminal_states() {
        for a in 0..mdp.n_actions() {
            let row: Vec<(usize, f64)> = mdp
                .successors(s, a)
                .iter()
                .filter(|x| x.prob > 0.0)
                .map(|x| (x.state, x.prob))
                .collect();
            if row.is_empty() {
                continue;
            }
            let modal = (0..row.len())
                .max_by(|&i, &j| {
                    row[i]
                        .1
                        .total_cmp(&row[j].1)
                        .then_with(|| row[j].0.cmp(&row[i].0))
                })
                .expect("non-empty row");
            let k = rng.gen_range(1..=sbf.min(row.len()));
            let rest: Vec<usize> = (0..row.len()).filter(|&i| i != modal).collect();
            let mut keep = vec![modal];
            keep.extend(sample(rng, rest.len(), k - 1).into_iter().map(|i| rest[i]));
            keep.sort_unstable_by_key(|&i| row[i].0);
            let mass: f64 = keep.iter().map(|&i| row[i].1).sum();
            out.set_row(s, a, keep.iter().map(|&i| (row[i].0, row[i].1 / mass)));
        }
    }
    Ok(out)
}

type Cell = (usize, usize);

/// Grid dynamics with the slip model. `outcome` maps a cell and action to the
/// landing cell; terminal cells get no rows.
fn grid_mdp(
    rows: usize,
    cols: usize,
    n_actions: usize,
    gamma: f64,
    start: Cell,
    terminals: &[Cell],
    outcome: impl Fn(Cell, usize) -> Cell,
) -> TabularMdp {
    let id = |(r, c): Cell| r * cols + c;
    let mut mdp = TabularMdp::new(rows * cols, n_actions, gamma, id(start), terminals.iter().map(|&t| id(t)));
    let slip = (1.0 - INTENDED_PROB) / (n_actions - 1) as f64;
    for r in 0..rows {
        for c in 0..cols {
            let s = id((r, c));
            if mdp.is_terminal(s) {
                continue;
            }
            for a in 0..n_actions {
                let mut row: Vec<(usize, f64)> = Vec::new();
                for b in 0..n_actions {
                    let p = if b == a { INTENDED_PROB } else { slip };
                    let sp = id(outcome((r, c), b));
                    match row.iter_mut().find(|(t, _)| *t == sp) {
                        Some(entry) => entry.1 += p,
                        None => row.push((sp, p)),
                    }
                }
                row.sort_unstable_by_key(|&(t, _)| t);
                mdp.set_row(s, a, row);
            }
        }
    }
    mdp
}

/// Up, down, left, right; moves off the grid leave the agent in place.
fn four_way(rows: usize, cols: usize) -> impl Fn(Cell, usize) -> Cell {
    move |(r, c), a| match a {
        0 if r > 0 => (r - 1, c),
        1 if r + 1 < rows => (r + 1, c),
        2 if c > 0 => (r, c - 1),
        3 if c + 1 < cols => (r, c + 1),
        _ => (r, c),
    }
}

fn grid_labels(rows: usize, cols: usize, named: &[(Cell, &str)]) -> Vec<String> {
    (0..rows * cols)
        .map(|s| {
            let cell = (s / cols, s % cols);
            match named.iter().find(|(c, _)| *c == cell) {
                Some((_, tag)) => format!("{tag}({},{})", cell.0, cell.1),
                None => format!("({},{})", cell.0, cell.1),
            }
        })
        .collect()
}

pub fn dollar_euro<R: Rng + ?Sized>(sbf: usize, rng: &mut R) -> Result<DomainBundle> {
    const ROWS: usize = 5;
    const COLS: usize = 9;
    let (dollar, euro, split, start) = ((0, 0), (0, 8), (0, 4), (4, 4));
    let base = grid_mdp(ROWS, COLS, 4, 0.9, start, &[dollar, euro, split], four_way(ROWS, COLS));
    let mdp = randomize_sbf(&base, sbf, rng)?;
    let id = |(r, c): Cell| r * COLS + c;
    let reward_at = |hits: [(Cell, f64); 2]| {
        RewardTable::from_fn(&mdp, |_, _, sp| {
            hits.iter().find(|(cell, _)| id(*cell) == sp).map_or(0.0, |&(_, r)| r)
        })
    };
    let r_dollar = reward_at([(dollar, 1.0), (split, 0.6)]);
    let r_euro = reward_at([(euro, 1.0), (split, 0.6)]);
    Ok(DomainBundle {
        name: DomainKind::DollarEuro.name().into(),
        labels: grid_labels(ROWS, COLS, &[(dollar, "$"), (euro, "E"), (split, "$E"), (start, "start")]),
        mdp,
        source_rewards: vec![r_dollar, r_euro],
        combination: CombinationSpec::linear([1.0, 1.0]),
        layout: Some((ROWS, COLS)),
    })
}

pub fn frozen_lake<R: Rng + ?Sized>(sbf: usize, rng: &mut R) -> Result<DomainBundle> {
    const N: usize = 6;
    let start = (0, 0);
    let goal = (5, 5);
    let first = [(0, 3), (3, 0)];
    let second = [(2, 2), (4, 4)];
    let terminals: Vec<Cell> = first.iter().chain(&second).copied().chain([goal]).collect();
    let base = grid_mdp(N, N, 4, 0.9, start, &terminals, four_way(N, N));
    let mdp = randomize_sbf(&base, sbf, rng)?;
    let cell = |s: usize| (s / N, s % N);
    let source = |mine: [Cell; 2], theirs: [Cell; 2]| {
        RewardTable::from_fn(&mdp, |_, _, sp| {
            let c = cell(sp);
            if mine.contains(&c) {
                1.0
            } else if theirs.contains(&c) {
                -1.0
            } else if c == goal {
                0.5
            } else {
                0.0
            }
        })
    };
    let r1 = source(first, second);
    let r2 = source(second, first);
    let named = [
        (start, "start"),
        (goal, "goal"),
        (first[0], "h"),
        (first[1], "h"),
        (second[0], "H"),
        (second[1], "H"),
    ];
    Ok(DomainBundle {
        name: DomainKind::FrozenLake.name().into(),
        labels: grid_labels(N, N, &named),
        mdp,
        source_rewards: vec![r1, r2],
        combination: CombinationSpec::linear([1.0, 1.0]),
        layout: Some((N, N)),
    })
}

/// Racetrack actions: stay, then speed 1 and 2 forward (up), turning left and
/// turning right.
pub const RACETRACK_ACTIONS: [&str; 7] = ["stay", "forward1", "forward2", "left1", "left2", "right1", "right2"];

pub fn racetrack<R: Rng + ?Sized>(sbf: usize, rng: &mut R) -> Result<DomainBundle> {
    const N: usize = 7;
    let start = (6, 3);
    let goal = (0, 3);
    let obstacles = [(2, 1), (2, 2), (2, 3), (2, 4), (4, 3), (4, 4), (4, 5)];
    let terminals: Vec<Cell> = obstacles.iter().copied().chain([goal]).collect();
    let outcome = move |(r, c): Cell, a: usize| -> Cell {
        let (dr, dc, speed): (isize, isize, usize) = match a {
            0 => (0, 0, 0),
            1 => (-1, 0, 1),
            2 => (-1, 0, 2),
            3 => (0, -1, 1),
            4 => (0, -1, 2),
            5 => (0, 1, 1),
            _ => (0, 1, 2),
        };
        let mut pos = (r as isize, c as isize);
        for _ in 0..speed {
            let next = (pos.0 + dr, pos.1 + dc);
            if next.0 < 0 || next.1 < 0 || next.0 >= N as isize || next.1 >= N as isize {
                // Leaving the track cancels the whole move.
                return (r, c);
            }
            pos = next;
            let here = (pos.0 as usize, pos.1 as usize);
            if obstacles.contains(&here) || here == goal {
                return here;
            }
        }
        (pos.0 as usize, pos.1 as usize)
    };
    let base = grid_mdp(N, N, 7, 0.9, start, &terminals, outcome);
    let mdp = randomize_sbf(&base, sbf, rng)?;
    let id = |(r, c): Cell| r * N + c;
    let crash = |sp: usize| obstacles.iter().any(|&o| id(o) == sp);
    let stays_at_start = |s: usize, sp: usize| s == id(start) && sp == id(start);

    // Living rewards apply to every step except staying at the start, which
    // has its own rewards.
    let avoid = RewardTable::from_fn(&mdp, |s, _, sp| match () {
        _ if stays_at_start(s, sp) => 0.0,
        _ if crash(sp) => -0.5 + 0.2,
        _ => 0.2,
    });
    let terminate = RewardTable::from_fn(&mdp, |s, _, sp| match () {
        _ if stays_at_start(s, sp) => -4.0,
        _ if sp == id(goal) => 2.0 - 0.3,
        _ => -0.3,
    });
    let stay = RewardTable::from_fn(&mdp, |s, _, sp| if stays_at_start(s, sp) { 3.0 } else { 0.0 });

    let mut named: Vec<(Cell, &str)> = obstacles.iter().map(|&o| (o, "#")).collect();
    named.push((start, "start"));
    named.push((goal, "goal"));
    Ok(DomainBundle {
        name: DomainKind::Racetrack.name().into(),
        labels: grid_labels(N, N, &named),
        mdp,
        source_rewards: vec![avoid, terminate, stay],
        combination: CombinationSpec::linear([1.0, 1.0, 1.0]),
        layout: Some((N, N)),
    })
}

/// Random MDP: every non-terminal `(s, a)` initially reaches `n_actions`
/// distinct random successors with random probabilities. Three random
/// terminals carry source rewards `(+1, −1)`, `(−1, +1)` and `(+0.6, +0.6)`.
pub fn autogen<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    sbf: usize,
    combination: CombinationSpec,
    rng: &mut R,
) -> Result<DomainBundle> {
    if n_states < 4 || n_actions == 0 || n_actions > n_states {
        return Err(Error::invalid("autogen needs at least 4 states and 1..=n_states actions"));
    }
    let terminals = sample(rng, n_states, 3).into_vec();
    let initial = loop {
        let s = rng.gen_range(0..n_states);
        if !terminals.contains(&s) {
            break s;
        }
    };
    let mut base = TabularMdp::new(n_states, n_actions, 0.9, initial, terminals.iter().copied());
    for s in 0..n_states {
        if terminals.contains(&s) {
            continue;
        }
        for a in 0..n_actions {
            let mut next = sample(rng, n_states, n_actions).into_vec();
            next.sort_unstable();
            let weights: Vec<f64> = next.iter().map(|_| rng.gen_range(f64::EPSILON..1.0)).collect();
            let total: f64 = weights.iter().sum();
            base.set_row(s, a, next.into_iter().zip(weights.into_iter().map(|w| w / total)));
        }
    }
    let mdp = randomize_sbf(&base, sbf, rng)?;
    let pairs = [(1.0, -1.0), (-1.0, 1.0), (0.6, 0.6)];
    let source = |which: usize| {
        RewardTable::from_fn(&mdp, |_, _, sp| {
            terminals
                .iter()
                .position(|&t| t == sp)
                .map_or(0.0, |i| if which == 0 { pairs[i].0 } else { pairs[i].1 })
        })
    };
    let mut labels: Vec<String> = (0..n_states).map(|s| format!("s{s}")).collect();
    for (i, &t) in terminals.iter().enumerate() {
        labels[t] = format!("terminal{}:s{t}", i + 1);
    }
    labels[initial] = format!("start:s{initial}");
    let source_rewards = vec![source(0), source(1)];
    Ok(DomainBundle {
        name: DomainKind::Autogen.name().into(),
        labels,
        mdp,
        source_rewards,
        combination,
        layout: None,
    })
}

/// Three states: `s1 → {s2, s3}` and `s2 → {s1, s3}` uniformly, `s3`
/// terminal, reward 1 per step, discount 0.5. Its monotone bound iteration has
/// more than one fixed point.
pub fn three_state_mdp() -> (TabularMdp, RewardTable) {
    let mut mdp = TabularMdp::new(3, 1, 0.5, 0, [2]);
    mdp.set_row(0, 0, [(1, 0.5), (2, 0.5)]);
    mdp.set_row(1, 0, [(0, 0.5), (2, 0.5)]);
    let rewards = RewardTable::from_fn(&mdp, |_, _, _| 1.0);
    (mdp, rewards)
}
