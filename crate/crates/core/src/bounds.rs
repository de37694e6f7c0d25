//! Upper and lower bounds on the target optimal Q-function, built from source
//! knowledge only, and the action-pruning rule they support.
//!
//! Two iteration schemes are provided. [`qm_iterate`] runs the optimistic and
//! pessimistic Bellman operators (max / min over 1-step reachable successors)
//! to their unique fixed points. [`mqm_iterate`] starts from bounds that are
//! already valid and clamps every sweep against the previous table, so the
//! upper bound never rises and the lower bound never falls.
//!
//! Terminal rows (states whose lite-model rows are all empty) are pinned to 0
//! by the first scheme and frozen at their initial value by the second.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ActionMask, LiteModel, QTable, RewardTable, TabularMdp};
use crate::solve::SolveConfig;

/// Known bounds `[n_min, n_max]` on additive noise in the target reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseRange {
    pub n_min: f64,
    pub n_max: f64,
}

impl NoiseRange {
    pub fn new(n_min: f64, n_max: f64) -> Result<Self> {
        if !(n_min <= n_max) {
            return Err(Error::invalid(format!("noise range [{n_min}, {n_max}] is empty")));
        }
        Ok(Self { n_min, n_max })
    }

    pub fn symmetric(magnitude: f64) -> Self {
        Self {
            n_min: -magnitude.abs(),
            n_max: magnitude.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum CombinationForm {
    /// `Σ c_i R_i`
    Linear { coeffs: Vec<f64> },
    /// `(Σ c_i R_i)^exponent`
    PowerOfSum { coeffs: Vec<f64>, exponent: u32 },
}

/// The combination function `f` relating source rewards to the target reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinationSpec {
    #[serde(flatten)]
    pub form: CombinationForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseRange>,
}

impl CombinationSpec {
    pub fn linear(coeffs: impl Into<Vec<f64>>) -> Self {
        Self {
            form: CombinationForm::Linear { coeffs: coeffs.into() },
            noise: None,
        }
    }

    pub fn power_of_sum(coeffs: impl Into<Vec<f64>>, exponent: u32) -> Self {
        Self {
            form: CombinationForm::PowerOfSum {
                coeffs: coeffs.into(),
                exponent,
            },
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: Option<NoiseRange>) -> Self {
        self.noise = noise;
        self
    }

    pub fn coeffs(&self) -> &[f64] {
        match &self.form {
            CombinationForm::Linear { coeffs } | CombinationForm::PowerOfSum { coeffs, .. } => coeffs,
        }
    }

    pub fn arity(&self) -> usize {
        self.coeffs().len()
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.form, CombinationForm::Linear { .. })
    }

    /// Nonnegative coefficients (and a positive exponent): `f` is then
    /// monotonically increasing in each argument and nonnegative on
    /// nonnegative inputs.
    pub fn is_monotone_positive(&self) -> bool {
        let nonneg = self.coeffs().iter().all(|&c| c >= 0.0);
        match self.form {
            CombinationForm::Linear { .. } => nonneg,
            CombinationForm::PowerOfSum { exponent, .. } => nonneg && exponent >= 1,
        }
    }

    pub fn eval(&self, xs: &[f64]) -> f64 {
        let sum: f64 = self.coeffs().iter().zip(xs).map(|(c, x)| c * x).sum();
        match self.form {
            CombinationForm::Linear { .. } => sum,
            CombinationForm::PowerOfSum { exponent, .. } => sum.powi(exponent as i32),
        }
    }
}

/// Applies `f` pointwise on every `(s, a, s')`. Noise is not added here.
pub fn combine_rewards(sources: &[RewardTable], spec: &CombinationSpec) -> Result<RewardTable> {
    let first = sources
        .first()
        .ok_or_else(|| Error::invalid("at least one source reward table is required"))?;
    if sources.len() != spec.arity() {
        return Err(Error::invalid(format!(
            "combination takes {} sources, got {}",
            spec.arity(),
            sources.len()
        )));
    }
    if let Some(i) = sources.iter().position(|r| !r.same_support(first)) {
        return Err(Error::invalid(format!("source {i} has a different transition support")));
    }
    let mut out = RewardTable::empty(first.n_states(), first.n_actions());
    let mut xs = vec![0.0; sources.len()];
    for (s, a, sp, r0) in first.iter() {
        xs[0] = r0;
        for (x, src) in xs.iter_mut().zip(sources).skip(1) {
            *x = src.reward(s, a, sp)?;
        }
        out.insert(s, a, sp, spec.eval(&xs));
    }
    Ok(out)
}

/// A pair of bound tables plus iteration metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    pub ub: QTable,
    pub lb: QTable,
    pub iterations: usize,
    pub converged: bool,
    pub residual: f64,
    /// Set when the bounds are not guaranteed to contain the target `Q*`.
    #[serde(default)]
    pub approximate: bool,
    #[serde(default)]
    pub provenance: String,
    #[serde(skip)]
    pub ub_deltas: Vec<f64>,
    #[serde(skip)]
    pub lb_deltas: Vec<f64>,
}

impl BoundPair {
    pub fn new(ub: QTable, lb: QTable, provenance: impl Into<String>) -> Result<Self> {
        if !ub.is_congruent(&lb) {
            return Err(Error::invalid("upper and lower bound tables differ in shape"));
        }
        Ok(Self {
            ub,
            lb,
            iterations: 0,
            converged: false,
            residual: f64::INFINITY,
            approximate: false,
            provenance: provenance.into(),
            ub_deltas: Vec::new(),
            lb_deltas: Vec::new(),
        })
    }

    /// Largest `ub − lb` over all entries.
    pub fn max_gap(&self) -> f64 {
        self.ub
            .values()
            .iter()
            .zip(self.lb.values())
            .map(|(u, l)| u - l)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// True when `lb − tol ≤ q ≤ ub + tol` everywhere.
    pub fn brackets(&self, q: &QTable, tol: f64) -> bool {
        self.count_outside(q, tol) == 0
    }

    pub fn count_outside(&self, q: &QTable, tol: f64) -> usize {
        q.values()
            .iter()
            .zip(self.lb.values().iter().zip(self.ub.values()))
            .filter(|(&v, (&l, &u))| v < l - tol || v > u + tol)
            .count()
    }
}

/// `(1 − γ^{t_max}) / (1 − γ)`; `None` means an unbounded horizon.
pub fn horizon_factor(gamma: f64, t_max: Option<usize>) -> f64 {
    match t_max {
        Some(t) => (1.0 - gamma.powi(t.min(i32::MAX as usize) as i32)) / (1.0 - gamma),
        None => 1.0 / (1.0 - gamma),
    }
}

/// The lite model joined with the target reward, ready for bound backups.
#[derive(Clone, Debug)]
pub struct BoundModel {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    terminal: Vec<bool>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl BoundModel {
    pub fn new(lite: &LiteModel, target_r: &RewardTable, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount {gamma} outside [0, 1)")));
        }
        if target_r.n_states() != lite.n_states() || target_r.n_actions() != lite.n_actions() {
            return Err(Error::invalid("reward table shape does not match the lite model"));
        }
        let (n_states, n_actions) = (lite.n_states(), lite.n_actions());
        let mut rows = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = lite
                    .reachable(s, a)
                    .iter()
                    .map(|&sp| Ok((sp, target_r.reward(s, a, sp)?)))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(row);
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            terminal: (0..n_states).map(|s| lite.is_terminal(s)).collect(),
            rows,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    /// Shared backup: for each non-terminal `(s, a)`, folds
    /// `R(s, a, s') + shift + γ max_{a'} Q(s', a')` over reachable `s'` with
    /// `pick`; terminal rows come from `terminal_value`.
    fn backup(
        &self,
        q: &QTable,
        shift: f64,
        pick: fn(f64, f64) -> f64,
        combine: impl Fn(f64, f64) -> f64,
        terminal_value: impl Fn(f64) -> f64,
    ) -> QTable {
        let values: Vec<f64> = (0..self.n_states).map(|s| q.state_value(s)).collect();
        QTable::from_fn(self.n_states, self.n_actions, |s, a| {
            let old = q.get(s, a);
            if self.terminal[s] {
                return terminal_value(old);
            }
            let mut it = self.rows[s * self.n_actions + a]
                .iter()
                .map(|&(sp, r)| r + shift + self.gamma * values[sp]);
            let first = it.next().unwrap_or(0.0);
            combine(old, it.fold(first, pick))
        })
    }

    /// Optimistic backup `𝒯_max`; terminal rows become 0.
    pub fn qm_upper(&self, q: &QTable, shift: f64) -> QTable {
        self.backup(q, shift, f64::max, |_, new| new, |_| 0.0)
    }

    /// Pessimistic backup `𝒯_min`; terminal rows become 0.
    pub fn qm_lower(&self, q: &QTable, shift: f64) -> QTable {
        self.backup(q, shift, f64::min, |_, new| new, |_| 0.0)
    }

    /// `min(Q, 𝒯_max Q)`; terminal rows are left as they are.
    pub fn mqm_upper(&self, q: &QTable, shift: f64) -> QTable {
        self.backup(q, shift, f64::max, f64::min, |old| old)
    }

    /// `max(Q, 𝒯_min Q)`; terminal rows are left as they are.
    pub fn mqm_lower(&self, q: &QTable, shift: f64) -> QTable {
        self.backup(q, shift, f64::min, f64::max, |old| old)
    }
}

fn noise_shifts(noise: Option<NoiseRange>) -> (f64, f64) {
    noise.map_or((0.0, 0.0), |n| (n.n_max, n.n_min))
}

fn run_pair(
    mut ub: QTable,
    mut lb: QTable,
    cfg: &SolveConfig,
    upper: impl Fn(&QTable) -> QTable,
    lower: impl Fn(&QTable) -> QTable,
    provenance: &str,
) -> Result<BoundPair> {
    cfg.check()?;
    let mut ub_deltas = Vec::new();
    let mut lb_deltas = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let next_ub = upper(&ub);
        let next_lb = lower(&lb);
        let du = next_ub.sup_distance(&ub);
        let dl = next_lb.sup_distance(&lb);
        ub_deltas.push(du);
        lb_deltas.push(dl);
        ub = next_ub;
        lb = next_lb;
        if du <= cfg.epsilon && dl <= cfg.epsilon {
            return Ok(BoundPair {
                ub,
                lb,
                iterations: sweep,
                converged: true,
                residual: du.max(dl),
                approximate: false,
                provenance: provenance.to_string(),
                ub_deltas,
                lb_deltas,
            });
        }
    }
    Err(Error::NonConvergence {
        sweeps: cfg.max_sweeps,
        residual: ub_deltas
            .last()
            .copied()
            .unwrap_or(f64::INFINITY)
            .max(lb_deltas.last().copied().unwrap_or(f64::INFINITY)),
    })
}

/// Iterates the optimistic/pessimistic operators from zero tables to their
/// fixed points. With `noise`, the upper backup adds `n_max` to every reward
/// and the lower backup adds `n_min`.
pub fn qm_iterate(
    lite: &LiteModel,
    target_r: &RewardTable,
    gamma: f64,
    cfg: &SolveConfig,
    noise: Option<NoiseRange>,
) -> Result<BoundPair> {
    let zeros = QTable::zeros(lite.n_states(), lite.n_actions());
    qm_iterate_from(lite, target_r, gamma, zeros.clone(), zeros, cfg, noise)
}

/// [`qm_iterate`] from arbitrary starting tables.
pub fn qm_iterate_from(
    lite: &LiteModel,
    target_r: &RewardTable,
    gamma: f64,
    ub0: QTable,
    lb0: QTable,
    cfg: &SolveConfig,
    noise: Option<NoiseRange>,
) -> Result<BoundPair> {
    check_shape(lite, &ub0)?;
    check_shape(lite, &lb0)?;
    let model = BoundModel::new(lite, target_r, gamma)?;
    let (up, down) = noise_shifts(noise);
    run_pair(ub0, lb0, cfg, |q| model.qm_upper(q, up), |q| model.qm_lower(q, down), "qm")
}

/// Constant bounds from the extreme target rewards summed over the horizon.
pub fn mqm_init_naive(lite: &LiteModel, target_r: &RewardTable, gamma: f64, t_max: Option<usize>) -> Result<BoundPair> {
    let (r_min, r_max) = target_r
        .range()
        .ok_or_else(|| Error::invalid("target reward table is empty"))?;
    let h = horizon_factor(gamma, t_max);
    let (hi, lo) = (r_max.max(0.0) * h, r_min.min(0.0) * h);
    let fill = |v: f64| {
        QTable::from_fn(lite.n_states(), lite.n_actions(), |s, _| if lite.is_terminal(s) { 0.0 } else { v })
    };
    BoundPair::new(fill(hi), fill(lo), "naive")
}

/// Linear-combination initialization from the sources' optimal and
/// worst-policy tables:
/// `ub = Σ c_i Q*_i`, `lb = max_i [c_i Q*_i + Σ_{j≠i} c_j Q^μ_j]`.
pub fn mqm_init_linear(q_stars: &[QTable], q_mus: &[QTable], coeffs: &[f64]) -> Result<BoundPair> {
    if let Some(&c) = coeffs.iter().find(|&&c| !(c >= 0.0)) {
        return Err(Error::NegativeCoefficient(c));
    }
    let n = coeffs.len();
    if n == 0 || q_stars.len() != n || q_mus.len() != n {
        return Err(Error::invalid(format!(
            "need one optimal and one worst-policy table per coefficient ({n}), got {} and {}",
            q_stars.len(),
            q_mus.len()
        )));
    }
    let shape = &q_stars[0];
    if q_stars.iter().chain(q_mus).any(|t| !t.is_congruent(shape)) {
        return Err(Error::invalid("source Q-tables differ in shape"));
    }
    let ub = QTable::from_fn(shape.n_states(), shape.n_actions(), |s, a| {
        coeffs.iter().zip(q_stars).map(|(c, q)| c * q.get(s, a)).sum()
    });
    let lb = QTable::from_fn(shape.n_states(), shape.n_actions(), |s, a| {
        (0..n)
            .map(|i| {
                let others: f64 = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| coeffs[j] * q_mus[j].get(s, a))
                    .sum();
                coeffs[i] * q_stars[i].get(s, a) + others
            })
            .fold(f64::NEG_INFINITY, f64::max)
    });
    BoundPair::new(ub, lb, "linear")
}

/// Approximate bounds `ub = f(Q*_{|R_1|}, ...)`, `lb = −ub` for a monotone,
/// positive combination. Not guaranteed to contain the target `Q*`.
pub fn mqm_init_nonlinear(q_star_abs: &[QTable], spec: &CombinationSpec) -> Result<BoundPair> {
    if !spec.is_monotone_positive() {
        return Err(Error::invalid("nonlinear initialization needs a monotone positive combination"));
    }
    if q_star_abs.len() != spec.arity() || q_star_abs.is_empty() {
        return Err(Error::invalid(format!(
            "combination takes {} tables, got {}",
            spec.arity(),
            q_star_abs.len()
        )));
    }
    let shape = &q_star_abs[0];
    if q_star_abs.iter().any(|t| !t.is_congruent(shape)) {
        return Err(Error::invalid("source Q-tables differ in shape"));
    }
    let mut xs = vec![0.0; q_star_abs.len()];
    let ub = QTable::from_fn(shape.n_states(), shape.n_actions(), |s, a| {
        for (x, q) in xs.iter_mut().zip(q_star_abs) {
            *x = q.get(s, a);
        }
        spec.eval(&xs)
    });
    let lb = ub.map(|v| -v);
    let mut pair = BoundPair::new(ub, lb, "nonlinear")?;
    pair.approximate = true;
    Ok(pair)
}

/// Widens the bounds by the discounted noise extremes over the horizon. An
/// episode may end after any number of steps, so a one-sided range only moves
/// the bound on its own side. Every entry is shifted, terminal rows included;
/// callers that freeze terminal rows should restore them afterwards.
pub fn apply_noise_to_init(bounds: &BoundPair, noise: NoiseRange, gamma: f64, t_max: Option<usize>) -> Result<BoundPair> {
    let noise = NoiseRange::new(noise.n_min, noise.n_max)?;
    let h = horizon_factor(gamma, t_max);
    let mut out = bounds.clone();
    out.ub = bounds.ub.map(|v| v + noise.n_max.max(0.0) * h);
    out.lb = bounds.lb.map(|v| v + noise.n_min.min(0.0) * h);
    Ok(out)
}

/// Monotone tightening of valid initial bounds. Terminal rows keep their
/// initial values.
pub fn mqm_iterate(
    lite: &LiteModel,
    target_r: &RewardTable,
    gamma: f64,
    init: &BoundPair,
    cfg: &SolveConfig,
    noise: Option<NoiseRange>,
) -> Result<BoundPair> {
    check_shape(lite, &init.ub)?;
    check_shape(lite, &init.lb)?;
    let model = BoundModel::new(lite, target_r, gamma)?;
    let (up, down) = noise_shifts(noise);
    let mut out = run_pair(
        init.ub.clone(),
        init.lb.clone(),
        cfg,
        |q| model.mqm_upper(q, up),
        |q| model.mqm_lower(q, down),
        &format!("mqm/{}", init.provenance),
    )?;
    out.approximate = init.approximate;
    Ok(out)
}

fn check_shape(lite: &LiteModel, q: &QTable) -> Result<()> {
    if q.n_states() != lite.n_states() || q.n_actions() != lite.n_actions() {
        return Err(Error::invalid("bound table shape does not match the lite model"));
    }
    Ok(())
}

/// `2εγ / (1 − γ)`.
pub fn default_delta(epsilon: f64, gamma: f64) -> f64 {
    2.0 * epsilon * gamma / (1.0 - gamma)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    pub delta: f64,
}

impl PruneConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta >= 0.0) {
            return Err(Error::invalid(format!("prune threshold must be nonnegative, got {delta}")));
        }
        Ok(Self { delta })
    }
}

/// Removes `â` from state `s` when some other action `a` has
/// `lb(s, a) − ub(s, â) ≥ Δ` (strictly greater when `Δ = 0`).
///
/// The action maximizing `lb(s, ·)` is never removed, so every state keeps at
/// least one action even if the bounds cross.
pub fn prune_actions(bounds: &BoundPair, cfg: &PruneConfig) -> ActionMask {
    let (ub, lb) = (&bounds.ub, &bounds.lb);
    let dominates = |lower: f64, upper: f64| {
        if cfg.delta > 0.0 {
            lower - upper >= cfg.delta
        } else {
            lower > upper
        }
    };
    let sets = (0..ub.n_states())
        .map(|s| {
            let lbs = lb.row(s);
            let best_lb = lbs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let keeper = lbs.iter().position(|&v| v == best_lb).unwrap_or(0);
            (0..ub.n_actions())
                .filter(|&hat| {
                    hat == keeper
                        || !(0..ub.n_actions()).any(|a| a != hat && dominates(lbs[a], ub.get(s, hat)))
                })
                .collect()
        })
        .collect();
    ActionMask::from_sets(sets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningStats {
    pub pruned_count: usize,
    pub pruned_fraction: f64,
    /// Remaining actions for every state, terminal states included.
    pub per_state_remaining: Vec<usize>,
}

/// Counts pruned `(s, a)` pairs over the non-terminal states of `mdp`.
pub fn pruning_stats(mask: &ActionMask, mdp: &TabularMdp) -> PruningStats {
    let per_state_remaining: Vec<usize> = (0..mask.n_states()).map(|s| mask.allowed(s).len()).collect();
    let (mut pruned, mut total) = (0, 0);
    for s in mdp.non_terminal_states() {
        total += mdp.n_actions();
        pruned += mdp.n_actions() - per_state_remaining[s];
    }
    PruningStats {
        pruned_count: pruned,
        pruned_fraction: if total == 0 { 0.0 } else { pruned as f64 / total as f64 },
        per_state_remaining,
    }
}

/// Heatmap rows `(state_index, row, col, remaining_actions)`; grid coordinates
/// are row-major when a `(rows, cols)` layout is known.
pub fn heatmap_rows(stats: &PruningStats, layout: Option<(usize, usize)>) -> Vec<(usize, Option<(usize, usize)>, usize)> {
    stats
        .per_state_remaining
        .iter()
        .enumerate()
        .map(|(s, &left)| {
            let coords = layout.filter(|&(r, c)| s < r * c).map(|(_, c)| (s / c, s % c));
            (s, coords, left)
        })
        .collect()
}

pub fn heatmap_csv(stats: &PruningStats, layout: Option<(usize, usize)>) -> String {
    let mut out = String::from("state_index,row,col,remaining_actions\n");
    for (s, coords, left) in heatmap_rows(stats, layout) {
        match coords {
            Some((r, c)) => out.push_str(&format!("{s},{r},{c},{left}\n")),
            None => out.push_str(&format!("{s},,,{left}\n")),
        }
    }
    out
}
