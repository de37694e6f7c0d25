//! Experiment runner: builds seeded domain bundles, derives bounds with each
//! method's recipe, prunes, learns, and exports CSV artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::baselines::{sfql_bootstrap, sqb_bounds_from_mqm, SourceBehavior};
use crate::bounds::{
    apply_noise_to_init, default_delta, heatmap_rows, mqm_init_linear, mqm_init_naive, mqm_init_nonlinear,
    mqm_iterate, prune_actions, pruning_stats, qm_iterate, BoundPair, CombinationSpec, NoiseRange, PruneConfig,
    PruningStats,
};
use crate::domains::{DomainBundle, DomainKind};
use crate::error::{Error, Result};
use crate::learn::{expected_return, q_learning, LearnConfig, LearningCurve};
use crate::mdp::{ActionMask, QTable, RewardTable};
use crate::solve::{greedy_policy, q_mu, value_iteration, value_iteration_masked, SolveConfig};

pub const SCHEMA_VERSION: u32 = 1;
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "QL", alias = "ql")]
    Ql,
    #[serde(rename = "QM", alias = "qm")]
    Qm,
    #[serde(rename = "MQM", alias = "mqm")]
    Mqm,
    #[serde(rename = "SFQL", alias = "sfql")]
    Sfql,
    #[serde(rename = "SQB", alias = "sqb")]
    Sqb,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Self::Ql => "QL",
            Self::Qm => "QM",
            Self::Mqm => "MQM",
            Self::Sfql => "SFQL",
            Self::Sqb => "SQB",
        }
    }

    pub fn prunes(self) -> bool {
        matches!(self, Self::Qm | Self::Mqm)
    }
}

/// How the monotone iteration (and SQB's clip window) is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Naive,
    Linear,
    Nonlinear,
}

impl InitKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "naive" => Ok(Self::Naive),
            "linear" => Ok(Self::Linear),
            "nonlinear" => Ok(Self::Nonlinear),
            other => Err(Error::invalid(format!("unknown initialization {other:?}"))),
        }
    }

    /// Linear for nonnegative linear combinations, nonlinear otherwise.
    pub fn auto(spec: &CombinationSpec) -> Self {
        if spec.is_linear() && spec.coeffs().iter().all(|&c| c >= 0.0) {
            Self::Linear
        } else {
            Self::Nonlinear
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainParams {
    pub name: DomainKind,
    /// SBF settings; empty means the domain's three standard levels.
    #[serde(default)]
    pub sbf: Vec<usize>,
    /// Symmetric reward-noise magnitudes `x`, meaning noise in `[−x, x]`.
    #[serde(default = "default_noise")]
    pub noise: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub combination: Option<CombinationSpec>,
}

fn default_noise() -> Vec<f64> {
    vec![0.0]
}

fn default_runs() -> usize {
    30
}

fn default_window() -> usize {
    50
}

fn default_tolerance() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub domain: DomainParams,
    pub methods: Vec<Method>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub learn: LearnConfig,
    #[serde(default)]
    pub solve: SolveConfig,
    /// `None` uses `2εγ/(1−γ)` with the solver's ε.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prune: Option<PruneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitKind>,
    #[serde(default)]
    pub master_seed: u64,
    /// Trailing window of the smoothed return.
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// A run reaches the threshold once its smoothed return is within this
    /// fraction of `|optimal return|` below the optimal return.
    #[serde(default = "default_tolerance")]
    pub threshold_tolerance: f64,
}

impl ExperimentConfig {
    pub fn new(domain: DomainKind, methods: impl Into<Vec<Method>>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            domain: DomainParams {
                name: domain,
                sbf: Vec::new(),
                noise: default_noise(),
                combination: None,
            },
            methods: methods.into(),
            runs: default_runs(),
            learn: LearnConfig::default(),
            solve: SolveConfig::default(),
            prune: None,
            init: None,
            master_seed: 0,
            smoothing_window: default_window(),
            threshold_tolerance: default_tolerance(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("bad config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.runs == 0 {
            return Err(Error::invalid("runs must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("method list is empty"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::invalid("smoothing_window must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.threshold_tolerance) {
            return Err(Error::invalid("threshold_tolerance must lie in [0, 1)"));
        }
        if self.sbf_levels().contains(&0) {
            return Err(Error::invalid("SBF settings must be at least 1"));
        }
        if self.domain.noise.is_empty() || self.domain.noise.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid("noise magnitudes must be finite and nonnegative"));
        }
        if let Some(p) = &self.prune {
            PruneConfig::new(p.delta)?;
        }
        self.learn.check()?;
        self.solve.check()
    }

    pub fn sbf_levels(&self) -> Vec<usize> {
        if self.domain.sbf.is_empty() {
            self.domain.name.sbf_levels().to_vec()
        } else {
            self.domain.sbf.clone()
        }
    }

    /// Every `(sbf, noise)` pair, in configuration order.
    pub fn settings(&self) -> Vec<Setting> {
        let mut out = Vec::new();
        for sbf in self.sbf_levels() {
            for &noise in &self.domain.noise {
                out.push(Setting { sbf, noise });
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub sbf: usize,
    pub noise: f64,
}

impl Setting {
    pub fn dir_name(&self) -> String {
        format!("sbf_{}_noise_{}", self.sbf, self.noise)
    }

    pub fn noise_range(&self) -> Option<NoiseRange> {
        (self.noise > 0.0).then(|| NoiseRange::symmetric(self.noise))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub run: usize,
    pub seed: u64,
    pub sbf: usize,
    pub noise: f64,
    pub curve: LearningCurve,
    pub pruned_fraction: f64,
    /// Remaining actions per state; only for pruning methods.
    pub per_state_remaining: Option<Vec<usize>>,
    /// Non-terminal states whose allowed set lost every optimal action.
    pub optimal_action_lost: Option<usize>,
    /// Seconds; only for pruning methods.
    pub bound_iteration_time: Option<f64>,
    pub episodes_to_threshold: Option<usize>,
    pub optimal_return: f64,
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

const BUNDLE_TAG: u64 = 1;
const LEARN_TAG: u64 = 2;

/// Seed of the bundle for `(sbf, run)`; shared across noise levels.
pub fn bundle_seed(master: u64, sbf: usize, run: usize) -> u64 {
    derive_seed(master, &[BUNDLE_TAG, sbf as u64, run as u64])
}

/// Learning seed for `(sbf, run)`; shared by every method and noise level.
pub fn learn_seed(master: u64, sbf: usize, run: usize) -> u64 {
    derive_seed(master, &[LEARN_TAG, sbf as u64, run as u64])
}

pub fn build_bundle(cfg: &ExperimentConfig, sbf: usize, run: usize) -> Result<DomainBundle> {
    let mut rng = ChaCha8Rng::seed_from_u64(bundle_seed(cfg.master_seed, sbf, run));
    let bundle = cfg.domain.name.build(sbf, &mut rng)?;
    Ok(match &cfg.domain.combination {
        Some(spec) => bundle.with_combination(spec.clone()),
        None => bundle,
    })
}

/// Trailing mean over at most `window` episodes.
pub fn smooth(returns: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(returns.len());
    let mut sum = 0.0;
    for (i, &r) in returns.iter().enumerate() {
        sum += r;
        if i >= window {
            sum -= returns[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

/// 1-based index of the first smoothed return reaching the threshold.
pub fn episodes_to_threshold(smoothed: &[f64], threshold: f64) -> Option<usize> {
    smoothed.iter().position(|&v| v >= threshold).map(|i| i + 1)
}

pub fn threshold_for(optimal_return: f64, tolerance: f64) -> f64 {
    optimal_return - tolerance * optimal_return.abs()
}

/// The source-derived inputs every method draws from.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub bundle: DomainBundle,
    pub target: RewardTable,
    pub sources: Vec<SourceBehavior>,
    pub q_star: QTable,
}

impl Prepared {
    pub fn new(bundle: DomainBundle, solve: &SolveConfig) -> Result<Self> {
        let target = bundle.target_rewards()?;
        let sources = bundle
            .source_rewards
            .iter()
            .map(|r| SourceBehavior::solve(&bundle.mdp, r.clone(), solve))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.context("solving source behaviors"))?;
        let q_star = value_iteration(&bundle.mdp, &target, solve).map_err(|e| e.context("solving the target"))?;
        Ok(Self {
            bundle,
            target,
            sources,
            q_star,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.bundle.mdp.gamma()
    }

    /// Initial bounds (noise widening included) for the monotone iteration.
    pub fn init_bounds(&self, kind: InitKind, noise: Option<NoiseRange>) -> Result<BoundPair> {
        let lite = self.bundle.lite();
        let init = match kind {
            InitKind::Naive => mqm_init_naive(&lite, &self.target, self.gamma(), None)?,
            InitKind::Linear => {
                let spec = &self.bundle.combination;
                if !spec.is_linear() {
                    return Err(Error::invalid("linear initialization needs a linear combination"));
                }
                let stars: Vec<QTable> = self.sources.iter().map(|s| s.q_star.clone()).collect();
                let mus: Vec<QTable> = self.sources.iter().map(|s| s.q_mu.clone()).collect();
                mqm_init_linear(&stars, &mus, spec.coeffs())?
            }
            InitKind::Nonlinear => {
                let abs: Vec<QTable> = self.sources.iter().map(|s| s.q_star_abs.clone()).collect();
                mqm_init_nonlinear(&abs, &self.bundle.combination)?
            }
        };
        let Some(n) = noise else { return Ok(init) };
        let mut widened = apply_noise_to_init(&init, n, self.gamma(), None)?;
        for s in (0..self.bundle.mdp.n_states()).filter(|&s| self.bundle.mdp.is_terminal(s)) {
            widened.ub.row_mut(s).copy_from_slice(init.ub.row(s));
            widened.lb.row_mut(s).copy_from_slice(init.lb.row(s));
        }
        Ok(widened)
    }

    pub fn qm_bounds(&self, solve: &SolveConfig, noise: Option<NoiseRange>) -> Result<BoundPair> {
        qm_iterate(&self.bundle.lite(), &self.target, self.gamma(), solve, noise)
    }

    pub fn mqm_bounds(&self, kind: InitKind, solve: &SolveConfig, noise: Option<NoiseRange>) -> Result<BoundPair> {
        let init = self.init_bounds(kind, noise)?;
        mqm_iterate(&self.bundle.lite(), &self.target, self.gamma(), &init, solve, noise)
    }

    /// Non-terminal states where no allowed action is optimal within `tol`.
    pub fn optimal_action_lost(&self, mask: &ActionMask, tol: f64) -> usize {
        count_lost_optimal(&self.q_star, mask, self.bundle.mdp.non_terminal_states(), tol)
    }
}

pub fn count_lost_optimal(q_star: &QTable, mask: &ActionMask, states: impl Iterator<Item = usize>, tol: f64) -> usize {
    states
        .filter(|&s| {
            let best = q_star.state_value(s);
            !mask.allowed(s).iter().any(|&a| q_star.get(s, a) >= best - tol)
        })
        .count()
}

/// Everything the `bounds` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub bounds: BoundPair,
    pub mask: ActionMask,
    pub delta: f64,
    pub stats: PruningStats,
}

pub fn bounds_report(
    prepared: &Prepared,
    method: Method,
    init: InitKind,
    noise: Option<NoiseRange>,
    solve: &SolveConfig,
    prune: Option<PruneConfig>,
) -> Result<BoundsReport> {
    let bounds = match method {
        Method::Qm => prepared.qm_bounds(solve, noise)?,
        Method::Mqm => prepared.mqm_bounds(init, solve, noise)?,
        other => return Err(Error::invalid(format!("{} does not compute bounds", other.label()))),
    };
    let prune = match prune {
        Some(p) => p,
        None => PruneConfig::new(default_delta(solve.epsilon, prepared.gamma()))?,
    };
    let mask = prune_actions(&bounds, &prune);
    let stats = pruning_stats(&mask, &prepared.bundle.mdp);
    Ok(BoundsReport {
        bounds,
        mask,
        delta: prune.delta,
        stats,
    })
}

/// Runs every configured method on one prepared bundle.
pub fn run_methods(
    cfg: &ExperimentConfig,
    prepared: &Prepared,
    setting: Setting,
    run: usize,
    seed: u64,
) -> Result<Vec<RunResult>> {
    let mdp = &prepared.bundle.mdp;
    let noise = setting.noise_range();
    let init_kind = cfg.init.unwrap_or_else(|| InitKind::auto(&prepared.bundle.combination));
    let delta = cfg
        .prune
        .map(|p| p.delta)
        .unwrap_or_else(|| default_delta(cfg.solve.epsilon, prepared.gamma()));
    let prune = PruneConfig::new(delta)?;
    let learn = LearnConfig {
        seed,
        reward_noise: noise,
        ..cfg.learn.clone()
    };
    let optimal_policy = greedy_policy(&prepared.q_star, None)?;
    let optimal_return = expected_return(mdp, &prepared.target, &optimal_policy, cfg.learn.t_max)?;
    let threshold = threshold_for(optimal_return, cfg.threshold_tolerance);
    let tol = 2.0 * cfg.solve.epsilon / (1.0 - prepared.gamma());

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let mut mask = None;
        let mut init_q = None;
        let mut clip = None;
        let mut timing = None;
        match method {
            Method::Ql => {}
            Method::Qm | Method::Mqm => {
                let started = Instant::now();
                let bounds = if method == Method::Qm {
                    prepared.qm_bounds(&cfg.solve, noise)?
                } else {
                    prepared.mqm_bounds(init_kind, &cfg.solve, noise)?
                };
                timing = Some(started.elapsed().as_secs_f64());
                mask = Some(prune_actions(&bounds, &prune));
            }
            Method::Sfql => {
                init_q = Some(sfql_bootstrap(mdp, &prepared.target, &prepared.sources, &cfg.solve)?);
            }
            Method::Sqb => {
                clip = Some(sqb_bounds_from_mqm(&prepared.init_bounds(init_kind, noise)?));
            }
        }
        let (_, curve) = q_learning(mdp, &prepared.target, &learn, mask.as_ref(), init_q.as_ref(), clip.as_ref())?;
        let smoothed = smooth(&curve.returns(), cfg.smoothing_window);
        let stats = mask.as_ref().map(|m| pruning_stats(m, mdp));
        out.push(RunResult {
            method,
            run,
            seed,
            sbf: setting.sbf,
            noise: setting.noise,
            episodes_to_threshold: episodes_to_threshold(&smoothed, threshold),
            curve,
            pruned_fraction: stats.as_ref().map_or(0.0, |s| s.pruned_fraction),
            per_state_remaining: stats.map(|s| s.per_state_remaining),
            optimal_action_lost: mask.as_ref().map(|m| prepared.optimal_action_lost(m, tol)),
            bound_iteration_time: timing,
            optimal_return,
        });
    }
    Ok(out)
}

/// Runs the full sweep in parallel. Results are sorted by
/// `(sbf, noise, method, run)`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<RunResult>> {
    cfg.check()?;
    let jobs: Vec<(usize, usize)> = cfg
        .sbf_levels()
        .into_iter()
        .flat_map(|sbf| (0..cfg.runs).map(move |run| (sbf, run)))
        .collect();
    let nested = jobs
        .par_iter()
        .map(|&(sbf, run)| -> Result<Vec<RunResult>> {
            let ctx = || format!("run {run} at SBF {sbf}");
            let bundle = build_bundle(cfg, sbf, run).map_err(|e| e.context(ctx()))?;
            let prepared = Prepared::new(bundle, &cfg.solve).map_err(|e| e.context(ctx()))?;
            let seed = learn_seed(cfg.master_seed, sbf, run);
            let mut all = Vec::new();
            for &noise in &cfg.domain.noise {
                let setting = Setting { sbf, noise };
                all.extend(run_methods(cfg, &prepared, setting, run, seed).map_err(|e| e.context(ctx()))?);
            }
            Ok(all)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut results: Vec<RunResult> = nested.into_iter().flatten().collect();
    sort_results(&mut results);
    Ok(results)
}

pub fn sort_results(results: &mut [RunResult]) {
    results.sort_by(|a, b| {
        a.sbf
            .cmp(&b.sbf)
            .then(a.noise.total_cmp(&b.noise))
            .then((a.method, a.run).cmp(&(b.method, b.run)))
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// Mean, sample standard deviation and 95% confidence interval; Student-t
/// quantiles below 30 samples, normal from 30 on.
pub fn confidence_interval(samples: &[f64]) -> Option<Interval> {
    let n = samples.len();
    if n == 0 {
        return None;
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Some(Interval {
            mean,
            std: 0.0,
            ci_low: mean,
            ci_high: mean,
            n,
        });
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let q = if n < 30 {
        StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975)
    } else {
        Z_975
    };
    let half = q * std / (n as f64).sqrt();
    Some(Interval {
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub metric: String,
    pub episode: Option<usize>,
    pub stats: Interval,
}

/// Per `(method, episode)` statistics of the smoothed return, then per-method
/// statistics of pruned fraction and episodes to threshold (over runs that
/// reached it). Timing lives in the timing export only.
pub fn summarize(results: &[RunResult], window: usize) -> Vec<SummaryRow> {
    let mut methods: Vec<Method> = results.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let mut rows = Vec::new();
    for method in methods {
        let runs: Vec<&RunResult> = results.iter().filter(|r| r.method == method).collect();
        let smoothed: Vec<Vec<f64>> = runs.iter().map(|r| smooth(&r.curve.returns(), window)).collect();
        let len = smoothed.iter().map(Vec::len).max().unwrap_or(0);
        for ep in 0..len {
            let at: Vec<f64> = smoothed.iter().filter_map(|s| s.get(ep).copied()).collect();
            if let Some(stats) = confidence_interval(&at) {
                rows.push(SummaryRow {
                    method,
                    metric: "smoothed_return".into(),
                    episode: Some(ep + 1),
                    stats,
                });
            }
        }
        let fractions: Vec<f64> = runs.iter().map(|r| r.pruned_fraction).collect();
        let reached: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.episodes_to_threshold.map(|e| e as f64))
            .collect();
        for (metric, samples) in [("pruned_fraction", fractions), ("episodes_to_threshold", reached)] {
            if let Some(stats) = confidence_interval(&samples) {
                rows.push(SummaryRow {
                    method,
                    metric: metric.into(),
                    episode: None,
                    stats,
                });
            }
        }
    }
    rows
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn curves_csv(results: &[RunResult], window: usize) -> String {
    let mut out = String::from("method,run,episode,return,smoothed\n");
    for r in results {
        let returns = r.curve.returns();
        for (i, (ret, sm)) in returns.iter().zip(smooth(&returns, window)).enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", r.method.label(), r.run, i + 1, ret, sm);
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,metric,episode,mean,std,ci_low,ci_high,n\n");
    for row in rows {
        let ep = row.episode.map(|e| e.to_string()).unwrap_or_default();
        let s = &row.stats;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.method.label(),
            row.metric,
            ep,
            s.mean,
            s.std,
            s.ci_low,
            s.ci_high,
            s.n
        );
    }
    out
}

pub fn heatmap_export_csv(results: &[RunResult], layout: Option<(usize, usize)>) -> String {
    let mut out = String::from("method,run,state_index,row,col,remaining_actions\n");
    for r in results {
        let Some(remaining) = &r.per_state_remaining else {
            continue;
        };
        let stats = PruningStats {
            pruned_count: 0,
            pruned_fraction: r.pruned_fraction,
            per_state_remaining: remaining.clone(),
        };
        for (s, coords, left) in heatmap_rows(&stats, layout) {
            let (row, col) = coords.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
            let _ = writeln!(out, "{},{},{s},{row},{col},{left}", r.method.label(), r.run);
        }
    }
    out
}

pub fn timings_csv(results: &[RunResult]) -> String {
    let mut out = String::from("method,run,seconds\n");
    for r in results {
        if let Some(t) = r.bound_iteration_time {
            let _ = writeln!(out, "{},{},{t:.3}", r.method.label(), r.run);
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
struct SeedRecord {
    sbf: usize,
    run: usize,
    bundle_seed: u64,
    learn_seed: u64,
}

#[derive(Clone, Debug, Serialize)]
struct ResolvedConfig<'a> {
    artifact_version: &'a str,
    config: &'a ExperimentConfig,
    sbf_levels: Vec<usize>,
    prune_delta: Option<f64>,
    threshold_rule: String,
    seeds: Vec<SeedRecord>,
}

/// Writes the artifact set. With a single `(sbf, noise)` setting the CSVs land
/// directly in `out_dir`; otherwise each setting gets its own subdirectory.
/// `config.json` always sits at the top.
pub fn export(cfg: &ExperimentConfig, results: &[RunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mkdir = |dir: &Path| {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })
    };
    mkdir(out_dir)?;
    let layout = build_bundle(cfg, cfg.sbf_levels()[0], 0)?.layout;
    let settings = cfg.settings();
    let mut written = Vec::new();
    for setting in &settings {
        let dir = if settings.len() == 1 {
            out_dir.to_path_buf()
        } else {
            out_dir.join(setting.dir_name())
        };
        mkdir(&dir)?;
        let subset: Vec<RunResult> = results
            .iter()
            .filter(|r| r.sbf == setting.sbf && r.noise == setting.noise)
            .cloned()
            .collect();
        let files = [
            ("curves.csv", curves_csv(&subset, cfg.smoothing_window)),
            ("summary.csv", summary_csv(&summarize(&subset, cfg.smoothing_window))),
            ("pruning_heatmap.csv", heatmap_export_csv(&subset, layout)),
            ("timings.csv", timings_csv(&subset)),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            write_file(&path, &body)?;
            written.push(path);
        }
    }
    let resolved = ResolvedConfig {
        artifact_version: ARTIFACT_VERSION,
        config: cfg,
        sbf_levels: cfg.sbf_levels(),
        prune_delta: cfg.prune.map(|p| p.delta),
        threshold_rule: format!(
            "first episode whose trailing mean over {} episodes reaches optimal - {} * |optimal|",
            cfg.smoothing_window, cfg.threshold_tolerance
        ),
        seeds: cfg
            .sbf_levels()
            .into_iter()
            .flat_map(|sbf| {
                (0..cfg.runs).map(move |run| SeedRecord {
                    sbf,
                    run,
                    bundle_seed: bundle_seed(cfg.master_seed, sbf, run),
                    learn_seed: learn_seed(cfg.master_seed, sbf, run),
                })
            })
            .collect(),
    };
    let path = out_dir.join("config.json");
    let body = serde_json::to_string_pretty(&resolved).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &(body + "\n"))?;
    written.push(path);
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyCheck {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Checks the bound-theory invariants on one bundle.
pub fn verify_bundle(bundle: &DomainBundle, solve: &SolveConfig) -> Result<Vec<PropertyCheck>> {
    let mut checks = Vec::new();
    let violations = bundle.validate();
    checks.push(PropertyCheck::new(
        "bundle_valid",
        violations.is_empty(),
        format!("{} violations", violations.len()),
    ));
    if !violations.is_empty() {
        return Ok(checks);
    }
    let prepared = Prepared::new(bundle.clone(), solve)?;
    let mdp = &bundle.mdp;
    let gamma = mdp.gamma();
    let tol = 2.0 * solve.epsilon / (1.0 - gamma);

    let mut worst = 0.0f64;
    for src in &prepared.sources {
        let neg = value_iteration(mdp, &src.rewards.negated(), solve)?;
        let mu = q_mu(mdp, &src.rewards, solve)?;
        worst = worst.max(mu.sup_distance(&neg.map(|v| -v)));
    }
    checks.push(PropertyCheck::new(
        "worst_policy_identity",
        worst <= 1e-9,
        format!("max deviation {worst:.3e}"),
    ));

    let qm = prepared.qm_bounds(solve, None)?;
    let contract = |deltas: &[f64]| deltas.windows(2).all(|w| w[1] <= gamma * w[0] + 1e-12);
    checks.push(PropertyCheck::new(
        "qm_contraction",
        contract(&qm.ub_deltas) && contract(&qm.lb_deltas),
        format!("{} sweeps", qm.iterations),
    ));
    let outside = qm.count_outside(&prepared.q_star, tol);
    checks.push(PropertyCheck::new(
        "qm_brackets_optimum",
        outside == 0,
        format!("{outside} entries outside"),
    ));

    let kind = InitKind::auto(&bundle.combination);
    let init = prepared.init_bounds(kind, None)?;
    let outside = init.count_outside(&prepared.q_star, 1e-9);
    checks.push(PropertyCheck::new(
        "init_brackets_optimum",
        outside == 0 || init.approximate,
        format!("{kind:?} init, {outside} entries outside{}", if init.approximate { " (approximate)" } else { "" }),
    ));

    let mqm = mqm_iterate(&bundle.lite(), &prepared.target, gamma, &init, solve, None)?;
    checks.push(PropertyCheck::new(
        "mqm_delta_contraction",
        contract(&mqm.ub_deltas) && contract(&mqm.lb_deltas),
        format!("{} sweeps", mqm.iterations),
    ));
    let monotone = mqm
        .ub
        .values()
        .iter()
        .zip(init.ub.values())
        .all(|(new, old)| new <= old)
        && mqm.lb.values().iter().zip(init.lb.values()).all(|(new, old)| new >= old);
    checks.push(PropertyCheck::new("mqm_monotone", monotone, "final tables versus initialization"));

    let delta = default_delta(solve.epsilon, gamma);
    let mask = prune_actions(&mqm, &PruneConfig::new(delta)?);
    let restricted = value_iteration_masked(mdp, &prepared.target, &mask, solve)?;
    let value_gap = mdp
        .non_terminal_states()
        .map(|s| (restricted.state_value_masked(s, mask.allowed(s)) - prepared.q_star.state_value(s)).abs())
        .fold(0.0, f64::max);
    let lost = prepared.optimal_action_lost(&mask, tol);
    let preserved = value_gap <= tol && lost == 0;
    checks.push(PropertyCheck::new(
        "pruning_preserves_optimality",
        preserved || mqm.approximate,
        format!(
            "value gap {value_gap:.3e}, {lost} states lost every optimal action{}",
            if mqm.approximate { " (approximate bounds)" } else { "" }
        ),
    ));

    let noisy = prepared.mqm_bounds(kind, solve, Some(NoiseRange::symmetric(0.1)))?;
    let noisy_mask = prune_actions(&noisy, &PruneConfig::new(delta)?);
    let subset = (0..mdp.n_states()).all(|s| mask.allowed(s).iter().all(|a| noisy_mask.allowed(s).contains(a)));
    checks.push(PropertyCheck::new(
        "noise_never_prunes_more",
        subset,
        "noise 0.1 versus noise-free pruning",
    ));
    Ok(checks)
}
