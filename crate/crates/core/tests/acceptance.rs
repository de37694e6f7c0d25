//! Acceptance suite. Runs as a plain binary so every criterion prints one
//! `PASS`/`FAIL` line regardless of output capture; exits non-zero when any
//! criterion fails.

mod common;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use common::*;
use qmanip::bounds::{
    combine_rewards, default_delta, mqm_init_linear, mqm_iterate, prune_actions, qm_iterate, qm_iterate_from,
    BoundModel, BoundPair, CombinationSpec, NoiseRange, PruneConfig,
};
use qmanip::domains::{three_state_mdp, DomainKind};
use qmanip::harness::{run_experiment, ExperimentConfig, InitKind, Method, Prepared};
use qmanip::learn::{evaluate_policy_return, expected_return, LearnConfig};
use qmanip::mdp::{extract_lite_model, ActionMask, QTable, TabularMdp};
use qmanip::solve::{greedy_policy, q_mu, value_iteration, value_iteration_masked, Kernel, SolveConfig};
use rand::Rng;

type Outcome = Result<String, String>;

fn solve() -> SolveConfig {
    SolveConfig::default()
}

fn tight() -> SolveConfig {
    SolveConfig::new(1e-11, 200_000).unwrap()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: qmanip::Error) -> String {
    e.to_string()
}

fn zero_terminals(mdp: &TabularMdp, q: QTable) -> QTable {
    QTable::from_fn(mdp.n_states(), mdp.n_actions(), |s, a| if mdp.is_terminal(s) { 0.0 } else { q.get(s, a) })
}

fn contracts(deltas: &[f64], gamma: f64) -> bool {
    deltas.windows(2).all(|w| w[1] <= gamma * w[0] + 1e-12)
}

fn bundle(kind: DomainKind, sbf: usize, seed: u64) -> Result<Prepared, String> {
    let b = kind.build(sbf, &mut rng(seed)).map_err(err)?;
    Prepared::new(b, &solve()).map_err(err)
}

fn pruned_mask(p: &Prepared, method: Method, noise: Option<NoiseRange>) -> Result<ActionMask, String> {
    let cfg = solve();
    let bounds = match method {
        Method::Qm => p.qm_bounds(&cfg, noise),
        _ => p.mqm_bounds(InitKind::Linear, &cfg, noise),
    }
    .map_err(err)?;
    let prune = PruneConfig::new(default_delta(cfg.epsilon, p.gamma())).map_err(err)?;
    Ok(prune_actions(&bounds, &prune))
}

fn pruned_fraction(p: &Prepared, mask: &ActionMask) -> f64 {
    qmanip::bounds::pruning_stats(mask, &p.bundle.mdp).pruned_fraction
}

fn sbf_triple(kind: DomainKind) -> [usize; 3] {
    let l = kind.sbf_levels();
    [l[0], l[l.len() / 2], l[l.len() - 1]]
}

fn worst_policy_identity() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mdp = random_mdp(1000 + seed, 60, 4, 4);
        let r = random_rewards(&mdp, seed);
        let neg = r.map(|x| -x);
        let mu = q_mu(&mdp, &r, &tight()).map_err(err)?;
        let star_neg = value_iteration(&mdp, &neg, &tight()).map_err(err)?;
        let sum = mu.zip_with(&star_neg, |a, b| a + b);
        worst = worst.max(sum.values().iter().fold(0.0f64, |m, x| m.max(x.abs())));
        worst = worst.max(mu.sup_distance(&worst_policy_values(&mdp, &r, 3000)));
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max |Q^mu_R + Q*_-R| = {worst:e}"))?;
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max residual {worst:.1e} in {secs:.2} s"))
}

fn qm_contraction_and_uniqueness() -> Outcome {
    let mut worst_gap = 0.0f64;
    for seed in 0..20 {
        let mdp = random_mdp(2000 + seed, 40, 4, 4);
        let r = random_rewards(&mdp, seed);
        let lite = extract_lite_model(&mdp);
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let cfg = tight();
        let a = qm_iterate(&lite, &r, mdp.gamma(), &cfg, None).map_err(err)?;
        ensure(contracts(&a.ub_deltas, mdp.gamma()) && contracts(&a.lb_deltas, mdp.gamma()), || {
            format!("seed {seed}: sweep deltas did not contract")
        })?;
        let ub0 = random_table(n, m, seed ^ 0xA, 100.0);
        let lb0 = random_table(n, m, seed ^ 0xB, 100.0);
        let b = qm_iterate_from(&lite, &r, mdp.gamma(), ub0, lb0, &cfg, None).map_err(err)?;
        worst_gap = worst_gap.max(a.ub.sup_distance(&b.ub)).max(a.lb.sup_distance(&b.lb));
    }
    ensure(worst_gap <= 1e-8, || format!("fixed points differ by {worst_gap:e}"))?;
    Ok(format!("20 MDPs contract; fixed points agree within {worst_gap:.1e}"))
}

fn qm_ordering() -> Outcome {
    let mut sweeps = 0;
    for seed in 0..20 {
        let mdp = random_mdp(3000 + seed, 40, 4, 4);
        let r = random_rewards(&mdp, seed);
        let model = BoundModel::new(&extract_lite_model(&mdp), &r, mdp.gamma()).map_err(err)?;
        let kernel = Kernel::new(&mdp, &r).map_err(err)?;
        let start = zero_terminals(&mdp, random_table(mdp.n_states(), mdp.n_actions(), seed, 5.0));
        let (mut ub, mut lb, mut v) = (start.clone(), start.clone(), start);
        for k in 0..300 {
            ub = model.qm_upper(&ub, 0.0);
            lb = model.qm_lower(&lb, 0.0);
            v = kernel.optimal_backup(&v, None);
            let ok = lb
                .values()
                .iter()
                .zip(v.values())
                .zip(ub.values())
                .all(|((l, x), u)| *l <= x + 1e-12 && *x <= u + 1e-12);
            ensure(ok, || format!("seed {seed}: order broken at sweep {k}"))?;
            sweeps += 1;
        }
    }
    Ok(format!("{sweeps} sweeps ordered"))
}

fn mqm_contraction_and_non_expansion() -> Outcome {
    for seed in 0..20 {
        let mdp = random_mdp(4000 + seed, 40, 4, 4);
        let r = random_rewards(&mdp, seed);
        let lite = extract_lite_model(&mdp);
        let init = qmanip::bounds::mqm_init_naive(&lite, &r, mdp.gamma(), None).map_err(err)?;
        let b = mqm_iterate(&lite, &r, mdp.gamma(), &init, &tight(), None).map_err(err)?;
        ensure(contracts(&b.ub_deltas, mdp.gamma()) && contracts(&b.lb_deltas, mdp.gamma()), || {
            format!("seed {seed}: sweep deltas did not contract")
        })?;
    }
    let mut worst = f64::NEG_INFINITY;
    for pair in 0..100u64 {
        let mdp = random_mdp(5000 + pair, 20, 4, 4);
        let r = random_rewards(&mdp, pair);
        let model = BoundModel::new(&extract_lite_model(&mdp), &r, mdp.gamma()).map_err(err)?;
        let (n, m) = (mdp.n_states(), mdp.n_actions());
        let q = random_table(n, m, pair ^ 0x11, 10.0);
        let q_hat = random_table(n, m, pair ^ 0x22, 10.0);
        let gap = q.sup_distance(&q_hat);
        for (a, b) in [
            (model.mqm_upper(&q, 0.0), model.mqm_upper(&q_hat, 0.0)),
            (model.mqm_lower(&q, 0.0), model.mqm_lower(&q_hat, 0.0)),
            (model.qm_upper(&q, 0.0), model.qm_upper(&q_hat, 0.0)),
            (model.qm_lower(&q, 0.0), model.qm_lower(&q_hat, 0.0)),
        ] {
            worst = worst.max(a.sup_distance(&b) - gap);
        }
    }
    ensure(worst <= 1e-12, || format!("expansion by {worst:e}"))?;
    Ok("20 MDPs contract; 100 pairs non-expansive".into())
}

fn three_state_fixed_points() -> Outcome {
    let (mdp, r) = three_state_mdp();
    let lite = extract_lite_model(&mdp);
    let table = |v: [f64; 3]| QTable::from_fn(3, 1, |s, _| v[s]);
    let cfg = tight();

    let init = BoundPair::new(table([10.0, 10.0, 4.0]), table([0.0, 0.0, 0.0]), "test").map_err(err)?;
    let b = mqm_iterate(&lite, &r, mdp.gamma(), &init, &cfg, None).map_err(err)?;
    ensure((b.ub.get(0, 0) - 3.0).abs() <= 1e-9 && (b.ub.get(1, 0) - 3.0).abs() <= 1e-9, || {
        format!("ub = ({}, {})", b.ub.get(0, 0), b.ub.get(1, 0))
    })?;

    let model = BoundModel::new(&lite, &r, mdp.gamma()).map_err(err)?;
    let stuck = table([1.5, 1.5, 1.0]);
    ensure(model.mqm_upper(&stuck, 0.0) == stuck, || "3/2 is not a fixed point".into())?;

    let q = qm_iterate(&lite, &r, mdp.gamma(), &cfg, None).map_err(err)?;
    let vi = value_iteration(&mdp, &r, &cfg).map_err(err)?;
    for s in 0..2 {
        ensure((q.ub.get(s, 0) - 2.0).abs() <= 1e-9 && (q.lb.get(s, 0) - 1.0).abs() <= 1e-9, || {
            format!("state {s}: ub {} lb {}", q.ub.get(s, 0), q.lb.get(s, 0))
        })?;
        ensure((vi.get(s, 0) - 4.0 / 3.0).abs() <= 1e-9, || format!("VI gives {}", vi.get(s, 0)))?;
    }
    ensure(q.brackets(&vi, 1e-12), || "bounds do not bracket 4/3".into())?;
    Ok("ub -> 3, 3/2 fixed, ub 2 / lb 1 around 4/3".into())
}

fn optimality_preservation() -> Outcome {
    let cfg = solve();
    let mut checked = 0;
    for kind in DomainKind::ALL {
        for sbf in sbf_triple(kind) {
            for seed in 0..10 {
                let p = bundle(kind, sbf, 6000 + seed)?;
                let mdp = &p.bundle.mdp;
                let mask = pruned_mask(&p, Method::Mqm, None)?;
                let restricted = value_iteration_masked(mdp, &p.target, &mask, &cfg).map_err(err)?;
                let tol = 2.0 * cfg.epsilon / (1.0 - p.gamma());
                for s in mdp.non_terminal_states() {
                    let best = p.q_star.state_value(s);
                    let got = restricted.state_value_masked(s, mask.allowed(s));
                    ensure((got - best).abs() <= tol, || {
                        format!("{} sbf {sbf} seed {seed} state {s}: {got} vs {best}", kind.name())
                    })?;
                }
                ensure(p.optimal_action_lost(&mask, tol) == 0, || {
                    format!("{} sbf {sbf} seed {seed}: optimal action pruned", kind.name())
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} bundles, zero violations"))
}

fn zero_shot() -> Outcome {
    let cfg = solve();
    for kind in DomainKind::ALL {
        let p = bundle(kind, 1, 7000)?;
        let mdp = &p.bundle.mdp;
        let b = p.qm_bounds(&cfg, None).map_err(err)?;
        let tol = 2.0 * cfg.epsilon / (1.0 - p.gamma());
        ensure(b.max_gap() <= tol, || format!("{}: gap {:e}", kind.name(), b.max_gap()))?;
        let mask = prune_actions(&b, &PruneConfig::new(default_delta(cfg.epsilon, p.gamma())).map_err(err)?);
        let t_max = LearnConfig::default().t_max;
        let pruned = greedy_policy(&b.lb, Some(&mask)).map_err(err)?;
        let optimal = greedy_policy(&p.q_star, None).map_err(err)?;
        let mut env = rng(1);
        let episode = evaluate_policy_return(mdp, &p.target, &pruned, 1, t_max, &mut env).map_err(err)?;
        let best = expected_return(mdp, &p.target, &optimal, t_max).map_err(err)?;
        ensure((episode - best).abs() <= 1e-6, || format!("{}: episode 1 return {episode} vs {best}", kind.name()))?;
    }
    Ok("all four domains collapse and act optimally in episode 1".into())
}

fn pruning_vs_sbf() -> Outcome {
    let mut lines = Vec::new();
    for kind in [DomainKind::DollarEuro, DomainKind::FrozenLake, DomainKind::Racetrack] {
        let mut means = Vec::new();
        for sbf in sbf_triple(kind) {
            let mut total = 0.0;
            for seed in 0..30 {
                let p = bundle(kind, sbf, 8000 + seed)?;
                total += pruned_fraction(&p, &pruned_mask(&p, Method::Mqm, None)?);
            }
            means.push(total / 30.0);
        }
        let rises: Vec<f64> = means.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
        let ok = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.01);
        ensure(ok, || format!("{}: means {means:?}", kind.name()))?;
        lines.push(format!(
            "{} {}",
            kind.name(),
            means.iter().map(|m| format!("{:.1}%", 100.0 * m)).collect::<Vec<_>>().join(">=")
        ));
    }
    Ok(lines.join(", "))
}

fn qm_subset_of_mqm() -> Outcome {
    let kind = DomainKind::DollarEuro;
    let mut violations = 0;
    let mut cases = 0;
    for sbf in kind.sbf_levels() {
        for seed in 0..30 {
            let p = bundle(kind, sbf, 9000 + seed)?;
            let qm = pruned_mask(&p, Method::Qm, None)?;
            let mqm = pruned_mask(&p, Method::Mqm, None)?;
            for s in 0..p.bundle.mdp.n_states() {
                violations += mqm.allowed(s).iter().filter(|a| !qm.allowed(s).contains(a)).count();
            }
            cases += 1;
        }
    }
    ensure(violations == 0, || format!("{violations} actions pruned by Q-M but kept by M-Q-M"))?;
    Ok(format!("{cases} bundles, Q-M pruned set always inside M-Q-M's"))
}

fn noise_trend() -> Outcome {
    let levels = [0.0, 0.05, 0.1, 0.2, 0.4];
    for seed in 0..10 {
        let p = bundle(DomainKind::Autogen, 1, 10_000 + seed)?;
        let mut previous = f64::INFINITY;
        for &x in &levels {
            let noise = (x > 0.0).then(|| NoiseRange::symmetric(x));
            let f = pruned_fraction(&p, &pruned_mask(&p, Method::Mqm, noise)?);
            ensure(f <= previous, || format!("seed {seed}: {f} after {previous} at noise {x}"))?;
            previous = f;
        }
    }
    Ok(format!("10 seeds non-increasing over noise {levels:?}"))
}

fn convergence_ordering() -> Outcome {
    let mut lines = Vec::new();
    for kind in [DomainKind::DollarEuro, DomainKind::Autogen] {
        let mut cfg = ExperimentConfig::new(kind, [Method::Ql, Method::Mqm]);
        cfg.domain.sbf = vec![1];
        cfg.master_seed = 11;
        let results = run_experiment(&cfg).map_err(err)?;
        let cap = cfg.learn.episodes + 1;
        let episodes = |m: Method| -> Vec<usize> {
            let mut rs: Vec<_> = results.iter().filter(|r| r.method == m).collect();
            rs.sort_by_key(|r| r.run);
            rs.iter().map(|r| r.episodes_to_threshold.unwrap_or(cap)).collect()
        };
        let (ql, mqm) = (episodes(Method::Ql), episodes(Method::Mqm));
        let wins = ql.iter().zip(&mqm).filter(|(q, m)| m <= q).count();
        let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
        let (mq, mm) = (mean(&ql), mean(&mqm));
        ensure(wins >= 28 && mm < mq, || {
            format!("{}: M-Q-M <= QL in {wins}/30, means {mm:.1} vs {mq:.1}", kind.name())
        })?;
        lines.push(format!("{} {wins}/30, mean {mm:.1} vs {mq:.1}", kind.name()));
    }
    Ok(lines.join(", "))
}

fn timing() -> Outcome {
    let cfg = solve();
    let mut csv = String::from("domain,sbf,seconds\n");
    let mut slowest = 0.0f64;
    for kind in DomainKind::ALL {
        let sbf = *kind.sbf_levels().last().unwrap();
        let p = bundle(kind, sbf, 12_000)?;
        let started = Instant::now();
        p.qm_bounds(&cfg, None).map_err(err)?;
        let secs = started.elapsed().as_secs_f64();
        slowest = slowest.max(secs);
        writeln!(csv, "{},{sbf},{secs:.3}", kind.name()).unwrap();
        ensure(secs < 5.0, || format!("{} took {secs:.2} s", kind.name()))?;
    }
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let path = dir.join("timings.csv");
    fs::write(&path, csv).map_err(|e| e.to_string())?;
    Ok(format!("slowest {slowest:.3} s, written to {}", path.display()))
}

fn linear_init_validity() -> Outcome {
    let cfg = tight();
    let mut outside = 0;
    for seed in 0..50u64 {
        let mdp = random_mdp(13_000 + seed, 30, 4, 4);
        let n = 1 + (seed % 3) as usize;
        let mut coeff_rng = rng(seed ^ 0xC0);
        let coeffs: Vec<f64> = (0..n).map(|_| coeff_rng.gen_range(0.0..3.0)).collect();
        let sources: Vec<_> = (0..n as u64).map(|i| random_rewards(&mdp, seed * 7 + i)).collect();
        let target = combine_rewards(&sources, &CombinationSpec::linear(coeffs.clone())).map_err(err)?;
        let stars = sources.iter().map(|s| value_iteration(&mdp, s, &cfg)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let mus = sources.iter().map(|s| q_mu(&mdp, s, &cfg)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let init = mqm_init_linear(&stars, &mus, &coeffs).map_err(err)?;
        outside += init.count_outside(&optimal_values(&mdp, &target, 3000), 1e-9);
    }
    ensure(outside == 0, || format!("{outside} entries outside the bounds"))?;
    Ok("50 MDPs, zero violations".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 13] = [
        ("worst-policy identity", worst_policy_identity),
        ("Q-M contraction and uniqueness", qm_contraction_and_uniqueness),
        ("Q-M ordering around value iteration", qm_ordering),
        ("M-Q-M contraction and non-expansion", mqm_contraction_and_non_expansion),
        ("three-state fixed points", three_state_fixed_points),
        ("optimality preservation", optimality_preservation),
        ("zero-shot at SBF 1", zero_shot),
        ("pruning falls with SBF", pruning_vs_sbf),
        ("Q-M prunes a subset of M-Q-M", qm_subset_of_mqm),
        ("pruning falls with noise", noise_trend),
        ("M-Q-M converges before QL", convergence_ordering),
        ("Q-M timing", timing),
        ("linear initialization brackets", linear_init_validity),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
