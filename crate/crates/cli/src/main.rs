use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use qmanip::bounds::{CombinationSpec, NoiseRange, PruneConfig};
use qmanip::domains::{BundleDocument, DomainBundle, DomainKind};
use qmanip::harness::{bounds_report, export, run_experiment, verify_bundle, ExperimentConfig, InitKind, Method, Prepared};
use qmanip::solve::SolveConfig;
use qmanip::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "qmanip", version, about = "Bound, prune and learn target tasks from source behaviors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a domain bundle.
    Gen {
        #[arg(long)]
        domain: String,
        #[arg(long)]
        sbf: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use `(R1 + R2 + ...)^n` as the target instead of the plain sum.
        #[arg(long)]
        exponent: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute bounds, the pruned action mask and pruning statistics.
    Bounds {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, value_enum)]
        method: BoundMethod,
        #[arg(long, value_enum, default_value_t = BoundInit::Linear)]
        init: BoundInit,
        #[arg(long, allow_hyphen_values = true)]
        noise_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        noise_max: Option<f64>,
        /// Pruning threshold; defaults to 2εγ/(1−γ).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
        #[arg(long, default_value_t = 100_000)]
        max_sweeps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a configured experiment and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the bound invariants on a bundle.
    Verify {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        epsilon: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundMethod {
    Qm,
    Mqm,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundInit {
    Naive,
    Linear,
    Nonlinear,
}

impl From<BoundInit> for InitKind {
    fn from(value: BoundInit) -> Self {
        match value {
            BoundInit::Naive => InitKind::Naive,
            BoundInit::Linear => InitKind::Linear,
            BoundInit::Nonlinear => InitKind::Nonlinear,
        }
    }
}

enum Failure {
    Lib(Error),
    PropertiesFailed(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::NonConvergence { .. } => 2,
        Error::Io { .. } => 3,
        _ => 1,
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let body = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, body + "\n").map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_bundle(path: &Path) -> Result<DomainBundle, Error> {
    let text = read_text(path)?;
    let doc: BundleDocument = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let bundle = doc.into_bundle()?;
    let violations = bundle.validate();
    if !violations.is_empty() {
        return Err(Error::Validation(violations));
    }
    Ok(bundle)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen {
            domain,
            sbf,
            seed,
            exponent,
            out,
        } => {
            let kind = DomainKind::parse(&domain)?;
            let mut bundle = kind.build(sbf, &mut ChaCha8Rng::seed_from_u64(seed))?;
            if let Some(n) = exponent {
                let ones = vec![1.0; bundle.source_rewards.len()];
                bundle = bundle.with_combination(CombinationSpec::power_of_sum(ones, n));
            }
            write_json(&out, &BundleDocument::from_bundle(&bundle)?)?;
            println!(
                "{}: {} states, {} actions, sbf {} -> {}",
                bundle.name,
                bundle.mdp.n_states(),
                bundle.mdp.n_actions(),
                qmanip::mdp::sbf(&bundle.mdp)?,
                out.display()
            );
        }
        Command::Bounds {
            bundle,
            method,
            init,
            noise_min,
            noise_max,
            delta,
            epsilon,
            max_sweeps,
            out,
        } => {
            let solve = SolveConfig::new(epsilon, max_sweeps)?;
            let noise = match (noise_min, noise_max) {
                (None, None) => None,
                (lo, hi) => Some(NoiseRange::new(lo.unwrap_or(0.0), hi.unwrap_or(0.0))?),
            };
            let prune = delta.map(PruneConfig::new).transpose()?;
            let prepared = Prepared::new(load_bundle(&bundle)?, &solve)?;
            let method = match method {
                BoundMethod::Qm => Method::Qm,
                BoundMethod::Mqm => Method::Mqm,
            };
            let report = bounds_report(&prepared, method, init.into(), noise, &solve, prune)?;
            write_json(&out, &report)?;
            println!(
                "{}: {} sweeps, max gap {:.6}, pruned {} ({:.2}%){}",
                report.bounds.provenance,
                report.bounds.iterations,
                report.bounds.max_gap(),
                report.stats.pruned_count,
                100.0 * report.stats.pruned_fraction,
                if report.bounds.approximate { ", approximate" } else { "" }
            );
        }
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_json(&read_text(&config)?)?;
            let results = run_experiment(&cfg)?;
            let files = export(&cfg, &results, &out)?;
            println!("{} results, {} files written to {}", results.len(), files.len(), out.display());
        }
        Command::Verify { bundle, epsilon } => {
            let solve = SolveConfig::new(epsilon, SolveConfig::default().max_sweeps)?;
            let checks = verify_bundle(&load_bundle(&bundle)?, &solve)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Failure::PropertiesFailed(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::PropertiesFailed(n)) => {
            eprintln!("{n} properties failed");
            ExitCode::from(1)
        }
    }
}
