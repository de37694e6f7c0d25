use std::fs;

use qmanip::domains::DomainKind;
use qmanip::harness::{export, run_experiment, ExperimentConfig, Method};

fn small(kind: DomainKind, methods: &[Method]) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(kind, methods.to_vec());
    cfg.domain.sbf = vec![1];
    cfg.runs = 3;
    cfg.learn.episodes = 20;
    cfg.learn.t_max = 40;
    cfg
}

#[test]
fn export_writes_config_and_tables() {
    let cfg = small(DomainKind::FrozenLake, &[Method::Ql, Method::Mqm]);
    let results = run_experiment(&cfg).unwrap();
    assert_eq!(results.len(), 6);
    let dir = tempfile::tempdir().unwrap();
    let files = export(&cfg, &results, dir.path()).unwrap();
    for name in ["config.json", "curves.csv", "summary.csv", "pruning_heatmap.csv", "timings.csv"] {
        assert!(files.iter().any(|f| f.ends_with(name)), "{name} missing");
    }
    let heat = fs::read_to_string(dir.path().join("pruning_heatmap.csv")).unwrap();
    // Only MQM prunes: 3 runs × 36 states.
    assert_eq!(heat.lines().count(), 1 + 3 * 36);
    let config: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config["sbf_levels"], serde_json::json!([1]));
}

#[test]
fn results_do_not_depend_on_thread_scheduling() {
    let cfg = small(DomainKind::Autogen, &[Method::Ql, Method::Sfql, Method::Sqb]);
    let a = run_experiment(&cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| run_experiment(&cfg).unwrap());
    assert_eq!(a, b);
}
