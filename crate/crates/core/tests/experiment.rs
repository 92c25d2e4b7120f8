//! End-to-end harness behavior on small configurations.

use std::time::Instant;

use lobisarl::agents::AgentKind;
use lobisarl::harness::{
    emit_outputs, normalize_returns, read_records, records_csv, run_experiment, summarize, ExperimentConfig,
    RECORDS_HEADER,
};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        num_envs: 3,
        training_episodes: 2,
        ..ExperimentConfig::default()
    }
}

#[test]
fn single_random_seed_is_one_fast_record() {
    let cfg = ExperimentConfig {
        num_envs: 1,
        agents: vec![AgentKind::Random],
        ..ExperimentConfig::default()
    };
    let clock = Instant::now();
    let outcome = run_experiment(&cfg, 0..1, 1).unwrap();
    assert!(clock.elapsed().as_secs_f64() < 1.0, "took {:?}", clock.elapsed());
    assert_eq!(outcome.records.len(), 1);
    assert_eq!(outcome.records[0].agent, AgentKind::Random);
    assert_eq!(outcome.records[0].episode, cfg.training_episodes);
}

#[test]
fn record_count_is_seeds_times_episodes_times_agents() {
    let cfg = ExperimentConfig {
        episodes_per_env: 2,
        ..small()
    };
    let outcome = run_experiment(&cfg, 0..3, 1).unwrap();
    assert_eq!(
        outcome.records.len(),
        outcome.completed_seeds.len() * 2 * AgentKind::ALL.len()
    );
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let cfg = small();
    let one = run_experiment(&cfg, 0..3, 1).unwrap();
    let three = run_experiment(&cfg, 0..3, 3).unwrap();
    assert_eq!(records_csv(&one.records).unwrap(), records_csv(&three.records).unwrap());
}

#[test]
fn identical_configs_write_identical_files() {
    let cfg = small();
    let mut texts = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_experiment(&cfg, 0..3, 2).unwrap();
        let (records, excluded) = normalize_returns(&outcome.records).unwrap();
        let summary = summarize(&records).unwrap();
        let paths = emit_outputs(dir.path(), &cfg, &outcome, &records, &excluded, &summary, true).unwrap();
        let csv = std::fs::read_to_string(&paths.records).unwrap();
        assert!(csv.starts_with(&format!("{RECORDS_HEADER}\n")));
        assert!(paths.plot.as_ref().unwrap().exists());
        assert_eq!(read_records(&paths.records).unwrap().len(), records.len());
        let back = ExperimentConfig::load(&paths.config).unwrap();
        assert_eq!(back, cfg);
        texts.push((csv, std::fs::read_to_string(&paths.summary).unwrap()));
    }
    assert_eq!(texts[0], texts[1]);
}

#[test]
fn unsafe_rows_normalize_exactly() {
    let outcome = run_experiment(&small(), 0..3, 1).unwrap();
    let (records, _) = normalize_returns(&outcome.records).unwrap();
    let unsafe_row = summarize(&records)
        .unwrap()
        .into_iter()
        .find(|r| r.agent == AgentKind::Unsafe)
        .unwrap();
    assert_eq!((unsafe_row.return_mean, unsafe_row.return_std), (1.0, 0.0));
}
