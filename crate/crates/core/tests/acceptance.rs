//! Acceptance criteria with one PASS/FAIL line each; exits nonzero if any fails.
//!
//! Criteria 1-3 share a single default 100-seed run executed with four workers.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lobisarl::agents::AgentKind;
use lobisarl::env::{GenerationConfig, Generator, GridWorld};
use lobisarl::harness::checks::{
    certify_world, confidence_coverage, long_term_safety, mle_closed_form, mle_grid_agreement, rollout_gap_bound,
    step_drift_bound, CheckOutcome,
};
use lobisarl::harness::{
    default_seeds, normalize_returns, run_experiment, summarize, ExperimentConfig, RunRecord, SummaryRow,
};

struct DefaultRun {
    records: Vec<RunRecord>,
    summary: Vec<SummaryRow>,
    elapsed: Duration,
    completed: usize,
}

fn default_run() -> &'static DefaultRun {
    static RUN: OnceLock<DefaultRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        let clock = Instant::now();
        let outcome = run_experiment(&cfg, default_seeds(&cfg), 4).expect("default run");
        let elapsed = clock.elapsed();
        let (records, _) = normalize_returns(&outcome.records).expect("normalization");
        let summary = summarize(&records).expect("summary");
        DefaultRun {
            records,
            summary,
            elapsed,
            completed: outcome.completed_seeds.len(),
        }
    })
}

fn row(run: &DefaultRun, kind: AgentKind) -> &SummaryRow {
    run.summary.iter().find(|r| r.agent == kind).expect("agent ran")
}

type Verdict = (bool, String);

fn suite(outcome: CheckOutcome) -> Verdict {
    (outcome.passed, format!("{}: {}", outcome.name, outcome.detail))
}

fn worlds(delta: f64, n: u64) -> Vec<GridWorld> {
    let cfg = GenerationConfig {
        delta,
        ..GenerationConfig::default()
    };
    let g = Generator::new(cfg).unwrap();
    (0..n).map(|s| g.generate(s).unwrap()).collect()
}

fn c1_lobisarl_evaluation_episodes_are_violation_free() -> Verdict {
    let run = default_run();
    let lobi: Vec<&RunRecord> = run.records.iter().filter(|r| r.agent == AgentKind::LoBiSaRL).collect();
    let clean = lobi.iter().filter(|r| r.unsafe_actions == 0).count();
    let fallbacks: usize = lobi.iter().map(|r| r.fallback_events).sum();
    let fast = run.elapsed <= Duration::from_secs(600);
    (
        run.completed == 100 && clean >= 99 && fast,
        format!(
            "{clean}/{} seeds with zero unsafe actions (need 99), {fallbacks} fallback events, {:.1}s with 4 jobs (limit 600s)",
            lobi.len(),
            run.elapsed.as_secs_f64()
        ),
    )
}

fn c2_baseline_ordering() -> Verdict {
    let run = default_run();
    let [rand, unsafe_, linear, inst, lobi] = AgentKind::ALL.map(|k| row(run, k));
    let unsafe_order = lobi.unsafe_mean < inst.unsafe_mean
        && inst.unsafe_mean < linear.unsafe_mean
        && lobi.unsafe_mean < rand.unsafe_mean;
    let return_order = rand.return_mean < lobi.return_mean
        && lobi.return_mean <= inst.return_mean
        && inst.return_mean < unsafe_.return_mean
        && unsafe_.return_mean == 1.0;
    let random_seeds = rand.seeds_with_violations;
    println!("measured: Random has unsafe actions on {random_seeds}/100 seeds (not a criterion)");
    (
        unsafe_order && return_order,
        format!(
            "unsafe LoBiSaRL {:.2} < Inst {:.2} < Linear {:.2}, LoBiSaRL < Random {:.2}; return Random {:.3} < LoBiSaRL {:.3} <= Inst {:.3} < Unsafe {:.3}",
            lobi.unsafe_mean, inst.unsafe_mean, linear.unsafe_mean, rand.unsafe_mean, rand.return_mean, lobi.return_mean, inst.return_mean, unsafe_.return_mean
        ),
    )
}

fn c3_unsafe_rows_normalize_to_one() -> Verdict {
    let run = default_run();
    let u = row(run, AgentKind::Unsafe);
    let exact = run
        .records
        .iter()
        .filter(|r| r.agent == AgentKind::Unsafe)
        .all(|r| r.normalized_return == 1.0);
    (
        exact && u.return_mean == 1.0 && u.return_std == 0.0,
        format!(
            "Unsafe normalized return {:.2} +- {:.2} over {} episodes",
            u.return_mean, u.return_std, u.episodes
        ),
    )
}

fn c4_mle_matches_closed_form_and_grid_search() -> Verdict {
    let w = mle_closed_form().unwrap();
    let gap = (w - 3f64.ln()).abs();
    let grid = mle_grid_agreement(50, 2e-3, 4).unwrap();
    (
        gap <= 1e-6 && grid.passed,
        format!("|w_hat - ln 3| = {gap:.2e} (tolerance 1e-6); {}", grid.detail),
    )
}

fn c5_confidence_interval_coverage() -> Verdict {
    suite(confidence_coverage(500, 4, 200, 0.1, 0.86, 5).unwrap())
}

fn c6_rollout_gap_bound() -> Verdict {
    let cfg = GenerationConfig::default();
    suite(rollout_gap_bound(&worlds(cfg.delta, 10), cfg.l_phi, 1000, 6).unwrap())
}

fn c7_step_drift_bound() -> Verdict {
    let cfg = GenerationConfig::default();
    suite(step_drift_bound(&worlds(cfg.delta, 10), cfg.l_phi, 100_000, 7).unwrap())
}

fn c8_long_term_safety_monte_carlo() -> Verdict {
    let cfg = GenerationConfig::default();
    suite(long_term_safety(&worlds(0.2, 10), cfg.l_phi, 0.2, 1000, 8).unwrap())
}

fn c9_environment_certificates() -> Verdict {
    let cfg = GenerationConfig::default();
    let mut failures = Vec::new();
    let mut worst_l = 0.0f64;
    let mut slip = Vec::new();
    for world in worlds(cfg.delta, 5) {
        let cert = certify_world(&world, cfg.l_phi, 100_000, 9 + world.seed()).unwrap();
        worst_l = worst_l.max(cert.l_phi_empirical);
        slip.push(cert.slip_frequency);
        failures.extend(cert.checks().into_iter().filter(|c| !c.passed).map(|c| c.line()));
    }
    (
        failures.is_empty(),
        format!(
            "5 worlds: max L_phi {worst_l:.4} <= {}, slip frequencies {slip:.4?}; failures {failures:?}",
            cfg.l_phi
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Verdict); 9] = [
        (1, c1_lobisarl_evaluation_episodes_are_violation_free),
        (2, c2_baseline_ordering),
        (3, c3_unsafe_rows_normalize_to_one),
        (4, c4_mle_matches_closed_form_and_grid_search),
        (5, c5_confidence_interval_coverage),
        (6, c6_rollout_gap_bound),
        (7, c7_step_drift_bound),
        (8, c8_long_term_safety_monte_carlo),
        (9, c9_environment_certificates),
    ];
    let mut failed = 0;
    for (id, check) in criteria {
        let (passed, detail) = check();
        println!("criterion {id}: {} {detail}", if passed { "PASS" } else { "FAIL" });
        failed += usize::from(!passed);
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
