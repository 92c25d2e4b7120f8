#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ops::Range;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use lobisarl::agents::{Agent, AgentKind};
use lobisarl::env::Generator;
use lobisarl::harness::checks::{
    certify_world, confidence_coverage, long_term_safety, mle_closed_form, mle_grid_agreement, rollout_gap_bound,
    step_drift_bound, CheckOutcome,
};
use lobisarl::harness::{
    agent_rng, default_seeds, emit_outputs, format_table, initial_rng, normalize_returns, run_experiment, summarize,
    ExperimentConfig,
};
use lobisarl::Error;

#[derive(Parser)]
#[command(
    name = "lobisarl",
    version,
    about = "Safe RL from binary safety feedback on grid worlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the true transition model instead of learned estimates.
    #[arg(long)]
    known_dynamics: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write records, summary and config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Seed range `a..b` (end exclusive); overrides base_seed and num_envs.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Range<u64>>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Also render an SVG bar chart.
        #[arg(long)]
        plot: bool,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Trace one agent's evaluation episode on one seed.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "LoBiSaRL")]
        agent: AgentKind,
    },
    /// Check feature, dynamics and slip properties of generated worlds.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_seeds, default_value = "0..1")]
        seeds: Range<u64>,
        /// Slip trials per seed.
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
    /// Run the built-in numerical checks.
    Selftest {
        /// Full-size checks instead of the quick variants.
        #[arg(long)]
        full: bool,
    },
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("expected a..b, got {s:?}"))?;
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start {a:?}: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end {b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty seed range {s}"));
    }
    Ok(a..b)
}

fn load(common: &Common) -> lobisarl::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if common.known_dynamics {
        cfg.known_dynamics = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Aborted { .. } => ExitCode::from(3),
        _ => ExitCode::from(1),
    }
}

fn run(common: Common, seeds: Option<Range<u64>>, out: PathBuf, plot: bool, jobs: usize) -> lobisarl::Result<()> {
    let mut cfg = load(&common)?;
    if let Some(r) = &seeds {
        cfg.base_seed = r.start;
        cfg.num_envs = (r.end - r.start) as usize;
    }
    let clock = Instant::now();
    let outcome = run_experiment(&cfg, default_seeds(&cfg), jobs)?;
    let (records, excluded) = normalize_returns(&outcome.records)?;
    let summary = summarize(&records)?;
    let paths = emit_outputs(&out, &cfg, &outcome, &records, &excluded, &summary, plot)?;
    print!("{}", format_table(&summary));
    println!(
        "seeds completed {} skipped {} rejections {} in {:.1}s",
        outcome.completed_seeds.len(),
        outcome.skipped.len(),
        outcome.rejections,
        clock.elapsed().as_secs_f64()
    );
    for (k, f) in &outcome.training_fallbacks {
        println!("training fallbacks {:<14} {}", k.name(), f);
    }
    println!("wrote {}", paths.records.display());
    Ok(())
}

fn demo(common: Common, seed: u64, kind: AgentKind) -> lobisarl::Result<()> {
    let cfg = load(&common)?;
    let world = Generator::new(cfg.generation())?.generate(seed)?;
    let single = ExperimentConfig {
        agents: vec![kind],
        ..cfg.clone()
    };
    let mut rng = agent_rng(seed, kind.index());
    let initial = world.conservative_rollout(single.init_samples, &mut initial_rng(seed))?;
    let mut agent = Agent::new(kind, &world, &single.agent(), &initial)?;
    for _ in 0..cfg.training_episodes {
        agent.run_episode(&world, &mut rng)?;
    }
    let log = agent.run_episode(&world, &mut rng)?;
    println!(
        "seed {seed} agent {kind} start {} rejections {}",
        world.start(),
        world.rejections()
    );
    println!(
        "{:>3} {:>8} {:>6} {:>7} {:>5} {:>10} {:>10} {:>4} {:>8}",
        "t", "state", "action", "reward", "safe", "ell", "true f", "x", "fallback"
    );
    for r in &log.trajectory {
        let truth = world.f_star(r.state, r.action)?;
        println!(
            "{:>3} {:>8} {:>6} {:>7.3} {:>5} {:>10.3} {:>10.3} {:>4} {:>8}",
            r.t,
            r.state.to_string(),
            r.action.name(),
            r.reward,
            r.safety_label,
            r.ell,
            truth,
            r.x_t,
            r.fallback
        );
    }
    println!(
        "return {:.3} unsafe {} fallbacks {} margin {:.3}",
        log.total_reward(),
        log.unsafe_count(),
        log.fallback_count(),
        agent.margin(&log)?
    );
    Ok(())
}

/// Sizes of the numerical suites.
struct SuiteSizes {
    worlds: u64,
    grid_datasets: usize,
    coverage_instances: usize,
    trajectories: usize,
    transitions: usize,
    safety_rollouts: usize,
    slip_trials: usize,
}

impl SuiteSizes {
    fn new(full: bool) -> Self {
        if full {
            Self {
                worlds: 10,
                grid_datasets: 50,
                coverage_instances: 500,
                trajectories: 1000,
                transitions: 100_000,
                safety_rollouts: 1000,
                slip_trials: 100_000,
            }
        } else {
            Self {
                worlds: 2,
                grid_datasets: 5,
                coverage_instances: 100,
                trajectories: 100,
                transitions: 10_000,
                safety_rollouts: 200,
                slip_trials: 20_000,
            }
        }
    }
}

fn report(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        println!("{}", o.line());
    }
    outcomes.iter().all(|o| o.passed)
}

fn certify(common: Common, seeds: Range<u64>, trials: usize) -> lobisarl::Result<bool> {
    let cfg = load(&common)?;
    let generator = Generator::new(cfg.generation())?;
    let mut ok = true;
    for seed in seeds {
        let world = generator.generate(seed)?;
        let cert = certify_world(&world, cfg.l_phi, trials, seed)?;
        println!(
            "seed {seed}: L_phi {:.6} (configured {}) max ||phi|| {:.12} d_bar {} eta {} L_sharp {} slip {:.4}",
            cert.l_phi_empirical,
            cert.l_phi_configured,
            cert.max_feature_norm,
            cert.d_bar,
            cert.eta,
            cert.l_sharp,
            cert.slip_frequency
        );
        ok &= report(&cert.checks());
    }
    Ok(ok)
}

fn selftest(full: bool) -> lobisarl::Result<bool> {
    let n = SuiteSizes::new(full);
    let cfg = ExperimentConfig::default();
    let generator = Generator::new(cfg.generation())?;
    let worlds = (0..n.worlds)
        .map(|s| generator.generate(s))
        .collect::<lobisarl::Result<Vec<_>>>()?;
    let permissive_worlds = {
        let mut g = cfg.generation();
        g.delta = 0.2;
        let generator = Generator::new(g)?;
        (0..n.worlds)
            .map(|s| generator.generate(s))
            .collect::<lobisarl::Result<Vec<_>>>()?
    };
    let closed = mle_closed_form()?;
    let gap = (closed - 3f64.ln()).abs();
    let mut outcomes = vec![CheckOutcome {
        name: "mle closed form".into(),
        passed: gap <= 1e-6,
        detail: format!("w_hat {closed:.12}, |w_hat - ln 3| = {gap:.2e}"),
    }];
    outcomes.push(mle_grid_agreement(n.grid_datasets, 2e-3, 11)?);
    outcomes.push(confidence_coverage(n.coverage_instances, 4, 200, 0.1, 0.86, 12)?);
    outcomes.push(rollout_gap_bound(&worlds, cfg.l_phi, n.trajectories, 13)?);
    outcomes.push(step_drift_bound(&worlds, cfg.l_phi, n.transitions, 14)?);
    outcomes.push(long_term_safety(
        &permissive_worlds,
        cfg.l_phi,
        0.2,
        n.safety_rollouts,
        15,
    )?);
    outcomes.extend(certify_world(&worlds[0], cfg.l_phi, n.slip_trials, 16)?.checks());
    Ok(report(&outcomes))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run {
            common,
            seeds,
            out,
            plot,
            jobs,
        } => run(common, seeds, out, plot, jobs).map(|()| true),
        Command::Demo { common, seed, agent } => demo(common, seed, agent).map(|()| true),
        Command::Certify { common, seeds, trials } => certify(common, seeds, trials),
        Command::Selftest { full } => selftest(full),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
