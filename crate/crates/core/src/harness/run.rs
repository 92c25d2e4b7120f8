//! Runs every agent on a batch of generated environments.

use std::ops::Range;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentKind};
use crate::env::{Generator, GridWorld};
use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// Stream reserved for the shared initial safe dataset of a seed.
const INITIAL_STREAM: u64 = 1 << 32;

/// One evaluation episode of one agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub agent: AgentKind,
    /// Zero-based episode index counted across training and evaluation.
    pub episode: usize,
    pub raw_return: f64,
    /// Filled by [`normalize_returns`](super::normalize_returns); NaN until then.
    pub normalized_return: f64,
    pub unsafe_actions: usize,
    pub fallback_events: usize,
    pub min_margin: f64,
    pub wall_time_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeed {
    pub seed: u64,
    pub reason: String,
}

/// Records merged in seed order, plus bookkeeping over the whole batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub skipped: Vec<SkippedSeed>,
    pub completed_seeds: Vec<u64>,
    /// Generation rejections summed over completed seeds.
    pub rejections: usize,
    /// Fallbacks during training episodes, per agent in configured order.
    pub training_fallbacks: Vec<(AgentKind, usize)>,
}

/// Independent random stream for agent `index` on `seed`.
pub fn agent_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Stream shared by all agents of a seed for the initial safe dataset.
pub fn initial_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INITIAL_STREAM);
    rng
}

struct SeedResult {
    records: Vec<RunRecord>,
    rejections: usize,
    training_fallbacks: Vec<usize>,
}

/// Default seed range `base_seed .. base_seed + num_envs`.
pub fn default_seeds(cfg: &ExperimentConfig) -> Range<u64> {
    cfg.base_seed..cfg.base_seed + cfg.num_envs as u64
}

/// Runs all configured agents on one already generated world.
pub fn run_world(cfg: &ExperimentConfig, world: &GridWorld) -> Result<(Vec<RunRecord>, Vec<usize>)> {
    let agent_cfg = cfg.agent();
    let initial = world.conservative_rollout(cfg.init_samples, &mut initial_rng(world.seed()))?;
    let mut records = Vec::with_capacity(cfg.agents.len() * cfg.episodes_per_env);
    let mut training_fallbacks = Vec::with_capacity(cfg.agents.len());
    for &kind in &cfg.agents {
        let mut rng = agent_rng(world.seed(), kind.index());
        let mut agent = Agent::new(kind, world, &agent_cfg, &initial)?;
        let mut fallbacks = 0;
        for _ in 0..cfg.training_episodes {
            fallbacks += agent.run_episode(world, &mut rng)?.fallback_count();
        }
        training_fallbacks.push(fallbacks);
        for j in 0..cfg.episodes_per_env {
            let clock = Instant::now();
            let log = agent.run_episode(world, &mut rng)?;
            let elapsed = clock.elapsed().as_millis() as u64;
            records.push(RunRecord {
                seed: world.seed(),
                agent: kind,
                episode: cfg.training_episodes + j,
                raw_return: log.total_reward(),
                normalized_return: f64::NAN,
                unsafe_actions: log.unsafe_count(),
                fallback_events: log.fallback_count(),
                min_margin: agent.margin(&log)?,
                wall_time_ms: if cfg.record_timing { elapsed } else { 0 },
            });
        }
    }
    Ok((records, training_fallbacks))
}

/// `Ok(Err(reason))` marks a seed whose environment could not be generated.
fn run_seed(
    cfg: &ExperimentConfig,
    generator: &Generator,
    seed: u64,
) -> Result<std::result::Result<SeedResult, String>> {
    let world = match generator.generate(seed) {
        Ok(w) => w,
        Err(e @ Error::Generation { .. }) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e),
    };
    let (records, training_fallbacks) = run_world(cfg, &world)?;
    log::info!("seed {seed} done ({} rejections)", world.rejections());
    Ok(Ok(SeedResult {
        records,
        rejections: world.rejections(),
        training_fallbacks,
    }))
}

/// Runs the experiment over `seeds` on `jobs` worker threads.
///
/// Results do not depend on `jobs`. Seeds whose environment cannot be
/// generated are skipped; the run aborts when their share exceeds
/// `max_skip_rate`.
pub fn run_experiment(cfg: &ExperimentConfig, seeds: Range<u64>, jobs: usize) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Config("seed range is empty".into()));
    }
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    let generator = Generator::new(cfg.generation())?;
    let seed_list: Vec<u64> = seeds.collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(u64, Result<std::result::Result<SeedResult, String>>)> = pool.install(|| {
        seed_list
            .par_iter()
            .map(|&seed| (seed, run_seed(cfg, &generator, seed)))
            .collect()
    });

    let mut out = ExperimentOutcome {
        training_fallbacks: cfg.agents.iter().map(|&k| (k, 0)).collect(),
        ..ExperimentOutcome::default()
    };
    for (seed, res) in results {
        match res? {
            Ok(r) => {
                out.records.extend(r.records);
                out.rejections += r.rejections;
                for (slot, f) in out.training_fallbacks.iter_mut().zip(r.training_fallbacks) {
                    slot.1 += f;
                }
                out.completed_seeds.push(seed);
            }
            Err(reason) => {
                log::warn!("skipping seed {seed}: {reason}");
                out.skipped.push(SkippedSeed { seed, reason });
            }
        }
    }
    let total = seed_list.len();
    if out.skipped.len() as f64 > cfg.max_skip_rate * total as f64 {
        return Err(Error::Aborted {
            skipped: out.skipped.len(),
            total,
            limit: cfg.max_skip_rate,
        });
    }
    Ok(out)
}
