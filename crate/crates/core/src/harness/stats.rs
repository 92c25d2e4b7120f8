//! Normalization against the unconstrained agent and per-agent summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::AgentKind;
use crate::error::{Error, Result};

use super::run::RunRecord;

/// Divides every return by the Unsafe agent's return on the same seed and episode.
///
/// Seeds where that return is zero are left at NaN and reported in the
/// second element. Without any Unsafe record every entry stays NaN; a seed
/// lacking one while others have it is a configuration error.
pub fn normalize_returns(records: &[RunRecord]) -> Result<(Vec<RunRecord>, Vec<u64>)> {
    let mut reference: BTreeMap<(u64, usize), f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.agent == AgentKind::Unsafe) {
        reference.insert((r.seed, r.episode), r.raw_return);
    }
    if reference.is_empty() {
        log::warn!("no Unsafe records; normalized returns are left undefined");
        let out = records
            .iter()
            .map(|r| RunRecord {
                normalized_return: f64::NAN,
                ..r.clone()
            })
            .collect();
        return Ok((out, Vec::new()));
    }
    let mut excluded = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let base = *reference.get(&(r.seed, r.episode)).ok_or_else(|| {
            Error::Config(format!(
                "seed {} episode {} has no Unsafe record to normalize by",
                r.seed, r.episode
            ))
        })?;
        let normalized = if base == 0.0 {
            if !excluded.contains(&r.seed) {
                log::warn!("seed {} excluded from normalization: Unsafe return is zero", r.seed);
                excluded.push(r.seed);
            }
            f64::NAN
        } else {
            r.raw_return / base
        };
        out.push(RunRecord {
            normalized_return: normalized,
            ..r.clone()
        });
    }
    Ok((out, excluded))
}

/// Mean and sample standard deviation; a single value has deviation zero.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::domain("cannot summarize an empty sample"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub agent: AgentKind,
    pub episodes: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub raw_return_mean: f64,
    pub unsafe_mean: f64,
    pub unsafe_std: f64,
    pub fallback_total: usize,
    /// Seeds with at least one unsafe evaluation action.
    pub seeds_with_violations: usize,
}

/// One row per agent in the canonical agent order.
///
/// Normalized statistics skip NaN entries; an agent whose normalized returns
/// are all NaN reports NaN.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::domain("no records to summarize"));
    }
    let mut rows = Vec::new();
    for kind in AgentKind::ALL {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.agent == kind).collect();
        if mine.is_empty() {
            continue;
        }
        let normalized: Vec<f64> = mine
            .iter()
            .map(|r| r.normalized_return)
            .filter(|v| !v.is_nan())
            .collect();
        let (return_mean, return_std) = if normalized.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&normalized)?
        };
        let raw: Vec<f64> = mine.iter().map(|r| r.raw_return).collect();
        let unsafe_counts: Vec<f64> = mine.iter().map(|r| r.unsafe_actions as f64).collect();
        let (unsafe_mean, unsafe_std) = mean_std(&unsafe_counts)?;
        let mut violating: Vec<u64> = mine.iter().filter(|r| r.unsafe_actions > 0).map(|r| r.seed).collect();
        violating.sort_unstable();
        violating.dedup();
        rows.push(SummaryRow {
            agent: kind,
            episodes: mine.len(),
            return_mean,
            return_std,
            raw_return_mean: mean_std(&raw)?.0,
            unsafe_mean,
            unsafe_std,
            fallback_total: mine.iter().map(|r| r.fallback_events).sum(),
            seeds_with_violations: violating.len(),
        });
    }
    Ok(rows)
}

/// Fixed-width table of the summary.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<14} {:>8} {:>17} {:>17} {:>10} {:>9}\n",
        "agent", "episodes", "normalized return", "unsafe actions", "fallbacks", "violating"
    );
    for r in rows {
        s.push_str(&format!(
            "{:<14} {:>8} {:>8.2} ± {:<6.2} {:>8.2} ± {:<6.2} {:>10} {:>9}\n",
            r.agent.name(),
            r.episodes,
            r.return_mean,
            r.return_std,
            r.unsafe_mean,
            r.unsafe_std,
            r.fallback_total,
            r.seeds_with_violations
        ));
    }
    s
}
