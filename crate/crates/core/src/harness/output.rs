//! Record, summary, configuration and plot files of a finished run.

use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::run::{ExperimentOutcome, RunRecord, SkippedSeed};
use super::stats::SummaryRow;

pub const RECORDS_HEADER: &str =
    "seed,agent,episode,raw_return,normalized_return,unsafe_actions,fallback_events,min_margin,wall_time_ms";

#[derive(Serialize)]
struct SummaryFile<'a> {
    format: &'static str,
    completed_seeds: usize,
    skipped: &'a [SkippedSeed],
    excluded_from_normalization: &'a [u64],
    generation_rejections: usize,
    training_fallbacks: Vec<TrainingFallbacks>,
    agents: &'a [SummaryRow],
}

#[derive(Serialize)]
struct TrainingFallbacks {
    agent: String,
    fallbacks: usize,
}

/// Paths written by [`emit_outputs`].
#[derive(Clone, Debug, PartialEq)]
pub struct OutputPaths {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub plot: Option<PathBuf>,
}

/// Serializes records as CSV with shortest round-trip floats.
pub fn records_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)
            .map_err(|e| Error::domain(format!("cannot serialize record: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::domain(format!("cannot flush records: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    rdr.deserialize()
        .collect::<std::result::Result<Vec<RunRecord>, _>>()
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Writes records, summary and configuration into `dir`, plus an SVG when `plot` is set.
pub fn emit_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
    records: &[RunRecord],
    excluded: &[u64],
    summary: &[SummaryRow],
    plot: bool,
) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = OutputPaths {
        records: dir.join(&cfg.records_file),
        summary: dir.join(&cfg.summary_file),
        config: dir.join(&cfg.config_file),
        plot: plot.then(|| dir.join(&cfg.plot_file)),
    };
    let csv_text = if records.is_empty() {
        format!("{RECORDS_HEADER}\n")
    } else {
        records_csv(records)?
    };
    fs::write(&paths.records, csv_text).map_err(|e| Error::io(&paths.records, e))?;

    let file = SummaryFile {
        format: "lobisarl-summary",
        completed_seeds: outcome.completed_seeds.len(),
        skipped: &outcome.skipped,
        excluded_from_normalization: excluded,
        generation_rejections: outcome.rejections,
        training_fallbacks: outcome
            .training_fallbacks
            .iter()
            .map(|(k, f)| TrainingFallbacks {
                agent: k.name().to_string(),
                fallbacks: *f,
            })
            .collect(),
        agents: summary,
    };
    let mut json = serde_json::to_string_pretty(&file).map_err(|e| Error::domain(e.to_string()))?;
    json.push('\n');
    fs::write(&paths.summary, json).map_err(|e| Error::io(&paths.summary, e))?;
    cfg.save(&paths.config)?;
    if let Some(p) = &paths.plot {
        plot_summary(p, summary)?;
    }
    Ok(paths)
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::domain(format!("plot rendering failed: {e}"))
}

/// Two bar panels: normalized return and unsafe actions per agent, with one-std whiskers.
pub fn plot_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::domain("nothing to plot"));
    }
    let root = SVGBackend::new(path, (960, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    let finite = |v: f64| if v.is_finite() { v } else { 0.0 };
    let series: [(&str, Vec<(f64, f64)>); 2] = [
        (
            "normalized return",
            rows.iter()
                .map(|r| (finite(r.return_mean), finite(r.return_std)))
                .collect(),
        ),
        (
            "unsafe actions",
            rows.iter().map(|r| (r.unsafe_mean, r.unsafe_std)).collect(),
        ),
    ];
    let n = rows.len();
    for (panel, (title, values)) in panels.iter().zip(series.iter()) {
        let top = values.iter().map(|(m, s)| m + s).fold(0.0f64, f64::max).max(1.0) * 1.1;
        let mut chart = ChartBuilder::on(panel)
            .caption(*title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d((0..n).into_segmented(), 0.0..top)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n)
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) if *i < n => rows[*i].agent.name().to_string(),
                _ => String::new(),
            })
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(values.iter().enumerate().map(|(i, (m, _))| {
                let mut bar = Rectangle::new(
                    [(SegmentValue::Exact(i), 0.0), (SegmentValue::Exact(i + 1), *m)],
                    BLUE.mix(0.5).filled(),
                );
                bar.set_margin(0, 0, 8, 8);
                bar
            }))
            .map_err(plot_err)?;
        chart
            .draw_series(values.iter().enumerate().map(|(i, (m, s))| {
                ErrorBar::new_vertical(
                    SegmentValue::CenterOf(i),
                    (m - s).max(0.0),
                    *m,
                    m + s,
                    BLACK.filled(),
                    10,
                )
            }))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentKind;

    fn rec(agent: AgentKind) -> RunRecord {
        RunRecord {
            seed: 3,
            agent,
            episode: 20,
            raw_return: 0.1 + 0.2,
            normalized_return: 1.0 / 3.0,
            unsafe_actions: 2,
            fallback_events: 0,
            min_margin: f64::NAN,
            wall_time_ms: 0,
        }
    }

    #[test]
    fn csv_header_and_precision() {
        let text = records_csv(&[rec(AgentKind::LoBiSaRL)]).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RECORDS_HEADER);
        let row = lines.next().unwrap();
        assert!(
            row.starts_with("3,LoBiSaRL,20,0.30000000000000004,0.3333333333333333,2,0,NaN,"),
            "{row}"
        );
    }

    #[test]
    fn records_round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let recs = vec![rec(AgentKind::Random), rec(AgentKind::Unsafe)];
        fs::write(&path, records_csv(&recs).unwrap()).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].agent, AgentKind::Unsafe);
        assert_eq!(back[0].raw_return, recs[0].raw_return);
        assert!(back[0].min_margin.is_nan());
    }
}
