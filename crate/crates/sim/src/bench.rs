//! Benchmark suites: many seeded episodes per map and mode, a CSV of
//! per-episode results and a Markdown summary of the means.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use eudm_core::planner::Mode;

use crate::env::run_episode;
use crate::metrics::BenchmarkMetrics;
use crate::scenario::ScenarioConfig;
use crate::SimError;

/// One episode of a suite. Metric fields are empty when the episode failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub map: String,
    pub mode: Mode,
    pub seed: u64,
    pub safety: Option<f64>,
    pub avg_vel: Option<f64>,
    pub ud_per_km: Option<f64>,
    pub lcc_per_km: Option<f64>,
    pub collisions: Option<usize>,
}

impl BenchRow {
    pub fn from_metrics(map: &str, mode: Mode, seed: u64, m: &BenchmarkMetrics) -> Self {
        Self {
            map: map.to_string(),
            mode,
            seed,
            safety: Some(m.safety_fraction),
            avg_vel: Some(m.avg_velocity),
            ud_per_km: Some(m.ud_per_km),
            lcc_per_km: Some(m.lcc_per_km),
            collisions: Some(m.collisions),
        }
    }

    fn failed(map: &str, mode: Mode, seed: u64) -> Self {
        Self {
            map: map.to_string(),
            mode,
            seed,
            safety: None,
            avg_vel: None,
            ud_per_km: None,
            lcc_per_km: None,
            collisions: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.safety.is_some()
    }
}

/// Means over the successful episodes of one (map, mode) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub map: String,
    pub mode: Mode,
    pub episodes: usize,
    pub failed: usize,
    pub safety: f64,
    pub avg_vel: f64,
    pub ud_per_km: f64,
    pub lcc_per_km: f64,
    pub collisions: usize,
}

/// Short name of a map reference: built-in name or file stem.
pub fn map_label(map: &str) -> String {
    Path::new(map)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(map)
        .to_string()
}

/// Runs every scenario of `suite` under every mode, `repetitions` times
/// with consecutive seeds starting at the scenario's own. Episodes run
/// concurrently; row order follows suite, mode, then seed.
pub fn run_benchmark(suite: &[ScenarioConfig], modes: &[Mode], repetitions: usize) -> Vec<BenchRow> {
    let jobs: Vec<(ScenarioConfig, Mode, u64)> = suite
        .iter()
        .flat_map(|cfg| {
            modes.iter().flat_map(move |&mode| {
                (0..repetitions as u64).map(move |r| (cfg.clone(), mode, cfg.seed + r))
            })
        })
        .collect();
    jobs.into_par_iter()
        .map(|(cfg, mode, seed)| {
            let label = map_label(&cfg.map);
            let cfg = cfg.with_mode(mode).with_seed(seed);
            match run_episode(&cfg) {
                Ok(ep) => BenchRow::from_metrics(&label, mode, seed, &ep.metrics),
                Err(_) => BenchRow::failed(&label, mode, seed),
            }
        })
        .collect()
}

/// Per (map, mode) means, in order of first appearance.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, Mode)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, md)| *m == r.map && *md == r.mode) {
            keys.push((r.map.clone(), r.mode));
        }
    }
    keys.into_iter()
        .map(|(map, mode)| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.map == map && r.mode == mode).collect();
            let ok: Vec<&&BenchRow> = group.iter().filter(|r| r.is_ok()).collect();
            let mean = |f: fn(&BenchRow) -> Option<f64>| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().filter_map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SummaryRow {
                episodes: ok.len(),
                failed: group.len() - ok.len(),
                safety: mean(|r| r.safety),
                avg_vel: mean(|r| r.avg_vel),
                ud_per_km: mean(|r| r.ud_per_km),
                lcc_per_km: mean(|r| r.lcc_per_km),
                collisions: ok.iter().filter_map(|r| r.collisions).sum(),
                map,
                mode,
            }
        })
        .collect()
}

/// Markdown table with the safety, efficiency and comfort columns.
pub fn summary_markdown(summary: &[SummaryRow]) -> String {
    let mut out = String::from(
        "| Map | Method | Safety | Avg. Vel. (m/s) | UD (1/km) | LCC (1/km) | Collisions | Episodes |\n\
         |---|---|---|---|---|---|---|---|\n",
    );
    for s in summary {
        out.push_str(&format!(
            "| {} | {} | {:.3} | {:.2} | {:.2} | {:.2} | {} | {}{} |\n",
            s.map,
            s.mode.to_string().to_uppercase(),
            s.safety,
            s.avg_vel,
            s.ud_per_km,
            s.lcc_per_km,
            s.collisions,
            s.episodes,
            if s.failed > 0 { format!(" ({} failed)", s.failed) } else { String::new() },
        ));
    }
    out
}

fn csv_error(e: csv::Error) -> SimError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    SimError::MalformedLog {
        line,
        message: e.to_string(),
    }
}

pub fn write_csv<W: Write>(out: W, rows: &[BenchRow]) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<BenchRow>, SimError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<BenchRow>, _>>()
        .map_err(csv_error)
}
