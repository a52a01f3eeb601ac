//! Open-loop replay: the planner watches a recorded log frame by frame and
//! its decisions are collected, but nothing it decides feeds back.

use std::io::BufRead;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use eudm_core::log::{read_frames, LogError, LogFrame};
use eudm_core::noise::mix_key;
use eudm_core::planner::{Planner, PlannerConfig};
use eudm_core::world::{Lateral, Longitudinal, WorldState};
use eudm_core::{LaneMap, VehicleId};

use crate::scene::set_desired_velocity;
use crate::SimError;

/// Gaussian perturbation of observed poses, to mimic a noisy tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionNoise {
    pub position_std: f64,
    pub heading_std: f64,
    pub velocity_std: f64,
    pub seed: u64,
}

impl Default for PerceptionNoise {
    fn default() -> Self {
        Self {
            position_std: 0.2,
            heading_std: 0.01,
            velocity_std: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplayConfig {
    pub planner: PlannerConfig,
    pub ego: u32,
    /// Ego cruise speed; the lane speed limit when unset.
    pub desired_velocity: Option<f64>,
    pub noise: Option<PerceptionNoise>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            ego: 0,
            desired_velocity: None,
            noise: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub t: f64,
    pub selected: Option<String>,
    /// Longitudinal behavior of every node of the selected sequence.
    pub longitudinal: Vec<Longitudinal>,
    pub emergency: bool,
    pub risky: Vec<(u32, Lateral)>,
}

impl Decision {
    pub fn decelerates(&self) -> bool {
        self.emergency || self.longitudinal.contains(&Longitudinal::Decelerate)
    }
}

/// Everything about a replay that depends only on the log and config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub decisions: Vec<Decision>,
    pub switches: usize,
    pub risky_frames: usize,
}

/// Report plus wall-clock planning time per decision, in milliseconds.
/// Timing is kept apart so reports compare equal across runs.
#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub report: ReplayReport,
    pub latency_ms: Vec<f64>,
}

impl ReplayOutput {
    pub fn median_latency_ms(&self) -> Option<f64> {
        let mut v = self.latency_ms.clone();
        v.sort_by(f64::total_cmp);
        v.get(v.len() / 2).copied()
    }
}

fn log_error(e: LogError) -> SimError {
    match e {
        LogError::Malformed { line, message } => SimError::MalformedLog { line, message },
        LogError::OutOfOrder { line, t } => SimError::MalformedLog {
            line,
            message: format!("timestamp {t} goes backwards"),
        },
        LogError::Io(e) => SimError::Io(e),
    }
}

pub fn read_log<R: BufRead>(reader: R) -> Result<Vec<LogFrame>, SimError> {
    read_frames(reader).map_err(log_error)
}

fn perturb(world: &mut WorldState, noise: &PerceptionNoise, frame: usize) {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for v in &mut world.vehicles {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(noise.seed, &[frame as u64, v.id.0 as u64]));
        let mut draw = |std: f64| unit.sample(&mut rng) * std;
        v.state.position.x += draw(noise.position_std);
        v.state.position.y += draw(noise.position_std);
        v.state.heading += draw(noise.heading_std);
        v.state.velocity = (v.state.velocity + draw(noise.velocity_std)).max(0.0);
    }
}

/// Runs one plan cycle per frame that contains the ego. Frames without it
/// are skipped.
pub fn replay(frames: &[LogFrame], map: Arc<LaneMap>, cfg: &ReplayConfig) -> Result<ReplayOutput, SimError> {
    let ego = VehicleId(cfg.ego);
    let mut planner = Planner::new(cfg.planner)?;
    let mut decisions = Vec::new();
    let mut latency_ms = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let mut world = frame.to_world(map.clone(), ego);
        let Some(i) = world.ego_index() else { continue };
        if let Some(noise) = &cfg.noise {
            perturb(&mut world, noise, k);
        }
        set_desired_velocity(&mut world, i, cfg.desired_velocity);

        let start = Instant::now();
        let record = planner.cycle(&world)?;
        latency_ms.push(start.elapsed().as_secs_f64() * 1e3);
        decisions.push(Decision {
            t: frame.t,
            selected: record.selected_label.clone(),
            longitudinal: record
                .selected
                .as_ref()
                .map(|s| s.actions.iter().map(|a| a.longitudinal).collect())
                .unwrap_or_default(),
            emergency: record.emergency,
            risky: record.risky.iter().map(|&(id, lat)| (id.0, lat)).collect(),
        });
    }
    if decisions.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let switches = decisions.windows(2).filter(|w| w[0].selected != w[1].selected).count();
    let risky_frames = decisions.iter().filter(|d| !d.risky.is_empty()).count();
    Ok(ReplayOutput {
        report: ReplayReport {
            decisions,
            switches,
            risky_frames,
        },
        latency_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use eudm_core::fixtures::{straight_road, LANE_WIDTH};
    use eudm_core::log::LogVehicle;

    fn lv(id: u32, x: f64, y: f64, heading: f64, velocity: f64) -> LogVehicle {
        LogVehicle {
            id,
            x,
            y,
            heading,
            velocity,
        }
    }

    fn cfg() -> ReplayConfig {
        let mut c = ReplayConfig::default();
        c.planner.replan_dt = 0.2;
        c.desired_velocity = Some(12.0);
        c
    }

    /// Ego cruising alone in the right lane of a two-lane road.
    fn empty_road(n: usize) -> Vec<LogFrame> {
        (0..n)
            .map(|k| {
                let t = 0.2 * k as f64;
                LogFrame {
                    t,
                    vehicles: vec![lv(0, 10.0 + 12.0 * t, 0.0, 0.0, 12.0)],
                }
            })
            .collect()
    }

    /// An agent overtakes on the left and swings into the ego lane just
    /// ahead of it.
    fn cut_in(n: usize) -> Vec<LogFrame> {
        (0..n)
            .map(|k| {
                let t = 0.2 * k as f64;
                let ego_x = 10.0 + 12.0 * t;
                let agent_x = 6.0 + 15.0 * t;
                // lateral move starts at t = 1 and lasts 2.5 s
                let p = ((t - 1.0) / 2.5).clamp(0.0, 1.0);
                let y = LANE_WIDTH * (1.0 - p);
                let vy = if (0.0..1.0).contains(&p) { -LANE_WIDTH / 2.5 } else { 0.0 };
                let heading = f64::atan2(vy, 15.0);
                LogFrame {
                    t,
                    vehicles: vec![
                        lv(0, ego_x, 0.0, 0.0, 12.0),
                        lv(1, agent_x, y, heading, f64::hypot(15.0, vy)),
                    ],
                }
            })
            .collect()
    }

    #[test]
    fn empty_road_keeps_lane() {
        let out = replay(&empty_road(15), straight_road(2, 500.0), &cfg()).unwrap();
        assert_eq!(out.report.decisions.len(), 15);
        assert_eq!(out.latency_ms.len(), 15);
        assert_eq!(out.report.risky_frames, 0);
        for d in &out.report.decisions {
            let label = d.selected.as_deref().unwrap();
            assert!(label.split(' ').all(|a| a.starts_with("LK")), "{label}");
        }
    }

    #[test]
    fn aggressive_cut_in_draws_a_deceleration() {
        let frames = cut_in(20);
        let out = replay(&frames, straight_road(2, 500.0), &cfg()).unwrap();
        let during = out
            .report
            .decisions
            .iter()
            .filter(|d| (1.0..=3.5).contains(&d.t))
            .collect::<Vec<_>>();
        assert!(!during.is_empty());
        assert!(during.iter().any(|d| d.decelerates()), "{:#?}", out.report.decisions);
        assert!(during.iter().all(|d| d.longitudinal.first() != Some(&Longitudinal::Accelerate)));
    }

    #[test]
    fn replays_are_identical() {
        let mut c = cfg();
        c.noise = Some(PerceptionNoise {
            seed: 9,
            ..Default::default()
        });
        let map = straight_road(2, 500.0);
        let a = replay(&cut_in(12), map.clone(), &c).unwrap();
        let b = replay(&cut_in(12), map, &c).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn bad_lines_are_reported() {
        let text = "{\"t\":0.0,\"vehicles\":[]}\n{\"t\":0.1,\"vehicles\":[}\n";
        match read_log(text.as_bytes()) {
            Err(SimError::MalformedLog { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let text = "{\"t\":1.0,\"vehicles\":[]}\n{\"t\":0.5,\"vehicles\":[]}\n";
        assert!(matches!(read_log(text.as_bytes()), Err(SimError::MalformedLog { line: 2, .. })));
        assert!(matches!(
            replay(&read_log(text.as_bytes()).unwrap_or_default(), straight_road(1, 50.0), &cfg()),
            Err(SimError::EmptyLog)
        ));
    }
}
