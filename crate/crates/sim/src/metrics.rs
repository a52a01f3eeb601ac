//! Benchmark metrics recomputed from episode frames.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use eudm_core::geometry::OrientedBox;
use eudm_core::models::rss_min_safe_gap;
use eudm_core::world::LaneIndex;
use eudm_core::{LaneMap, Vec2, Vehicle, VehicleId, VehicleParams, VehicleState, WorldState};

use crate::episode::{EpisodeFrame, FrameVehicle};
use crate::scenario::Thresholds;
use crate::SimError;

/// Agents farther than this from the ego cannot be within any threshold.
const NEAR_RADIUS: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    pub safety_fraction: f64,
    pub avg_velocity: f64,
    pub ud_per_km: f64,
    pub lcc_per_km: f64,
    pub distance_km: f64,
    pub collisions: usize,
    pub ud_events: usize,
    pub lcc_events: usize,
    pub frames: usize,
}

fn to_vehicle(f: &FrameVehicle) -> Vehicle {
    let params = VehicleParams {
        length: f.length,
        width: f.width,
        ..Default::default()
    };
    let mut state = VehicleState::new(Vec2::new(f.x, f.y), f.heading, f.velocity);
    state.curvature = f.curvature;
    Vehicle::new(VehicleId(f.id), params, state)
}

fn footprint(f: &FrameVehicle) -> OrientedBox {
    OrientedBox::new(Vec2::new(f.x, f.y), f.heading, f.length, f.width)
}

/// Number of maximal runs of `true`.
fn count_runs(flags: impl Iterator<Item = bool>) -> usize {
    let mut prev = false;
    let mut n = 0;
    for f in flags {
        if f && !prev {
            n += 1;
        }
        prev = f;
    }
    n
}

/// Whether any agent sharing a lane with the ego is closer than the safety
/// threshold, and whether any footprint overlaps the ego's.
fn frame_safety(frame: &EpisodeFrame, map: &Arc<LaneMap>, ego: &FrameVehicle, th: &Thresholds) -> (bool, bool) {
    let near: Vec<&FrameVehicle> = frame
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && (v.x - ego.x).hypot(v.y - ego.y) < NEAR_RADIUS)
        .collect();
    if near.is_empty() {
        return (false, false);
    }
    let ego_box = footprint(ego);
    let collided = near.iter().any(|v| footprint(v).overlaps(&ego_box));
    let vehicles = std::iter::once(ego).chain(near.iter().copied()).map(to_vehicle).collect();
    let world = WorldState::new(map.clone(), frame.t, VehicleId(ego.id), vehicles);
    let index = LaneIndex::build(&world);
    let Some(e) = world.ego_index() else {
        return (collided, collided);
    };
    let ve = &world.vehicles[e];
    let unsafe_gap = (0..world.vehicles.len()).filter(|&j| j != e).any(|j| {
        let vj = &world.vehicles[j];
        let Some(ds) = index.shared_lane_offset(map, e, j) else {
            return false;
        };
        let gap = ds.abs() - 0.5 * (ve.params.length + vj.params.length);
        let (rear, front) = if ds >= 0.0 { (ve, vj) } else { (vj, ve) };
        let rss = rss_min_safe_gap(rear.state.velocity, front.state.velocity, &th.rss);
        gap < th.min_distance.max(th.rss_fraction * rss)
    });
    (unsafe_gap || collided, collided)
}

/// Metrics of the ego `ego` over `frames`. Frames without the ego are
/// skipped.
pub fn compute_metrics(
    frames: &[EpisodeFrame],
    map: &Arc<LaneMap>,
    ego: u32,
    th: &Thresholds,
) -> Result<BenchmarkMetrics, SimError> {
    let track: Vec<(&EpisodeFrame, &FrameVehicle)> =
        frames.iter().filter_map(|f| f.vehicle(ego).map(|v| (f, v))).collect();
    if track.is_empty() {
        return Err(SimError::EmptyLog);
    }
    let safety: Vec<(bool, bool)> = track.iter().map(|(f, v)| frame_safety(f, map, v, th)).collect();
    let unsafe_frames = safety.iter().filter(|s| s.0).count();
    let collisions = count_runs(safety.iter().map(|s| s.1));

    let n = track.len();
    let avg_velocity = track.iter().map(|(_, v)| v.velocity).sum::<f64>() / n as f64;
    let distance_m: f64 = track
        .windows(2)
        .map(|w| (w[1].1.x - w[0].1.x).hypot(w[1].1.y - w[0].1.y))
        .sum();
    let rate = |w: &[(&EpisodeFrame, &FrameVehicle)], f: fn(&FrameVehicle) -> f64| {
        let dt = w[1].0.t - w[0].0.t;
        if dt > 0.0 {
            (f(w[1].1) - f(w[0].1)) / dt
        } else {
            0.0
        }
    };
    let ud_events = count_runs(track.windows(2).map(|w| -rate(w, |v| v.velocity) > th.ud_decel));
    let lcc_events = count_runs(track.windows(2).map(|w| rate(w, |v| v.curvature).abs() > th.lcc_rate));
    let km = distance_m / 1000.0;
    let per_km = |k: usize| if km > 0.0 { k as f64 / km } else { 0.0 };
    Ok(BenchmarkMetrics {
        safety_fraction: unsafe_frames as f64 / n as f64,
        avg_velocity,
        ud_per_km: per_km(ud_events),
        lcc_per_km: per_km(lcc_events),
        distance_km: km,
        collisions,
        ud_events,
        lcc_events,
        frames: n,
    })
}
