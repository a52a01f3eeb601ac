//! Pure pursuit path tracking on lane centerlines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Vec2};
use crate::map::{LaneId, LaneMap};
use crate::world::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurePursuitParams {
    pub lookahead_base: f64,
    /// Seconds of travel added to the lookahead distance.
    pub lookahead_gain: f64,
    pub wheelbase: f64,
    pub max_steer: f64,
}

impl Default for PurePursuitParams {
    fn default() -> Self {
        Self {
            lookahead_base: 6.0,
            lookahead_gain: 0.8,
            wheelbase: 2.8,
            max_steer: 0.6,
        }
    }
}

impl PurePursuitParams {
    pub fn lookahead(&self, velocity: f64) -> f64 {
        self.lookahead_base + self.lookahead_gain * velocity.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PathError {
    #[error("path on {0} ends within the lookahead distance")]
    PathExhausted(LaneId),
    #[error("vehicle does not project onto {0}")]
    OffPath(LaneId),
}

/// Steering angle that puts the vehicle on the arc through `target`.
pub fn steer_toward(
    position: Vec2,
    heading: f64,
    target: Vec2,
    wheelbase: f64,
    max_steer: f64,
) -> f64 {
    let rel = target - position;
    let ld = rel.norm();
    if ld < 1e-9 {
        return 0.0;
    }
    let alpha = normalize_angle(rel.angle() - heading);
    (2.0 * wheelbase * alpha.sin() / ld)
        .atan()
        .clamp(-max_steer, max_steer)
}

/// Lookahead point `distance` ahead of arc length `s` on `lane`, offset
/// laterally by `offset`, following successors.
pub fn lookahead_point(
    map: &LaneMap,
    lane: usize,
    s: f64,
    offset: f64,
    distance: f64,
) -> Result<Vec2, PathError> {
    let (l, s) = map
        .advance(lane, s, distance)
        .ok_or(PathError::PathExhausted(map.lane_at(lane).id()))?;
    Ok(map.lane_at(l).point_at(s, offset))
}

/// Steering command tracking `lane` shifted by `offset`.
pub fn pure_pursuit_steer(
    state: &VehicleState,
    map: &LaneMap,
    lane: LaneId,
    offset: f64,
    p: &PurePursuitParams,
) -> Result<f64, PathError> {
    let idx = map.index_of(lane).ok_or(PathError::OffPath(lane))?;
    let pr = map
        .lane_at(idx)
        .project(state.position, map.max_offset())
        .ok_or(PathError::OffPath(lane))?;
    let target = lookahead_point(map, idx, pr.s, offset, p.lookahead(state.velocity))?;
    Ok(steer_toward(
        state.position,
        state.heading,
        target,
        p.wheelbase,
        p.max_steer,
    ))
}
