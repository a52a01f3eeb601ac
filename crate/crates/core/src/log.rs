//! JSON-lines frame logs: one timestamped snapshot of vehicle poses per line.

use std::io::BufRead;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::map::LaneMap;
use crate::world::{Vehicle, VehicleId, VehicleParams, VehicleState, WorldState};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {t} goes backwards")]
    OutOfOrder { line: usize, t: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Observed pose of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogVehicle {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub velocity: f64,
}

impl LogVehicle {
    pub fn from_state(id: VehicleId, s: &VehicleState) -> Self {
        Self {
            id: id.0,
            x: s.position.x,
            y: s.position.y,
            heading: s.heading,
            velocity: s.velocity,
        }
    }
}

/// Minimal frame; richer logs add fields that readers ignore.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogFrame {
    pub t: f64,
    pub vehicles: Vec<LogVehicle>,
}

impl LogFrame {
    /// World snapshot with default vehicle parameters. Accelerations and
    /// steering are unknown and left at zero.
    pub fn to_world(&self, map: Arc<LaneMap>, ego: VehicleId) -> WorldState {
        let vehicles = self
            .vehicles
            .iter()
            .map(|v| {
                Vehicle::new(
                    VehicleId(v.id),
                    VehicleParams::default(),
                    VehicleState::new(Vec2::new(v.x, v.y), v.heading, v.velocity.max(0.0)),
                )
            })
            .collect();
        WorldState::new(map, self.t, ego, vehicles)
    }
}

/// Reads frames, skipping blank lines and requiring nondecreasing time.
pub fn read_frames<R: BufRead>(reader: R) -> Result<Vec<LogFrame>, LogError> {
    let mut out: Vec<LogFrame> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: LogFrame = serde_json::from_str(&line).map_err(|e| LogError::Malformed {
            line: k + 1,
            message: e.to_string(),
        })?;
        if !frame.t.is_finite() {
            return Err(LogError::Malformed {
                line: k + 1,
                message: "non-finite timestamp".into(),
            });
        }
        if out.last().is_some_and(|p| frame.t < p.t) {
            return Err(LogError::OutOfOrder { line: k + 1, t: frame.t });
        }
        out.push(frame);
    }
    Ok(out)
}
