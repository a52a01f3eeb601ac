//! Single-snapshot scenes for one-off planning.

use std::path::Path;

use serde::{Deserialize, Serialize};

use eudm_core::log::{LogFrame, LogVehicle};
use eudm_core::world::{Placement, WorldState};
use eudm_core::VehicleId;

use crate::maps::load_map;
use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// `ring`, `double_merge`, or a path to a map file.
    pub map: String,
    #[serde(default)]
    pub ego: u32,
    #[serde(default)]
    pub t: f64,
    /// Ego cruise speed; the lane speed limit when unset.
    #[serde(default)]
    pub desired_velocity: Option<f64>,
    pub vehicles: Vec<LogVehicle>,
}

impl Scene {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| SimError::MalformedLog {
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn world(&self) -> Result<WorldState, SimError> {
        let map = load_map(&self.map)?;
        let frame = LogFrame {
            t: self.t,
            vehicles: self.vehicles.clone(),
        };
        let mut world = frame.to_world(map, VehicleId(self.ego));
        let i = world.ego_index().ok_or(SimError::EmptyLog)?;
        set_desired_velocity(&mut world, i, self.desired_velocity);
        Ok(world)
    }
}

/// Gives vehicle `i` the override, or else the limit of the lane it is on.
pub(crate) fn set_desired_velocity(world: &mut WorldState, i: usize, desired: Option<f64>) {
    let state = world.vehicles[i].state;
    let v = desired.unwrap_or_else(|| {
        Placement::locate(&world.map, state.position, state.heading)
            .map_or(state.velocity, |p| world.map.lane_at(p.current.lane).speed_limit())
    });
    world.vehicles[i].params.desired_velocity = v;
}
