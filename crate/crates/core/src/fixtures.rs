//! Small hand-built roads and vehicles for tests and examples.

use std::sync::Arc;

use crate::geometry::Vec2;
use crate::map::{LaneId, LaneMap, LaneSpec, MapFile};
use crate::world::{Vehicle, VehicleId, VehicleParams, VehicleState};

pub const LANE_WIDTH: f64 = 3.5;

/// `lanes` parallel straight lanes along +x, lane `i` centered at
/// `y = i * 3.5`. Lane ids grow to the left.
pub fn straight_road(lanes: u32, length: f64) -> Arc<LaneMap> {
    straight_road_with_limit(lanes, length, 20.0)
}

pub fn straight_road_with_limit(lanes: u32, length: f64, speed_limit: f64) -> Arc<LaneMap> {
    let n = (length / 1.0).ceil() as usize;
    let specs = (0..lanes)
        .map(|i| LaneSpec {
            id: LaneId(i),
            points: (0..=n)
                .map(|k| Vec2::new(length * k as f64 / n as f64, i as f64 * LANE_WIDTH))
                .collect(),
            left: (i + 1 < lanes).then_some(LaneId(i + 1)),
            right: (i > 0).then(|| LaneId(i - 1)),
            successor: None,
            speed_limit,
            width: LANE_WIDTH,
        })
        .collect();
    Arc::new(
        LaneMap::from_file(MapFile {
            ring: false,
            lanes: specs,
        })
        .expect("straight road is valid"),
    )
}

/// Vehicle with default parameters on a `straight_road`, heading along +x.
pub fn vehicle_at(id: u32, lane: u32, s: f64, d: f64, velocity: f64) -> Vehicle {
    Vehicle::new(
        VehicleId(id),
        VehicleParams::default(),
        VehicleState::new(
            Vec2::new(s, lane as f64 * LANE_WIDTH + d),
            0.0,
            velocity,
        ),
    )
}
