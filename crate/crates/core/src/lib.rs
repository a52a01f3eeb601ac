//! Decision-making core: lane map, vehicle models, intention belief,
//! policy tree, focused scenario branching and the planner itself.

pub mod belief;
pub mod cfb;
pub mod dcp_tree;
pub mod fixtures;
pub mod geometry;
pub mod log;
pub mod map;
pub mod models;
pub mod noise;
pub mod planner;
pub mod simulation;
pub mod world;

pub use geometry::Vec2;
pub use map::{LaneId, LaneMap, MapError, Side};
pub use world::{
    Lateral, Longitudinal, SemanticAction, Vehicle, VehicleId, VehicleParams, VehicleState,
    WorldState,
};
