//! Closed-loop traffic simulation around the planner: benchmark maps,
//! heterogeneous agents, episode logs, metrics, benchmarks, log replay and
//! SVG plots.

pub mod bench;
pub mod env;
pub mod episode;
pub mod maps;
pub mod metrics;
pub mod plot;
pub mod replay;
pub mod scenario;
pub mod scene;

use thiserror::Error;

use eudm_core::planner::PlanError;
use eudm_core::{LaneId, MapError, VehicleId};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("lane {0} is not on the map")]
    UnknownLane(LaneId),
    #[error("vehicles {0} and {1} overlap at the start")]
    InitialOverlap(VehicleId, VehicleId),
    #[error("log has no frames with the ego")]
    EmptyLog,
    #[error("line {line}: {message}")]
    MalformedLog { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
