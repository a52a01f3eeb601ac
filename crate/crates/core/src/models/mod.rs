//! Vehicle behavior models: car following, path tracking, safe distance and
//! lane-change incentive.

pub mod idm;
pub mod mobil;
pub mod pure_pursuit;
pub mod rss;

use serde::{Deserialize, Serialize};

pub use idm::{idm_acceleration, idm_or_brake, IdmError, IdmParams, Leader};
pub use mobil::{incentive_with, lane_change_incentive, Incentive, IncentiveError, MobilParams};
pub use pure_pursuit::{lookahead_point, pure_pursuit_steer, steer_toward, PathError, PurePursuitParams};
pub use rss::{rss_min_safe_gap, RssParams};

/// Every model parameter block used by forward simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub idm: IdmParams,
    pub pure_pursuit: PurePursuitParams,
    pub rss: RssParams,
    pub mobil: MobilParams,
    /// Integration substeps per simulation step.
    pub substeps: usize,
    /// Steering rate limit, rad/s.
    pub max_steer_rate: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            pure_pursuit: PurePursuitParams::default(),
            rss: RssParams::default(),
            mobil: MobilParams::default(),
            substeps: 2,
            max_steer_rate: 0.3,
        }
    }
}
