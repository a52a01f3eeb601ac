//! Lane-change incentive with politeness and a safety veto.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{MapError, Side};
use crate::models::idm::{idm_or_brake, IdmParams, Leader};
use crate::world::{LaneIndex, VehicleId, WorldState};

/// Speed below which a vehicle counts as stopped.
const STANDSTILL: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilParams {
    pub politeness: f64,
    /// Incentive needed before an agent commits to a change.
    pub threshold: f64,
    /// Largest deceleration the new follower may be forced into.
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self {
            politeness: 0.3,
            threshold: 0.2,
            safe_decel: 4.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum IncentiveError {
    #[error("unknown {0}")]
    UnknownVehicle(VehicleId),
    #[error("{0} is off the map")]
    OffMap(VehicleId),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Incentive {
    pub value: f64,
    pub safe: bool,
}

/// Incentive for `vehicle` to move to its `side` neighbor, with every vehicle
/// driving toward the speed limit of its lane.
pub fn lane_change_incentive(
    world: &WorldState,
    vehicle: VehicleId,
    side: Side,
    politeness: f64,
) -> Result<Incentive, IncentiveError> {
    let index = LaneIndex::build(world);
    let i = world
        .index_of(vehicle)
        .ok_or(IncentiveError::UnknownVehicle(vehicle))?;
    let base = IdmParams::default();
    let mobil = MobilParams {
        politeness,
        ..Default::default()
    };
    incentive_with(world, &index, i, side, &mobil, |_, lane| {
        base.with_desired_velocity(world.map.lane_at(lane).speed_limit())
    })
}

/// Incentive for vehicle `i` given a prebuilt lane index. `idm_of(j, lane)`
/// returns the car-following parameters of vehicle `j` driving on `lane`.
pub fn incentive_with(
    world: &WorldState,
    index: &LaneIndex,
    i: usize,
    side: Side,
    mobil: &MobilParams,
    idm_of: impl Fn(usize, usize) -> IdmParams,
) -> Result<Incentive, IncentiveError> {
    let map = &world.map;
    let place = index
        .get(i)
        .ok_or(IncentiveError::OffMap(world.vehicles[i].id))?;
    let cur = place.current.lane;
    let target = map
        .neighbor_index(cur, side)
        .ok_or(MapError::NoSuchNeighbor(map.lane_at(cur).id(), side))?;
    let v = |j: usize| world.vehicles[j].state.velocity;
    let lead = |n: Option<(usize, f64)>| n.map(|(j, gap)| Leader { velocity: v(j), gap });
    let acc = |j: usize, lane: usize, l: Option<Leader>| idm_or_brake(v(j), l, &idm_of(j, lane));

    let here = index.neighbors_in_lane(world, i, cur);
    let there = index.neighbors_in_lane(world, i, target);

    let a_c = acc(i, cur, lead(here.leader));
    let a_c_new = acc(i, target, lead(there.leader));

    let mut gain_others = 0.0;
    let mut safe = true;
    if let Some((n, gap_n)) = there.follower {
        let before = index.neighbors_with(world, n, target, |j| j != i);
        let a_n = acc(n, target, lead(before.leader));
        let a_n_new = if gap_n > 0.0 {
            acc(n, target, Some(Leader { velocity: v(i), gap: gap_n }))
        } else {
            -idm_of(n, target).hard_brake
        };
        gain_others += a_n_new - a_n;
        // a follower at standstill has nothing to brake, it just stays put
        let stopped = v(n) < STANDSTILL;
        safe &= gap_n > 0.0 && (stopped || a_n_new >= -mobil.safe_decel);
    }
    if let Some((o, gap_o)) = here.follower {
        let a_o = if gap_o > 0.0 {
            acc(o, cur, Some(Leader { velocity: v(i), gap: gap_o }))
        } else {
            -idm_of(o, cur).hard_brake
        };
        let after = index.neighbors_with(world, o, cur, |j| j != i);
        let a_o_new = acc(o, cur, lead(after.leader));
        gain_others += a_o_new - a_o;
    }
    if let Some((_, gap)) = there.leader {
        // squeezing in right behind a leader is no safer than cutting off a follower
        safe &= gap > 0.0 && (v(i) < STANDSTILL || a_c_new >= -mobil.safe_decel);
    }
    Ok(Incentive {
        value: (a_c_new - a_c) + mobil.politeness * gain_others,
        safe,
    })
}
