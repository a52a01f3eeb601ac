//! Vehicle and world state, semantic actions, and lane-relative queries.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, OrientedBox, Vec2};
use crate::map::{LaneId, LaneMap, MapError, Side};

/// Extra lateral intrusion (m) of a body into a neighboring lane before the
/// vehicle is considered to occupy it.
pub const OCCUPANCY_INTRUSION: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "vehicle {}", self.0)
    }
}

/// Kinematic state. `position` is the body center.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub position: Vec2,
    pub heading: f64,
    pub velocity: f64,
    #[serde(default)]
    pub acceleration: f64,
    #[serde(default)]
    pub steering: f64,
    #[serde(default)]
    pub curvature: f64,
}

impl VehicleState {
    pub fn new(position: Vec2, heading: f64, velocity: f64) -> Self {
        Self {
            position,
            heading,
            velocity,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub length: f64,
    pub width: f64,
    pub wheelbase: f64,
    pub max_accel: f64,
    /// Positive magnitude.
    pub max_decel: f64,
    pub desired_velocity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            length: 4.8,
            width: 1.9,
            wheelbase: 2.8,
            max_accel: 2.0,
            max_decel: 8.0,
            desired_velocity: 15.0,
        }
    }
}

impl VehicleParams {
    pub fn is_valid(&self) -> bool {
        self.length > self.wheelbase
            && self.wheelbase > 0.0
            && self.width > 0.0
            && self.max_accel > 0.0
            && self.max_decel > 0.0
            && self.desired_velocity >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: VehicleId,
    pub params: VehicleParams,
    pub state: VehicleState,
}

impl Vehicle {
    pub fn new(id: VehicleId, params: VehicleParams, state: VehicleState) -> Self {
        Self { id, params, state }
    }

    pub fn footprint(&self) -> OrientedBox {
        OrientedBox::new(
            self.state.position,
            self.state.heading,
            self.params.length,
            self.params.width,
        )
    }
}

/// Snapshot of every vehicle on a shared lane map. Vehicles are kept sorted by
/// id.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub time: f64,
    pub ego: VehicleId,
    pub vehicles: Vec<Vehicle>,
    pub map: Arc<LaneMap>,
}

impl WorldState {
    pub fn new(map: Arc<LaneMap>, time: f64, ego: VehicleId, mut vehicles: Vec<Vehicle>) -> Self {
        vehicles.sort_by_key(|v| v.id);
        Self {
            time,
            ego,
            vehicles,
            map,
        }
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.vehicles.binary_search_by_key(&id, |v| v.id).ok()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&Vehicle> {
        self.index_of(id).map(|i| &self.vehicles[i])
    }

    pub fn ego_index(&self) -> Option<usize> {
        self.index_of(self.ego)
    }

    pub fn ego_vehicle(&self) -> Option<&Vehicle> {
        self.vehicle(self.ego)
    }

    pub fn agents(&self) -> impl Iterator<Item = &Vehicle> {
        let ego = self.ego;
        self.vehicles.iter().filter(move |v| v.id != ego)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lateral {
    #[serde(rename = "LK")]
    LaneKeep,
    #[serde(rename = "LCL")]
    ChangeLeft,
    #[serde(rename = "LCR")]
    ChangeRight,
}

/// Hidden lateral intention of another vehicle.
pub type Intention = Lateral;

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::LaneKeep, Lateral::ChangeLeft, Lateral::ChangeRight];

    pub fn side(self) -> Option<Side> {
        match self {
            Lateral::LaneKeep => None,
            Lateral::ChangeLeft => Some(Side::Left),
            Lateral::ChangeRight => Some(Side::Right),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short(self) -> &'static str {
        match self {
            Lateral::LaneKeep => "LK",
            Lateral::ChangeLeft => "LCL",
            Lateral::ChangeRight => "LCR",
        }
    }
}

impl fmt::Display for Lateral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Longitudinal {
    Maintain,
    Accelerate,
    Decelerate,
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 3] = [
        Longitudinal::Maintain,
        Longitudinal::Accelerate,
        Longitudinal::Decelerate,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Longitudinal::Maintain => "M",
            Longitudinal::Accelerate => "A",
            Longitudinal::Decelerate => "D",
        }
    }
}

/// A (lateral, longitudinal) behavior held for `duration` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticAction {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
    pub duration: f64,
}

impl SemanticAction {
    pub const DEFAULT_DURATION: f64 = 2.0;

    pub fn new(lateral: Lateral, longitudinal: Longitudinal, duration: f64) -> Self {
        Self {
            lateral,
            longitudinal,
            duration,
        }
    }

    /// Same behavior pair, ignoring duration.
    pub fn same_behavior(&self, other: &SemanticAction) -> bool {
        self.lateral == other.lateral && self.longitudinal == other.longitudinal
    }

    pub fn with_duration(self, duration: f64) -> Self {
        Self { duration, ..self }
    }

    pub fn key(&self) -> (Lateral, Longitudinal) {
        (self.lateral, self.longitudinal)
    }

    /// Full lateral x longitudinal product, lateral-major.
    pub fn full_set(duration: f64) -> Vec<SemanticAction> {
        Lateral::ALL
            .iter()
            .flat_map(|&lat| {
                Longitudinal::ALL
                    .iter()
                    .map(move |&lon| SemanticAction::new(lat, lon, duration))
            })
            .collect()
    }
}

impl fmt::Display for SemanticAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lateral, self.longitudinal.short())
    }
}

/// Lane reached by an action's lateral component.
pub fn target_lane_for(
    map: &LaneMap,
    action: &SemanticAction,
    current: LaneId,
) -> Result<LaneId, MapError> {
    match action.lateral.side() {
        None => map.require(current).map(|l| l.id()),
        Some(side) => map.neighbor_of(current, side),
    }
}

/// Projection of a vehicle onto one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneProj {
    pub lane: usize,
    pub s: f64,
    pub d: f64,
    pub segment: usize,
}

/// Where a vehicle sits in the lane graph: its current lane plus projections
/// onto the adjacent lanes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub current: LaneProj,
    pub heading_error: f64,
    pub left: Option<LaneProj>,
    pub right: Option<LaneProj>,
}

impl Placement {
    pub fn locate(map: &LaneMap, pos: Vec2, heading: f64) -> Option<Placement> {
        let (lane, pr) = map.locate(pos, heading)?;
        let current = LaneProj {
            lane,
            s: pr.s,
            d: pr.d,
            segment: pr.segment,
        };
        Some(Self::complete(map, pos, heading, current, pr.tangent, None))
    }

    /// Incremental update from the previous placement.
    pub fn update(&self, map: &LaneMap, pos: Vec2, heading: f64) -> Option<Placement> {
        let max_off = map.max_offset();
        let cur_lane = map.lane_at(self.current.lane);
        let mut current = self.current.lane;
        let mut pr = cur_lane.project_from(pos, self.current.segment, max_off);
        let past_end = |lane: usize, s: f64| {
            let l = map.lane_at(lane);
            !l.is_closed() && s >= l.length() - 1e-9
        };
        if pr.map_or(true, |p| past_end(current, p.s)) {
            if let Some(next) = map.successor_index(current) {
                if let Some(np) = map.lane_at(next).project(pos, max_off) {
                    current = next;
                    pr = Some(np);
                }
            }
        }
        let Some(mut pr) = pr else {
            return Self::locate(map, pos, heading);
        };
        let half = map.lane_at(current).width() * 0.5;
        if pr.d.abs() > half {
            let side = if pr.d > 0.0 { Side::Left } else { Side::Right };
            if let Some(n) = map.neighbor_index(current, side) {
                let prev = match side {
                    Side::Left => self.left,
                    Side::Right => self.right,
                };
                let np = match prev.filter(|p| p.lane == n) {
                    Some(p) => map.lane_at(n).project_from(pos, p.segment, max_off),
                    None => map.lane_at(n).project(pos, max_off),
                };
                if let Some(np) = np.filter(|np| np.d.abs() < pr.d.abs()) {
                    current = n;
                    pr = np;
                }
            }
        }
        let cur = LaneProj {
            lane: current,
            s: pr.s,
            d: pr.d,
            segment: pr.segment,
        };
        Some(Self::complete(map, pos, heading, cur, pr.tangent, Some(self)))
    }

    fn complete(
        map: &LaneMap,
        pos: Vec2,
        heading: f64,
        current: LaneProj,
        tangent: f64,
        prev: Option<&Placement>,
    ) -> Placement {
        let max_off = map.max_offset();
        let side_proj = |side: Side| -> Option<LaneProj> {
            let n = map.neighbor_index(current.lane, side)?;
            let hint = prev.and_then(|p| {
                [Some(p.current), p.left, p.right]
                    .into_iter()
                    .flatten()
                    .find(|q| q.lane == n)
            });
            let lane = map.lane_at(n);
            let pr = match hint {
                Some(h) => lane.project_from(pos, h.segment, max_off),
                None => lane.project(pos, max_off),
            }?;
            Some(LaneProj {
                lane: n,
                s: pr.s,
                d: pr.d,
                segment: pr.segment,
            })
        };
        Placement {
            current,
            heading_error: normalize_angle(heading - tangent),
            left: side_proj(Side::Left),
            right: side_proj(Side::Right),
        }
    }

    pub fn lane_id(&self, map: &LaneMap) -> LaneId {
        map.lane_at(self.current.lane).id()
    }

    /// Direct projection onto `lane` when it is the current lane or adjacent.
    pub fn proj_on(&self, lane: usize) -> Option<LaneProj> {
        if self.current.lane == lane {
            return Some(self.current);
        }
        [self.left, self.right]
            .into_iter()
            .flatten()
            .find(|p| p.lane == lane)
    }

    /// Arc-length coordinate of the vehicle in `lane`'s frame, following the
    /// successor chain when the lane is not adjacent.
    pub fn s_along(&self, map: &LaneMap, lane: usize) -> Option<f64> {
        if let Some(p) = self.proj_on(lane) {
            return Some(p.s);
        }
        [Some(self.current), self.left, self.right]
            .into_iter()
            .flatten()
            .find_map(|p| map.longitudinal_offset(lane, 0.0, p.lane, p.s))
    }

    /// Lanes physically occupied by a body of half-width `half_width`.
    pub fn occupied(&self, map: &LaneMap, half_width: f64) -> [Option<LaneProj>; 2] {
        let lw = map.lane_at(self.current.lane).width() * 0.5;
        let d = self.current.d;
        let extra = if d + half_width > lw + OCCUPANCY_INTRUSION {
            self.left
        } else if -d + half_width > lw + OCCUPANCY_INTRUSION {
            self.right
        } else {
            None
        };
        [Some(self.current), extra]
    }
}

/// Lane placements for every vehicle of a world, parallel to
/// `WorldState::vehicles`, with the lanes each body occupies.
#[derive(Debug, Clone, Default)]
pub struct LaneIndex {
    placements: Vec<Option<Placement>>,
    occupancy: Vec<[Option<LaneProj>; 2]>,
}

/// Closest vehicle ahead and behind in one lane. Gaps are bumper-to-bumper.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaneNeighbors {
    pub leader: Option<(usize, f64)>,
    pub follower: Option<(usize, f64)>,
}

fn occupancy_of(map: &LaneMap, p: &Option<Placement>, v: &Vehicle) -> [Option<LaneProj>; 2] {
    match p {
        Some(p) => p.occupied(map, 0.5 * v.params.width),
        None => [None, None],
    }
}

impl LaneIndex {
    pub fn build(world: &WorldState) -> Self {
        let placements: Vec<_> = world
            .vehicles
            .iter()
            .map(|v| Placement::locate(&world.map, v.state.position, v.state.heading))
            .collect();
        Self::from_placements(world, placements)
    }

    pub fn from_placements(world: &WorldState, placements: Vec<Option<Placement>>) -> Self {
        let occupancy = placements
            .iter()
            .zip(&world.vehicles)
            .map(|(p, v)| occupancy_of(&world.map, p, v))
            .collect();
        Self {
            placements,
            occupancy,
        }
    }

    pub fn refresh(&mut self, world: &WorldState) {
        for i in 0..self.placements.len() {
            self.refresh_one(world, i);
        }
    }

    pub fn refresh_one(&mut self, world: &WorldState, i: usize) {
        let v = &world.vehicles[i];
        self.placements[i] = match &self.placements[i] {
            Some(p) => p.update(&world.map, v.state.position, v.state.heading),
            None => Placement::locate(&world.map, v.state.position, v.state.heading),
        };
        self.occupancy[i] = occupancy_of(&world.map, &self.placements[i], v);
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<&Placement> {
        self.placements.get(i).and_then(|p| p.as_ref())
    }

    pub fn placements(&self) -> &[Option<Placement>] {
        &self.placements
    }

    /// Lanes occupied by vehicle `i`.
    #[inline]
    pub fn occupied(&self, i: usize) -> impl Iterator<Item = &LaneProj> {
        self.occupancy[i].iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    /// Leader and follower of vehicle `i` among vehicles occupying `lane` (or
    /// its successor/predecessor chain).
    pub fn neighbors_in_lane(&self, world: &WorldState, i: usize, lane: usize) -> LaneNeighbors {
        self.neighbors_with(world, i, lane, |_| true)
    }

    /// As `neighbors_in_lane`, restricted to vehicles accepted by `filter`.
    pub fn neighbors_with(
        &self,
        world: &WorldState,
        i: usize,
        lane: usize,
        filter: impl Fn(usize) -> bool,
    ) -> LaneNeighbors {
        let Some(s_ref) = self.get(i).and_then(|me| me.s_along(&world.map, lane)) else {
            return LaneNeighbors::default();
        };
        self.neighbors_at(world, lane, s_ref, world.vehicles[i].params.length, |j| {
            j != i && filter(j)
        })
    }

    /// Leader and follower around arc length `s_ref` on `lane` for a body of
    /// the given length.
    pub fn neighbors_at(
        &self,
        world: &WorldState,
        lane: usize,
        s_ref: f64,
        length: f64,
        filter: impl Fn(usize) -> bool,
    ) -> LaneNeighbors {
        let map = &world.map;
        let mut out = LaneNeighbors::default();
        let my_half = 0.5 * length;
        for (j, occ) in self.occupancy.iter().enumerate() {
            if occ[0].is_none() || !filter(j) {
                continue;
            }
            let mut best: Option<f64> = None;
            for o in occ.iter().flatten() {
                if let Some(ds) = map.longitudinal_offset(lane, s_ref, o.lane, o.s) {
                    if best.map_or(true, |b: f64| ds.abs() < b.abs()) {
                        best = Some(ds);
                    }
                }
            }
            let Some(ds) = best else { continue };
            let gap = ds.abs() - my_half - 0.5 * world.vehicles[j].params.length;
            if ds >= 0.0 {
                if out.leader.map_or(true, |(_, g)| gap < g) {
                    out.leader = Some((j, gap));
                }
            } else if out.follower.map_or(true, |(_, g)| gap < g) {
                out.follower = Some((j, gap));
            }
        }
        out
    }

    /// Signed center distance from `a` to `b` along a lane both occupy, if
    /// any. Positive when `b` is ahead of `a`.
    pub fn shared_lane_offset(&self, map: &LaneMap, a: usize, b: usize) -> Option<f64> {
        shared_offset(map, &self.occupancy[a], &self.occupancy[b])
    }
}

/// Signed center distance between two occupancy sets along a lane both
/// occupy.
pub fn shared_offset(
    map: &LaneMap,
    a: &[Option<LaneProj>; 2],
    b: &[Option<LaneProj>; 2],
) -> Option<f64> {
    let mut best: Option<f64> = None;
    for oa in a.iter().flatten() {
        for ob in b.iter().flatten() {
            if let Some(ds) = map.longitudinal_offset(oa.lane, oa.s, ob.lane, ob.s) {
                if best.map_or(true, |x: f64| ds.abs() < x.abs()) {
                    best = Some(ds);
                }
            }
        }
    }
    best
}

/// Leader and follower of a vehicle within a lane, by id.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SurroundingVehicles {
    pub leader: Option<(VehicleId, f64)>,
    pub follower: Option<(VehicleId, f64)>,
}

/// Nearest vehicles ahead of and behind `reference` on `lane`.
pub fn surrounding_vehicles(
    world: &WorldState,
    reference: VehicleId,
    lane: LaneId,
) -> SurroundingVehicles {
    let (Some(i), Some(lane)) = (world.index_of(reference), world.map.index_of(lane)) else {
        return SurroundingVehicles::default();
    };
    let index = LaneIndex::build(world);
    let n = index.neighbors_in_lane(world, i, lane);
    SurroundingVehicles {
        leader: n.leader.map(|(j, g)| (world.vehicles[j].id, g)),
        follower: n.follower.map(|(j, g)| (world.vehicles[j].id, g)),
    }
}
