//! Forward simulation of every vehicle on the lane map.
//!
//! Vehicles follow a target lane with pure pursuit and a target speed with the
//! intelligent driver model. In closed loop every vehicle brakes for leaders
//! on its current and target lanes; in open loop nobody reacts to anyone.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dcp_tree::PolicySequence;
use crate::geometry::{normalize_angle, Vec2};
use crate::map::{LaneId, LaneMap, MapError};
use crate::models::{idm_or_brake, rss_min_safe_gap, steer_toward, IdmParams, Leader, ModelParams, RssParams};
use crate::noise::{NoiseParams, NoiseStream};
use crate::world::{
    shared_offset, Intention, LaneIndex, LaneProj, Lateral, Longitudinal, Placement,
    SemanticAction, Vehicle, VehicleId, VehicleState, WorldState,
};

/// Distance ahead within which a lane end acts as a stopped obstacle.
pub const LANE_END_HORIZON: f64 = 120.0;
/// Velocity offset applied by Accelerate and Decelerate.
pub const SPEED_STEP: f64 = 5.0;
/// Accelerate never targets more than this multiple of the speed limit.
pub const SPEED_LIMIT_FACTOR: f64 = 1.2;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown {0}")]
    UnknownVehicle(VehicleId),
    #[error("{0} does not project onto any lane")]
    OffMap(VehicleId),
    #[error(transparent)]
    Map(#[from] MapError),
}

/// Desired speed for a longitudinal behavior started at speed `v`.
pub fn velocity_target(lon: Longitudinal, v: f64, speed_limit: f64) -> f64 {
    match lon {
        Longitudinal::Maintain => v,
        Longitudinal::Accelerate => (v + SPEED_STEP).min(SPEED_LIMIT_FACTOR * speed_limit),
        Longitudinal::Decelerate => (v - SPEED_STEP).max(0.0),
    }
}

/// Lane and speed a vehicle is steering toward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub lane: usize,
    pub velocity: f64,
}

impl Targets {
    pub fn lane_id(&self, map: &LaneMap) -> LaneId {
        map.lane_at(self.lane).id()
    }
}

/// Moves `base` forward along its successors to the lane segment alongside
/// the vehicle.
pub fn follow_chain(map: &LaneMap, place: &Placement, base: usize) -> usize {
    let mut lane = base;
    for _ in 0..4 {
        let l = map.lane_at(lane);
        if l.is_closed() {
            break;
        }
        let Some(next) = map.successor_index(lane) else { break };
        match place.s_along(map, lane) {
            Some(s) if s > l.length() => lane = next,
            _ => break,
        }
    }
    lane
}

/// Lane reached by `lateral` from `base`; `None` when the neighbor is absent.
pub fn resolve_lateral(map: &LaneMap, place: &Placement, base: usize, lateral: Lateral) -> Option<usize> {
    let base = if place.s_along(map, base).is_some() {
        follow_chain(map, place, base)
    } else {
        place.current.lane
    };
    match lateral.side() {
        None => Some(base),
        Some(side) => map.neighbor_index(base, side),
    }
}

/// Targets for an action started now. Components equal to the previous
/// action's keep the previous targets.
pub fn resolve_action(
    map: &LaneMap,
    place: &Placement,
    velocity: f64,
    action: &SemanticAction,
    prev: Option<(&SemanticAction, Targets)>,
) -> Targets {
    let lane = match prev {
        Some((pa, pt)) if pa.lateral == action.lateral => {
            if place.s_along(map, pt.lane).is_some() {
                follow_chain(map, place, pt.lane)
            } else {
                pt.lane
            }
        }
        Some((_, pt)) => resolve_lateral(map, place, pt.lane, action.lateral).unwrap_or(pt.lane),
        None => resolve_lateral(map, place, place.current.lane, action.lateral)
            .unwrap_or(place.current.lane),
    };
    let velocity = match prev {
        Some((pa, pt)) if pa.longitudinal == action.longitudinal => pt.velocity,
        _ => velocity_target(action.longitudinal, velocity, map.lane_at(lane).speed_limit()),
    };
    Targets { lane, velocity }
}

/// Targets for an agent following `intention` at its current speed.
pub fn resolve_intention(
    map: &LaneMap,
    place: &Placement,
    velocity: f64,
    intention: Intention,
) -> Option<Targets> {
    let lane = resolve_lateral(map, place, place.current.lane, intention)?;
    Some(Targets { lane, velocity })
}

/// Executes a policy sequence node by node.
#[derive(Debug, Clone)]
pub struct SequenceProgram {
    actions: Vec<SemanticAction>,
    ends: Vec<f64>,
    node: Option<usize>,
    preset: Option<Targets>,
    /// Targets chosen at the start of each node reached so far.
    pub resolved: Vec<Targets>,
}

impl SequenceProgram {
    pub fn new(sequence: &PolicySequence, root: Option<Targets>) -> Self {
        let mut t = 0.0;
        let ends = sequence
            .actions
            .iter()
            .map(|a| {
                t += a.duration;
                t
            })
            .collect();
        Self {
            actions: sequence.actions.clone(),
            ends,
            node: None,
            preset: root,
            resolved: Vec::with_capacity(sequence.actions.len()),
        }
    }

    /// Advances to the node active at local time `t`, resolving targets on
    /// entry.
    fn update(&mut self, t: f64, map: &LaneMap, place: Option<&Placement>, v: f64, current: Targets) -> Targets {
        let mut targets = current;
        loop {
            let next = match self.node {
                None => 0,
                Some(k) if k + 1 < self.actions.len() && t >= self.ends[k] - 1e-9 => k + 1,
                Some(_) => return targets,
            };
            let action = self.actions[next];
            targets = match (next, self.preset, place) {
                (0, Some(p), _) => p,
                (_, _, None) => targets,
                (0, None, Some(pl)) => resolve_action(map, pl, v, &action, None),
                (k, _, Some(pl)) => {
                    resolve_action(map, pl, v, &action, Some((&self.actions[k - 1], targets)))
                }
            };
            self.node = Some(next);
            self.resolved.push(targets);
        }
    }
}

#[derive(Debug, Clone)]
pub enum Program {
    Hold(Targets),
    Sequence(SequenceProgram),
}

#[derive(Debug, Clone)]
struct Driver {
    program: Program,
    targets: Targets,
    reactive: bool,
    noise: Option<NoiseStream>,
    idm: IdmParams,
}

/// One collision between vehicles `a < b` (indices into the world).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contact {
    pub a: usize,
    pub b: usize,
}

/// Stateful multi-vehicle integrator.
#[derive(Debug, Clone)]
pub struct Simulator<'p> {
    pub world: WorldState,
    index: LaneIndex,
    drivers: Vec<Driver>,
    params: &'p ModelParams,
    elapsed: f64,
}

impl<'p> Simulator<'p> {
    /// Every vehicle initially holds its lane and speed, reacting to others.
    pub fn new(world: WorldState, params: &'p ModelParams) -> Self {
        let index = LaneIndex::build(&world);
        Self::with_index(world, index, params)
    }

    pub fn with_index(world: WorldState, index: LaneIndex, params: &'p ModelParams) -> Self {
        let drivers = world
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let lane = index.get(i).map_or(0, |p| p.current.lane);
                let targets = Targets {
                    lane,
                    velocity: v.state.velocity,
                };
                Driver {
                    program: Program::Hold(targets),
                    targets,
                    reactive: true,
                    noise: None,
                    idm: params.idm,
                }
            })
            .collect();
        Self {
            world,
            index,
            drivers,
            params,
            elapsed: 0.0,
        }
    }

    pub fn index(&self) -> &LaneIndex {
        &self.index
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn set_program(&mut self, i: usize, program: Program) {
        if let Program::Hold(t) = &program {
            self.drivers[i].targets = *t;
        }
        self.drivers[i].program = program;
    }

    pub fn program(&self, i: usize) -> &Program {
        &self.drivers[i].program
    }

    pub fn targets(&self, i: usize) -> Targets {
        self.drivers[i].targets
    }

    pub fn set_reactive(&mut self, i: usize, reactive: bool) {
        self.drivers[i].reactive = reactive;
    }

    pub fn set_noise(&mut self, i: usize, noise: Option<NoiseStream>) {
        self.drivers[i].noise = noise;
    }

    pub fn set_idm(&mut self, i: usize, idm: IdmParams) {
        self.drivers[i].idm = idm;
    }

    /// Overwrites the state of a vehicle driven from outside.
    pub fn set_state(&mut self, i: usize, state: VehicleState) {
        self.world.vehicles[i].state = state;
        self.index.refresh_one(&self.world, i);
    }

    pub fn into_parts(self) -> (WorldState, LaneIndex) {
        (self.world, self.index)
    }

    /// Advances by `dt` in `params.substeps` substeps. Returns contacts seen
    /// at any substep.
    pub fn step(&mut self, dt: f64) -> Vec<Contact> {
        let n = self.params.substeps.max(1);
        let h = dt / n as f64;
        let mut contacts = Vec::new();
        let mut cmds = vec![(0.0, 0.0); self.world.vehicles.len()];
        for _ in 0..n {
            for i in 0..self.world.vehicles.len() {
                self.update_program(i);
            }
            for (i, cmd) in cmds.iter_mut().enumerate() {
                *cmd = self.command(i);
            }
            for (i, &(acc, steer)) in cmds.iter().enumerate() {
                let (acc, steer) = match self.drivers[i].noise.as_mut() {
                    Some(noise) => {
                        let (na, ns) = noise.sample();
                        (acc + na, steer + ns)
                    }
                    None => (acc, steer),
                };
                let max_steer = self.params.pure_pursuit.max_steer;
                let rate = self.params.max_steer_rate * h;
                let v = &mut self.world.vehicles[i];
                integrate(v, acc, steer, h, max_steer, rate);
            }
            self.elapsed += h;
            self.world.time += h;
            self.index.refresh(&self.world);
            collect_contacts(&self.world, &mut contacts);
        }
        contacts.sort_by_key(|c| (c.a, c.b));
        contacts.dedup();
        contacts
    }

    fn update_program(&mut self, i: usize) {
        let d = &mut self.drivers[i];
        if let Program::Sequence(prog) = &mut d.program {
            let v = self.world.vehicles[i].state.velocity;
            d.targets = prog.update(self.elapsed, &self.world.map, self.index.get(i), v, d.targets);
        }
    }

    fn command(&self, i: usize) -> (f64, f64) {
        let map = &*self.world.map;
        let veh = &self.world.vehicles[i];
        let driver = &self.drivers[i];
        let Some(place) = self.index.get(i) else {
            return (0.0, veh.state.steering);
        };
        let t = driver.targets;
        let idm = driver.idm.with_desired_velocity(t.velocity);
        let half_len = 0.5 * veh.params.length;
        let v = veh.state.velocity;

        let target_s = place.s_along(map, t.lane);
        let mut acc = idm_or_brake(v, None, &idm);
        let mut consider = |lane: usize, s: f64, end_matters: bool| {
            if driver.reactive {
                let n = self.index.neighbors_at(&self.world, lane, s, veh.params.length, |j| j != i);
                if let Some((j, gap)) = n.leader {
                    let l = Leader {
                        velocity: self.world.vehicles[j].state.velocity,
                        gap,
                    };
                    acc = acc.min(idm_or_brake(v, Some(l), &idm));
                }
            }
            if end_matters {
                let to_end = map.distance_to_end(lane, s, LANE_END_HORIZON);
                if to_end < LANE_END_HORIZON {
                    let l = Leader {
                        velocity: 0.0,
                        gap: to_end - half_len,
                    };
                    acc = acc.min(idm_or_brake(v, Some(l), &idm));
                }
            }
        };
        let cur = place.current;
        match target_s {
            Some(s) => {
                consider(t.lane, s, true);
                if cur.lane != t.lane {
                    consider(cur.lane, cur.s, false);
                }
            }
            None => consider(cur.lane, cur.s, true),
        }

        let (lane, s) = match target_s {
            Some(s) => (t.lane, s),
            None => (cur.lane, cur.s),
        };
        let pp = &self.params.pure_pursuit;
        let target = lookahead_extrapolated(map, lane, s, pp.lookahead(v));
        let steer = steer_toward(
            veh.state.position,
            veh.state.heading,
            target,
            veh.params.wheelbase,
            pp.max_steer,
        );
        let acc = acc.clamp(-veh.params.max_decel, veh.params.max_accel);
        (acc, steer)
    }
}

/// Centerline point `dist` ahead, continuing straight past a dead end.
pub fn lookahead_extrapolated(map: &LaneMap, lane: usize, s: f64, dist: f64) -> Vec2 {
    if let Some((l, s2)) = map.advance(lane, s, dist) {
        return map.lane_at(l).point_at(s2, 0.0);
    }
    let mut l = lane;
    let mut remaining = s + dist;
    for _ in 0..5 {
        let len = map.lane_at(l).length();
        match map.successor_index(l) {
            Some(next) if remaining > len => {
                remaining -= len;
                l = next;
            }
            _ => break,
        }
    }
    let lane = map.lane_at(l);
    let (end, heading) = lane.pose_at(lane.length());
    end + Vec2::from_angle(heading) * (remaining - lane.length()).max(0.0)
}

/// Kinematic bicycle step about the body center.
fn integrate(v: &mut Vehicle, acc: f64, steer_cmd: f64, h: f64, max_steer: f64, max_dsteer: f64) {
    let st = &mut v.state;
    let steer = (st.steering + (steer_cmd - st.steering).clamp(-max_dsteer, max_dsteer))
        .clamp(-max_steer, max_steer);
    let v0 = st.velocity;
    let v1 = (v0 + acc * h).max(0.0);
    let vm = 0.5 * (v0 + v1);
    let curvature = steer.tan() / v.params.wheelbase;
    let dtheta = vm * curvature * h;
    let mid = st.heading + 0.5 * dtheta;
    st.position += Vec2::from_angle(mid) * (vm * h);
    st.heading = normalize_angle(st.heading + dtheta);
    st.velocity = v1;
    st.acceleration = (v1 - v0) / h;
    st.steering = steer;
    st.curvature = curvature;
}

/// Every overlapping pair of footprints.
pub fn contacts(world: &WorldState) -> Vec<Contact> {
    let mut out = Vec::new();
    collect_contacts(world, &mut out);
    out
}

fn collect_contacts(world: &WorldState, out: &mut Vec<Contact>) {
    let boxes: Vec<_> = world.vehicles.iter().map(|v| v.footprint()).collect();
    for a in 0..boxes.len() {
        for b in a + 1..boxes.len() {
            if boxes[a].overlaps(&boxes[b]) {
                out.push(Contact { a, b });
            }
        }
    }
}

/// Per-step safety annotation relative to the ego.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepAnnotation {
    /// Smallest bumper gap to a vehicle sharing a lane with the ego.
    pub min_gap: Option<f64>,
    /// Largest amount by which a shared-lane gap falls short of the safe gap.
    pub rss_shortfall: f64,
}

/// Gap and safe-gap deficit between the ego and vehicle `j` from their lane
/// occupancy, if they share a lane.
pub fn pair_gap(
    map: &LaneMap,
    ego: (&Vehicle, &[Option<LaneProj>; 2]),
    other: (&Vehicle, &[Option<LaneProj>; 2]),
    rss: &RssParams,
) -> Option<(f64, f64)> {
    let ds = shared_offset(map, ego.1, other.1)?;
    let (e, o) = (ego.0, other.0);
    let gap = ds.abs() - 0.5 * (e.params.length + o.params.length);
    let safe = if ds >= 0.0 {
        rss_min_safe_gap(e.state.velocity, o.state.velocity, rss)
    } else {
        rss_min_safe_gap(o.state.velocity, e.state.velocity, rss)
    };
    Some((gap, (safe - gap).max(0.0)))
}

pub fn annotate(world: &WorldState, index: &LaneIndex, ego: usize, rss: &RssParams) -> StepAnnotation {
    let mut out = StepAnnotation::default();
    let occ = |i: usize| -> [Option<LaneProj>; 2] {
        let mut it = index.occupied(i);
        [it.next().copied(), it.next().copied()]
    };
    let e_occ = occ(ego);
    for j in 0..world.vehicles.len() {
        if j == ego {
            continue;
        }
        let o_occ = occ(j);
        if let Some((gap, short)) = pair_gap(
            &world.map,
            (&world.vehicles[ego], &e_occ),
            (&world.vehicles[j], &o_occ),
            rss,
        ) {
            out.min_gap = Some(out.min_gap.map_or(gap, |g: f64| g.min(gap)));
            out.rss_shortfall = out.rss_shortfall.max(short);
        }
    }
    out
}

/// Time-indexed forward simulation result. `states[k]` is at
/// `start + (k + 1) * step`.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub step: f64,
    pub start: f64,
    pub states: Vec<WorldState>,
    pub annotations: Vec<StepAnnotation>,
    /// Any two footprints overlapped at some substep.
    pub collision: bool,
    /// The ego was part of an overlap.
    pub ego_collision: bool,
    /// Ego targets chosen at each node start.
    pub node_targets: Vec<Targets>,
}

impl Rollout {
    pub fn timestamps(&self) -> Vec<f64> {
        self.states.iter().map(|w| w.time).collect()
    }

    pub fn rss_violation(&self) -> bool {
        self.annotations.iter().any(|a| a.rss_shortfall > 0.0)
    }

    /// Ego states along the rollout.
    pub fn ego_trace(&self) -> Vec<VehicleState> {
        self.states
            .iter()
            .filter_map(|w| w.ego_vehicle().map(|v| v.state))
            .collect()
    }
}

/// Runs `sim` for `steps` steps of `step` seconds, recording every step.
pub fn record_rollout(sim: &mut Simulator, ego: usize, steps: usize, step: f64) -> Rollout {
    let start = sim.world.time;
    let mut states = Vec::with_capacity(steps);
    let mut annotations = Vec::with_capacity(steps);
    let mut collision = false;
    let mut ego_collision = false;
    for _ in 0..steps {
        let contacts = sim.step(step);
        collision |= !contacts.is_empty();
        ego_collision |= contacts.iter().any(|c| c.a == ego || c.b == ego);
        annotations.push(annotate(&sim.world, &sim.index, ego, &sim.params.rss));
        states.push(sim.world.clone());
    }
    let node_targets = match sim.program(ego) {
        Program::Sequence(p) => p.resolved.clone(),
        Program::Hold(t) => vec![*t],
    };
    Rollout {
        step,
        start,
        states,
        annotations,
        collision,
        ego_collision,
        node_targets,
    }
}

/// Behavior assigned to one vehicle for a single closed-loop step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Behavior {
    Action(SemanticAction),
    Intention(Intention),
}

/// One closed-loop step of `dt` with fresh targets from `behaviors`
/// (parallel to `world.vehicles`).
pub fn step_closed_loop(
    world: &WorldState,
    behaviors: &[Behavior],
    dt: f64,
    params: &ModelParams,
    noise: &NoiseParams,
) -> Result<WorldState, SimError> {
    let mut sim = Simulator::new(world.clone(), params);
    for (i, b) in behaviors.iter().enumerate() {
        let v = &world.vehicles[i];
        let place = *sim.index.get(i).ok_or(SimError::OffMap(v.id))?;
        let targets = match b {
            Behavior::Action(a) => resolve_action(&world.map, &place, v.state.velocity, a, None),
            Behavior::Intention(int) => resolve_intention(&world.map, &place, v.state.velocity, *int)
                .ok_or(MapError::NoSuchNeighbor(
                    world.map.lane_at(place.current.lane).id(),
                    int.side().expect("lane keeping always resolves"),
                ))?,
        };
        sim.set_program(i, Program::Hold(targets));
        if !noise.is_silent() {
            sim.set_noise(i, Some(noise.stream(&[world.time.to_bits(), v.id.0 as u64])));
        }
    }
    sim.step(dt);
    Ok(sim.world)
}

/// Trajectory of one vehicle simulated alone, sampled every substep.
#[derive(Debug, Clone)]
pub struct Track {
    pub dt: f64,
    pub vehicle: Vehicle,
    pub states: Vec<VehicleState>,
    pub occupancy: Vec<[Option<LaneProj>; 2]>,
    pub node_targets: Vec<Targets>,
}

/// Simulates vehicle `i` alone, ignoring everyone else.
pub fn open_loop_track(
    world: &WorldState,
    place: Option<Placement>,
    i: usize,
    program: Program,
    horizon: f64,
    step: f64,
    params: &ModelParams,
) -> Track {
    let vehicle = world.vehicles[i];
    let solo = WorldState {
        time: world.time,
        ego: vehicle.id,
        vehicles: vec![vehicle],
        map: world.map.clone(),
    };
    let index = LaneIndex::from_placements(&solo, vec![place]);
    let sub_params = ModelParams {
        substeps: 1,
        ..*params
    };
    let mut sim = Simulator::with_index(solo, index, &sub_params);
    sim.set_program(0, program);
    sim.set_reactive(0, false);
    let substeps = params.substeps.max(1);
    let steps = (horizon / step).round() as usize;
    let n = steps * substeps;
    let h = step / substeps as f64;
    let mut states = Vec::with_capacity(n);
    let mut occupancy = Vec::with_capacity(n);
    for _ in 0..n {
        sim.step(h);
        states.push(sim.world.vehicles[0].state);
        let mut it = sim.index.occupied(0);
        occupancy.push([it.next().copied(), it.next().copied()]);
    }
    let node_targets = match sim.program(0) {
        Program::Sequence(p) => p.resolved.clone(),
        Program::Hold(t) => vec![*t],
    };
    Track {
        dt: h,
        vehicle,
        states,
        occupancy,
        node_targets,
    }
}

/// Outcome of comparing two open-loop tracks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairCheck {
    pub collision: bool,
    pub rss_violation: bool,
    pub min_gap: Option<f64>,
}

/// Compares two tracks sampled on the same clock. Safe-gap checks run every
/// `every` samples.
pub fn check_tracks(map: &LaneMap, ego: &Track, other: &Track, every: usize, rss: &RssParams) -> PairCheck {
    let mut out = PairCheck::default();
    let mut e = ego.vehicle;
    let mut o = other.vehicle;
    let reach = e.footprint().bounding_radius() + o.footprint().bounding_radius();
    for k in 0..ego.states.len().min(other.states.len()) {
        e.state = ego.states[k];
        o.state = other.states[k];
        if (e.state.position - o.state.position).norm_sq() < reach * reach
            && e.footprint().overlaps(&o.footprint())
        {
            out.collision = true;
        }
        if (k + 1) % every == 0 {
            if let Some((gap, short)) = pair_gap(map, (&e, &ego.occupancy[k]), (&o, &other.occupancy[k]), rss) {
                out.min_gap = Some(out.min_gap.map_or(gap, |g: f64| g.min(gap)));
                out.rss_violation |= short > 0.0;
            }
        }
    }
    out
}

/// Open-loop rollout: the ego runs `ego_policy`, `vehicle` follows
/// `hypothesis`, everyone else holds lane and speed, and nobody reacts.
pub fn simulate_open_loop(
    world: &WorldState,
    vehicle: VehicleId,
    hypothesis: Intention,
    ego_policy: &PolicySequence,
    horizon: f64,
    step: f64,
    params: &ModelParams,
) -> Result<Rollout, SimError> {
    let map = &*world.map;
    let index = LaneIndex::build(world);
    let ego = world.ego_index().ok_or(SimError::UnknownVehicle(world.ego))?;
    let hyp = world.index_of(vehicle).ok_or(SimError::UnknownVehicle(vehicle))?;
    let mut tracks = Vec::with_capacity(world.vehicles.len());
    for (i, v) in world.vehicles.iter().enumerate() {
        let place = index.get(i).copied();
        let program = if i == ego {
            Program::Sequence(SequenceProgram::new(ego_policy, None))
        } else {
            let p = place.ok_or(SimError::OffMap(v.id))?;
            let intention = if i == hyp { hypothesis } else { Lateral::LaneKeep };
            let t = resolve_intention(map, &p, v.state.velocity, intention).ok_or_else(|| {
                MapError::NoSuchNeighbor(
                    map.lane_at(p.current.lane).id(),
                    intention.side().expect("lane keeping always resolves"),
                )
            })?;
            Program::Hold(t)
        };
        tracks.push(open_loop_track(world, place, i, program, horizon, step, params));
    }
    let substeps = params.substeps.max(1);
    let steps = (horizon / step).round() as usize;
    let mut collision = false;
    let mut ego_collision = false;
    for a in 0..tracks.len() {
        for b in a + 1..tracks.len() {
            let c = check_tracks(map, &tracks[a], &tracks[b], substeps, &params.rss);
            collision |= c.collision;
            ego_collision |= c.collision && (a == ego || b == ego);
        }
    }
    let mut states = Vec::with_capacity(steps);
    let mut annotations = Vec::with_capacity(steps);
    for k in 0..steps {
        let sample = (k + 1) * substeps - 1;
        let mut w = world.clone();
        w.time = world.time + (k + 1) as f64 * step;
        for (v, t) in w.vehicles.iter_mut().zip(&tracks) {
            v.state = t.states[sample];
        }
        let mut ann = StepAnnotation::default();
        for (j, t) in tracks.iter().enumerate() {
            if j == ego {
                continue;
            }
            if let Some((gap, short)) = pair_gap(
                map,
                (&w.vehicles[ego], &tracks[ego].occupancy[sample]),
                (&w.vehicles[j], &t.occupancy[sample]),
                &params.rss,
            ) {
                ann.min_gap = Some(ann.min_gap.map_or(gap, |g: f64| g.min(gap)));
                ann.rss_shortfall = ann.rss_shortfall.max(short);
            }
        }
        annotations.push(ann);
        states.push(w);
    }
    Ok(Rollout {
        step,
        start: world.time,
        states,
        annotations,
        collision,
        ego_collision,
        node_targets: tracks[ego].node_targets.clone(),
    })
}
