//! The traffic environment: agents driven by their own randomized IDM, MOBIL
//! and pure-pursuit controllers, and an ego that plays back planner traces.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eudm_core::geometry::{lerp_angle, normalize_angle};
use eudm_core::models::{incentive_with, IdmParams, ModelParams};
use eudm_core::noise::{mix_key, NoiseParams};
use eudm_core::planner::{replan_loop, CycleRecord, Environment};
use eudm_core::simulation::{contacts, follow_chain, Program, Simulator, Targets};
use eudm_core::world::{LaneIndex, Placement};
use eudm_core::{LaneMap, Side, Vehicle, VehicleId, VehicleParams, VehicleState, WorldState};

use crate::episode::{EndReason, EpisodeFrame, EpisodeMeta, Event, FrameVehicle, PlanSummary};
use crate::maps::load_map;
use crate::metrics::{compute_metrics, BenchmarkMetrics};
use crate::scenario::{draw_agent_params, AgentParams, ScenarioConfig};
use crate::SimError;

pub const EGO_ID: VehicleId = VehicleId(0);

/// A lane change counts as finished this close to the target centerline.
const SETTLED_OFFSET: f64 = 0.3;
/// Lane changes not finished within this time are abandoned.
const CHANGE_TIMEOUT: f64 = 10.0;
/// A change is abandoned when the target lane gap shrinks below this before
/// the agent has crossed over.
const ABORT_GAP: f64 = 1.0;
/// Horizon used when comparing how far lanes continue.
const ROAD_HORIZON: f64 = 300.0;

#[derive(Debug, Clone)]
struct Agent {
    params: AgentParams,
    /// Lane being changed into, with the lane left and the start time.
    change: Option<(usize, usize, f64)>,
    last_change: f64,
}

/// Ego trace being played back: the start state followed by states every
/// `step` seconds.
#[derive(Debug, Clone)]
struct EgoPlan {
    start_time: f64,
    start: VehicleState,
    trace: Vec<VehicleState>,
    step: f64,
}

impl EgoPlan {
    fn state_at(&self, t: f64) -> VehicleState {
        let u = ((t - self.start_time) / self.step).max(0.0);
        let k = u.floor() as usize;
        if self.trace.is_empty() {
            return self.start;
        }
        if k >= self.trace.len() {
            return *self.trace.last().expect("nonempty");
        }
        let a = if k == 0 { self.start } else { self.trace[k - 1] };
        let b = self.trace[k];
        let f = u - k as f64;
        let lerp = |x: f64, y: f64| x + (y - x) * f;
        VehicleState {
            position: a.position.lerp(b.position, f),
            heading: lerp_angle(a.heading, b.heading, f),
            velocity: lerp(a.velocity, b.velocity),
            acceleration: (b.velocity - a.velocity) / self.step,
            steering: lerp(a.steering, b.steering),
            curvature: lerp(a.curvature, b.curvature),
        }
    }
}

/// Finished episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub frames: Vec<EpisodeFrame>,
    pub end: EndReason,
    pub metrics: BenchmarkMetrics,
    pub cycles: usize,
    pub decision_switches: usize,
}

/// One authoritative world, stepped single-threaded.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: ScenarioConfig,
    world: WorldState,
    index: LaneIndex,
    agents: BTreeMap<VehicleId, Agent>,
    models: ModelParams,
    noise: NoiseParams,
    ego_idm: IdmParams,
    plan: Option<EgoPlan>,
    frame: u64,
    next_id: u32,
    spawn_rng: ChaCha8Rng,
    entries: Vec<(usize, f64)>,
    touching: BTreeSet<(u32, u32)>,
    emergency_since: Option<f64>,
    frames: Vec<EpisodeFrame>,
    end: Option<EndReason>,
}

/// Lane curvature at `s`, from the heading change over two meters.
fn lane_curvature(map: &LaneMap, lane: usize, s: f64) -> f64 {
    let l = map.lane_at(lane);
    let (a, b) = (l.wrap_s(s - 1.0), l.wrap_s(s + 1.0));
    if b <= a {
        return 0.0;
    }
    normalize_angle(l.pose_at(b).1 - l.pose_at(a).1) / (b - a)
}

fn place_vehicle(map: &LaneMap, id: VehicleId, params: VehicleParams, lane: usize, s: f64, v: f64) -> Vehicle {
    let l = map.lane_at(lane);
    let (p, heading) = l.pose_at(s);
    let mut state = VehicleState::new(p, heading, v);
    state.curvature = lane_curvature(map, lane, s);
    state.steering = (state.curvature * params.wheelbase).atan();
    Vehicle::new(id, params, state)
}

/// Whether the vehicle is at the end of the road rather than at the end of a
/// lane it can still leave sideways.
fn at_exit(map: &LaneMap, place: &Placement, margin: f64) -> bool {
    let cur = place.current;
    let d = map.distance_to_end(cur.lane, cur.s, margin + 1.0);
    if d >= margin {
        return false;
    }
    ![place.left, place.right]
        .into_iter()
        .flatten()
        .any(|p| map.distance_to_end(p.lane, p.s, margin + 1.0) > d + 1.0)
}

impl Env {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, SimError> {
        let map = load_map(&cfg.map)?;
        let lane_of = |id| map.index_of(id).ok_or(SimError::UnknownLane(id));
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(cfg.seed, &[3]));

        let ego_lane = lane_of(cfg.ego.lane)?;
        let ego_params = VehicleParams {
            desired_velocity: cfg.ego.desired_velocity,
            ..Default::default()
        };
        let mut vehicles = vec![place_vehicle(&map, EGO_ID, ego_params, ego_lane, cfg.ego.s, cfg.ego.velocity)];
        let mut agents = BTreeMap::new();
        for (k, spec) in cfg.agents.iter().enumerate() {
            let lane = lane_of(spec.lane)?;
            let limit = map.lane_at(lane).speed_limit();
            let params = spec
                .params
                .unwrap_or_else(|| draw_agent_params(&mut rng, &cfg.traffic, limit));
            let id = VehicleId(k as u32 + 1);
            vehicles.push(place_vehicle(&map, id, agent_vehicle_params(&params), lane, spec.s, spec.velocity));
            agents.insert(
                id,
                Agent {
                    params,
                    change: None,
                    last_change: f64::NEG_INFINITY,
                },
            );
        }
        let world = WorldState::new(map.clone(), 0.0, EGO_ID, vehicles);
        if let Some(c) = contacts(&world).first() {
            return Err(SimError::InitialOverlap(world.vehicles[c.a].id, world.vehicles[c.b].id));
        }
        let index = LaneIndex::build(&world);
        if index.get(0).is_none() {
            return Err(SimError::Plan(eudm_core::planner::PlanError::EgoOffMap));
        }

        let mut spawn_rng = ChaCha8Rng::seed_from_u64(mix_key(cfg.seed, &[4]));
        let entries = match cfg.traffic.spawn_interval {
            Some(interval) if interval > 0.0 => entry_lanes(&map)
                .into_iter()
                .map(|l| (l, interval * spawn_rng.gen_range(0.5..1.5)))
                .collect(),
            _ => Vec::new(),
        };
        let models = ModelParams {
            substeps: 1,
            ..cfg.planner.models
        };
        let noise = NoiseParams {
            accel_noise_std: 1.0,
            steer_noise_std: 1.0,
            seed: mix_key(cfg.seed, &[5]),
        };
        let ego_idm = cfg.planner.models.idm.with_desired_velocity(cfg.ego.desired_velocity);
        let next_id = cfg.agents.len() as u32 + 1;
        let mut env = Self {
            cfg,
            world,
            index,
            agents,
            models,
            noise,
            ego_idm,
            plan: None,
            frame: 0,
            next_id,
            spawn_rng,
            entries,
            touching: BTreeSet::new(),
            emergency_since: None,
            frames: Vec::new(),
            end: None,
        };
        let meta = EpisodeMeta {
            map: env.cfg.map.clone(),
            ego: EGO_ID.0,
            mode: env.cfg.planner.mode,
            seed: env.cfg.seed,
            dt: env.cfg.dt,
            thresholds: env.cfg.thresholds,
        };
        env.record(Vec::new());
        env.frames[0].meta = Some(meta);
        Ok(env)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn frames(&self) -> &[EpisodeFrame] {
        &self.frames
    }

    pub fn end(&self) -> Option<EndReason> {
        self.end
    }

    /// What the ego perceives: every vehicle within sensor range.
    pub fn observation(&self) -> WorldState {
        let Some(ego) = self.world.ego_vehicle() else {
            return self.world.clone();
        };
        let p = ego.state.position;
        let r = self.cfg.sensor_range;
        let vehicles = self
            .world
            .vehicles
            .iter()
            .filter(|v| v.state.position.distance(p) <= r)
            .cloned()
            .collect();
        WorldState::new(self.world.map.clone(), self.world.time, self.world.ego, vehicles)
    }

    pub fn time(&self) -> f64 {
        self.world.time
    }

    /// Starts playing back the trace of `record` from the current ego state.
    pub fn apply_plan(&mut self, record: &CycleRecord) {
        let Some(ego) = self.world.ego_vehicle() else { return };
        let start = ego.state;
        self.plan = Some(EgoPlan {
            start_time: self.world.time,
            start,
            trace: record.trace.clone(),
            step: self.cfg.planner.sim_resolution,
        });
        if record.emergency {
            let since = *self.emergency_since.get_or_insert(self.world.time);
            if self.world.time - since >= self.cfg.abort_after && start.velocity < 0.1 {
                self.finish(EndReason::NoFeasiblePolicy);
            }
        } else {
            self.emergency_since = None;
        }
        let summary = PlanSummary {
            selected: record.selected_label.clone(),
            emergency: record.emergency,
            risky: record.risky.iter().map(|(id, _)| id.0).collect(),
            trace: record.trace.iter().map(|s| [s.position.x, s.position.y]).collect(),
        };
        if let Some(f) = self.frames.last_mut() {
            f.plan = Some(summary);
        }
    }

    fn finish(&mut self, reason: EndReason) {
        if self.end.is_none() {
            self.end = Some(reason);
            if let Some(f) = self.frames.last_mut() {
                f.events.push(Event::End { reason });
            }
        }
    }

    fn idm_of(&self, j: usize) -> IdmParams {
        let id = self.world.vehicles[j].id;
        self.agents.get(&id).map_or(self.ego_idm, |a| a.params.idm)
    }

    /// Advances one environment step. Returns `false` once the episode has
    /// ended.
    pub fn step(&mut self) -> bool {
        if self.end.is_some() {
            return false;
        }
        let dt = self.cfg.dt;
        let mut events = Vec::new();
        self.settle_lane_changes(&mut events);
        self.decide_lane_changes();

        let map = self.world.map.clone();
        let mut sim = Simulator::with_index(self.world.clone(), self.index.clone(), &self.models);
        let ego = self.world.ego_index().expect("ego present while running");
        sim.set_reactive(ego, false);
        for (i, v) in self.world.vehicles.iter().enumerate() {
            let Some(agent) = self.agents.get(&v.id) else { continue };
            sim.set_idm(i, agent.params.idm);
            if let Some(place) = self.index.get(i) {
                let lane = agent.change.map_or(place.current.lane, |(to, _, _)| follow_chain(&map, place, to));
                let lane = follow_chain(&map, place, lane);
                sim.set_program(
                    i,
                    Program::Hold(Targets {
                        lane,
                        velocity: agent.params.idm.desired_velocity,
                    }),
                );
            }
            let noise = NoiseParams {
                accel_noise_std: agent.params.accel_noise_std * self.noise.accel_noise_std,
                steer_noise_std: agent.params.steer_noise_std * self.noise.steer_noise_std,
                seed: self.noise.seed,
            };
            if !noise.is_silent() {
                sim.set_noise(i, Some(noise.stream(&[self.frame, v.id.0 as u64])));
            }
        }
        let agent_contacts = sim.step(dt);
        let t = sim.world.time;
        if let Some(plan) = &self.plan {
            sim.set_state(ego, plan.state_at(t));
        }
        let (world, index) = sim.into_parts();
        self.world = world;
        self.index = index;
        self.frame += 1;

        let mut now_touching = BTreeSet::new();
        for c in agent_contacts.iter().filter(|c| c.a != ego && c.b != ego) {
            let pair = (self.world.vehicles[c.a].id.0, self.world.vehicles[c.b].id.0);
            if !self.touching.contains(&pair) {
                events.push(Event::Collision { a: pair.0, b: pair.1 });
            }
            now_touching.insert(pair);
        }
        self.touching = now_touching;
        let ego_hit = contacts(&self.world)
            .into_iter()
            .find(|c| c.a == ego || c.b == ego)
            .map(|c| (self.world.vehicles[c.a].id.0, self.world.vehicles[c.b].id.0));

        let ego_exited = self.retire(&mut events);
        self.spawn(&mut events);
        self.record(events);

        if let Some((a, b)) = ego_hit {
            self.frames.last_mut().expect("recorded").events.push(Event::Collision { a, b });
            self.finish(EndReason::Collision);
        } else if ego_exited {
            self.finish(EndReason::EgoExited);
        } else if self.world.time >= self.cfg.duration - 1e-9 {
            self.finish(EndReason::Duration);
        }
        self.end.is_none()
    }

    /// Whether `lane` has room for vehicle `i` beside it. A tight gap only
    /// counts when it is closing, so stopped queues can still zip together.
    fn index_clear(&self, i: usize, lane: usize) -> bool {
        let n = self.index.neighbors_in_lane(&self.world, i, lane);
        let v = |j: usize| self.world.vehicles[j].state.velocity;
        let me = v(i);
        n.leader.map_or(true, |(j, g)| g > ABORT_GAP || (g > 0.0 && v(j) >= me))
            && n.follower.map_or(true, |(j, g)| g > ABORT_GAP || (g > 0.0 && v(j) <= me))
    }

    fn settle_lane_changes(&mut self, events: &mut Vec<Event>) {
        let map = self.world.map.clone();
        let t = self.world.time;
        let clear: Vec<bool> = (0..self.world.vehicles.len())
            .map(|i| {
                let id = self.world.vehicles[i].id;
                match (self.agents.get(&id).and_then(|a| a.change), self.index.get(i)) {
                    (Some((to, _, _)), Some(place)) => self.index_clear(i, follow_chain(&map, place, to)),
                    _ => true,
                }
            })
            .collect();
        for (i, v) in self.world.vehicles.iter().enumerate() {
            let Some(agent) = self.agents.get_mut(&v.id) else { continue };
            let Some((to, from, started)) = agent.change else { continue };
            let Some(place) = self.index.get(i) else { continue };
            let to = follow_chain(&map, place, to);
            if place.current.lane == to && place.current.d.abs() < SETTLED_OFFSET {
                agent.change = None;
                agent.last_change = t;
                events.push(Event::LaneChange {
                    id: v.id.0,
                    from: map.lane_at(from).id().0,
                    to: map.lane_at(to).id().0,
                });
            } else if t - started > CHANGE_TIMEOUT || (place.current.lane != to && !clear[i]) {
                agent.change = None;
                agent.last_change = t;
            }
        }
    }

    /// MOBIL decisions, staggered so each agent decides once per interval.
    fn decide_lane_changes(&mut self) {
        let traffic = self.cfg.traffic;
        let every = (traffic.decision_interval / self.cfg.dt).round().max(1.0) as u64;
        let map = self.world.map.clone();
        let t = self.world.time;
        let mut decisions = Vec::new();
        for (i, v) in self.world.vehicles.iter().enumerate() {
            let Some(agent) = self.agents.get(&v.id) else { continue };
            if agent.change.is_some()
                || (self.frame + v.id.0 as u64) % every != 0
                || t - agent.last_change < traffic.cooldown
            {
                continue;
            }
            let Some(place) = self.index.get(i) else { continue };
            let cur = place.current;
            let here = map.distance_to_end(cur.lane, cur.s, ROAD_HORIZON);
            let forced = here < traffic.forced_merge_distance;
            let mut best: Option<(f64, usize)> = None;
            for side in [Side::Left, Side::Right] {
                let Some(n) = map.neighbor_index(cur.lane, side) else { continue };
                let Some(p) = place.proj_on(n) else { continue };
                let there = map.distance_to_end(n, p.s, ROAD_HORIZON);
                if there < ROAD_HORIZON && there < here {
                    continue;
                }
                let Ok(inc) = incentive_with(&self.world, &self.index, i, side, &agent.params.mobil, |j, _| self.idm_of(j))
                else {
                    continue;
                };
                if !inc.safe {
                    continue;
                }
                let value = if forced && there > here + 20.0 {
                    f64::INFINITY
                } else {
                    inc.value
                };
                if value > agent.params.mobil.threshold && best.map_or(true, |(b, _)| value > b) {
                    best = Some((value, n));
                }
            }
            if let Some((_, n)) = best {
                decisions.push((v.id, n, cur.lane));
            }
        }
        for (id, to, from) in decisions {
            if let Some(a) = self.agents.get_mut(&id) {
                a.change = Some((to, from, t));
            }
        }
    }

    /// Removes agents that left the road. Returns whether the ego did.
    fn retire(&mut self, events: &mut Vec<Event>) -> bool {
        let map = self.world.map.clone();
        let margin = self.cfg.traffic.exit_margin;
        let mut ego_exited = false;
        let gone: Vec<bool> = self
            .world
            .vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let out = self.index.get(i).map_or(true, |p| at_exit(&map, p, margin));
                if v.id == EGO_ID {
                    ego_exited |= out;
                    false
                } else {
                    out
                }
            })
            .collect();
        if gone.iter().any(|&g| g) {
            let mut placements = Vec::new();
            let mut kept = Vec::new();
            for ((v, p), g) in self.world.vehicles.drain(..).zip(self.index.placements().iter().cloned()).zip(&gone) {
                if *g {
                    events.push(Event::Retired { id: v.id.0 });
                    self.agents.remove(&v.id);
                } else {
                    kept.push(v);
                    placements.push(p);
                }
            }
            self.world.vehicles = kept;
            self.index = LaneIndex::from_placements(&self.world, placements);
        }
        ego_exited
    }

    fn spawn(&mut self, events: &mut Vec<Event>) {
        let Some(interval) = self.cfg.traffic.spawn_interval else { return };
        let t = self.world.time;
        let map = self.world.map.clone();
        for k in 0..self.entries.len() {
            let (lane, due) = self.entries[k];
            if t < due {
                continue;
            }
            let params = draw_agent_params(&mut self.spawn_rng, &self.cfg.traffic, map.lane_at(lane).speed_limit());
            let vp = agent_vehicle_params(&params);
            let s = 0.5 * vp.length + 0.5;
            let n = self.index.neighbors_at(&self.world, lane, s, vp.length, |_| true);
            let mut v = self.cfg.traffic.spawn_velocity;
            if let Some((j, gap)) = n.leader {
                if gap < (1.5 * v).max(10.0) {
                    continue;
                }
                v = v.min(self.world.vehicles[j].state.velocity);
            }
            if n.follower.is_some_and(|(_, gap)| gap < 2.0) {
                continue;
            }
            let id = VehicleId(self.next_id);
            self.next_id += 1;
            let vehicle = place_vehicle(&map, id, vp, lane, s, v);
            let place = Placement::locate(&map, vehicle.state.position, vehicle.state.heading);
            let mut placements = self.index.placements().to_vec();
            self.world.vehicles.push(vehicle);
            placements.push(place);
            self.index = LaneIndex::from_placements(&self.world, placements);
            self.agents.insert(
                id,
                Agent {
                    params,
                    change: None,
                    last_change: f64::NEG_INFINITY,
                },
            );
            events.push(Event::Spawned { id: id.0 });
            self.entries[k].1 = t + interval * self.spawn_rng.gen_range(0.5..1.5);
        }
    }

    fn record(&mut self, events: Vec<Event>) {
        let vehicles = self
            .world
            .vehicles
            .iter()
            .map(|v| FrameVehicle::new(v.id, &v.params, &v.state))
            .collect();
        self.frames.push(EpisodeFrame {
            t: self.world.time,
            vehicles,
            meta: None,
            plan: None,
            events,
        });
    }

    /// Closes the log and computes metrics from it.
    pub fn into_episode(mut self, cycles: &[CycleRecord]) -> Result<Episode, SimError> {
        if self.end.is_none() {
            self.finish(EndReason::Duration);
        }
        let metrics = compute_metrics(&self.frames, &self.world.map, EGO_ID.0, &self.cfg.thresholds)?;
        let decision_switches = cycles
            .windows(2)
            .filter(|w| w[0].selected_label != w[1].selected_label)
            .count();
        Ok(Episode {
            frames: self.frames,
            end: self.end.expect("finished"),
            metrics,
            cycles: cycles.len(),
            decision_switches,
        })
    }
}

fn agent_vehicle_params(p: &AgentParams) -> VehicleParams {
    VehicleParams {
        desired_velocity: p.idm.desired_velocity,
        ..Default::default()
    }
}

/// Lanes where traffic enters: no predecessor, and neither does any lane
/// beside them.
fn entry_lanes(map: &Arc<LaneMap>) -> Vec<usize> {
    let n = map.lanes().len();
    let mut has_pred = vec![false; n];
    for i in 0..n {
        if let Some(s) = map.successor_index(i) {
            if s != i {
                has_pred[s] = true;
            }
        }
    }
    (0..n)
        .filter(|&i| !map.lane_at(i).is_closed())
        .filter(|&i| {
            !has_pred[i]
                && [Side::Left, Side::Right]
                    .into_iter()
                    .filter_map(|side| map.neighbor_index(i, side))
                    .all(|j| !has_pred[j])
        })
        .collect()
}

impl Environment for Env {
    fn observe(&self) -> WorldState {
        self.observation()
    }

    fn apply(&mut self, record: &CycleRecord) {
        self.apply_plan(record);
    }

    fn advance(&mut self, dt: f64) -> bool {
        let steps = (dt / self.cfg.dt).round().max(1.0) as usize;
        for _ in 0..steps {
            if !self.step() {
                return false;
            }
        }
        true
    }
}

/// Runs one closed-loop episode: the planner replans every `replan_dt` and
/// the environment steps every `dt` in between.
pub fn run_episode(cfg: &ScenarioConfig) -> Result<Episode, SimError> {
    let mut env = Env::new(cfg.clone())?;
    let cycles = replan_loop(&mut env, cfg.planner, |_, _| false)?;
    env.into_episode(&cycles)
}
