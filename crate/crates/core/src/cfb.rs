//! Conditional focused branching over the intentions of nearby vehicles.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{map_intention, IntentionBelief};
use crate::dcp_tree::PolicySequence;
use crate::map::{LaneMap, Side};
use crate::models::ModelParams;
use crate::simulation::{
    check_tracks, open_loop_track, resolve_intention, Program, SequenceProgram, Targets, Track,
};
use crate::world::{Intention, LaneIndex, Lateral, Placement, VehicleId, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfbConfig {
    pub lookahead_time: f64,
    pub lookback_time: f64,
    pub forward_floor: f64,
    pub backward_floor: f64,
    pub uncertainty_threshold: f64,
    pub top_k: usize,
    pub max_enumerated_vehicles: usize,
    pub max_combinations: usize,
}

impl Default for CfbConfig {
    fn default() -> Self {
        Self {
            lookahead_time: 8.0,
            lookback_time: 4.0,
            forward_floor: 30.0,
            backward_floor: 20.0,
            uncertainty_threshold: 0.75,
            top_k: 6,
            max_enumerated_vehicles: 4,
            max_combinations: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CfbError {
    #[error("{0} intention combinations exceed the cap of {1}")]
    TooManyCombinations(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioOrigin {
    MapOnly,
    Branched,
}

/// One joint intention assignment with its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub assignment: BTreeMap<VehicleId, Intention>,
    pub probability: f64,
    pub origin: ScenarioOrigin,
}

impl Scenario {
    pub fn intention(&self, v: VehicleId) -> Intention {
        self.assignment.get(&v).copied().unwrap_or(Lateral::LaneKeep)
    }

    /// Stable digest of the assignment.
    pub fn content_hash(&self) -> u64 {
        let key: Vec<u64> = self
            .assignment
            .iter()
            .map(|(v, i)| (v.0 as u64) << 2 | i.index() as u64)
            .collect();
        crate::noise::mix_key(0xcfb, &key)
    }

    fn order_key(&self) -> Vec<(VehicleId, Intention)> {
        self.assignment.iter().map(|(&v, &i)| (v, i)).collect()
    }
}

/// Arc-length window around the ego at speed `v`.
pub fn key_window(v: f64, cfg: &CfbConfig) -> (f64, f64) {
    (
        -(cfg.lookback_time * v).max(cfg.backward_floor),
        (cfg.lookahead_time * v).max(cfg.forward_floor),
    )
}

/// Lanes whose occupants can matter for the ego: `lanes` plus their
/// neighbors.
pub fn lanes_with_neighbors(map: &LaneMap, lanes: &[usize]) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for &l in lanes {
        out.insert(l);
        for side in [Side::Left, Side::Right] {
            if let Some(n) = map.neighbor_index(l, side) {
                out.insert(n);
            }
        }
    }
    out
}

/// Indices of vehicles within the key window on any of `lanes`.
pub fn key_vehicles_on(
    world: &WorldState,
    index: &LaneIndex,
    ego: usize,
    lanes: &BTreeSet<usize>,
    cfg: &CfbConfig,
) -> Vec<usize> {
    let map = &*world.map;
    let Some(place) = index.get(ego) else {
        return Vec::new();
    };
    let (lo, hi) = key_window(world.vehicles[ego].state.velocity, cfg);
    let refs: Vec<(usize, f64)> = lanes
        .iter()
        .filter_map(|&l| place.s_along(map, l).map(|s| (l, s)))
        .collect();
    (0..world.vehicles.len())
        .filter(|&j| j != ego)
        .filter(|&j| {
            index.occupied(j).any(|o| {
                refs.iter().any(|&(l, s)| {
                    map.longitudinal_offset(l, s, o.lane, o.s)
                        .is_some_and(|ds| (lo..=hi).contains(&ds))
                })
            })
        })
        .collect()
}

/// Key vehicles on the ego's current lane and its neighbors.
pub fn select_key_vehicles(world: &WorldState, ego: VehicleId, cfg: &CfbConfig) -> BTreeSet<VehicleId> {
    let index = LaneIndex::build(world);
    let Some(e) = world.index_of(ego) else {
        return BTreeSet::new();
    };
    let Some(place) = index.get(e) else {
        return BTreeSet::new();
    };
    let lanes = lanes_with_neighbors(&world.map, &[place.current.lane]);
    key_vehicles_on(world, &index, e, &lanes, cfg)
        .into_iter()
        .map(|j| world.vehicles[j].id)
        .collect()
}

/// Splits key vehicles into uncertain ones (capped, least confident first)
/// and confident ones with their MAP intention.
pub fn select_uncertain_vehicles(
    beliefs: &[IntentionBelief],
    cfg: &CfbConfig,
) -> (Vec<VehicleId>, BTreeMap<VehicleId, Intention>) {
    let mut uncertain: Vec<&IntentionBelief> = beliefs
        .iter()
        .filter(|b| b.max_prob() < cfg.uncertainty_threshold)
        .collect();
    uncertain.sort_by(|a, b| a.max_prob().total_cmp(&b.max_prob()).then(a.vehicle.cmp(&b.vehicle)));
    let mut confident: BTreeMap<VehicleId, Intention> = beliefs
        .iter()
        .filter(|b| b.max_prob() >= cfg.uncertainty_threshold)
        .map(|b| (b.vehicle, map_intention(b)))
        .collect();
    for b in uncertain.iter().skip(cfg.max_enumerated_vehicles) {
        confident.insert(b.vehicle, map_intention(b));
    }
    let mut kept: Vec<VehicleId> = uncertain
        .iter()
        .take(cfg.max_enumerated_vehicles)
        .map(|b| b.vehicle)
        .collect();
    kept.sort();
    (kept, confident)
}

/// Intentions of a vehicle that have a lane and nonzero probability.
pub fn feasible_intentions(map: &LaneMap, place: &Placement, belief: &IntentionBelief) -> Vec<Intention> {
    Lateral::ALL
        .into_iter()
        .filter(|&i| belief.prob(i) > 0.0)
        .filter(|&i| match i.side() {
            None => true,
            Some(side) => map.neighbor_index(place.current.lane, side).is_some(),
        })
        .collect()
}

/// Open-loop tracks of the ego and hypothesized agents, reusable across
/// policy sequences within one planning cycle.
pub struct TrackCache<'a> {
    pub world: &'a WorldState,
    pub index: &'a LaneIndex,
    pub params: &'a ModelParams,
    pub horizon: f64,
    pub step: f64,
    agents: std::sync::Mutex<BTreeMap<(usize, Intention), std::sync::Arc<Track>>>,
}

impl<'a> TrackCache<'a> {
    pub fn new(world: &'a WorldState, index: &'a LaneIndex, params: &'a ModelParams, horizon: f64, step: f64) -> Self {
        Self {
            world,
            index,
            params,
            horizon,
            step,
            agents: Default::default(),
        }
    }

    pub fn ego_track(&self, ego: usize, sequence: &PolicySequence, root: Option<Targets>) -> Track {
        open_loop_track(
            self.world,
            self.index.get(ego).copied(),
            ego,
            Program::Sequence(SequenceProgram::new(sequence, root)),
            self.horizon,
            self.step,
            self.params,
        )
    }

    /// Track of agent `j` under `intention`; `None` when the intention has no
    /// lane.
    pub fn agent_track(&self, j: usize, intention: Intention) -> Option<std::sync::Arc<Track>> {
        if let Some(t) = self.agents.lock().unwrap().get(&(j, intention)) {
            return Some(t.clone());
        }
        let place = *self.index.get(j)?;
        let v = &self.world.vehicles[j];
        let targets = resolve_intention(&self.world.map, &place, v.state.velocity, intention)?;
        let track = std::sync::Arc::new(open_loop_track(
            self.world,
            Some(place),
            j,
            Program::Hold(targets),
            self.horizon,
            self.step,
            self.params,
        ));
        self.agents
            .lock()
            .unwrap()
            .insert((j, intention), track.clone());
        Some(track)
    }

    /// True when the ego track and agent `j` under `intention` collide or
    /// violate the safe gap.
    pub fn assess_fails(&self, ego: &Track, j: usize, intention: Intention) -> bool {
        let Some(agent) = self.agent_track(j, intention) else {
            return false;
        };
        let every = self.params.substeps.max(1);
        let c = check_tracks(&self.world.map, ego, &agent, every, &self.params.rss);
        c.collision || c.rss_violation
    }
}

/// Single open-loop safety check of `vehicle` under `hypothesis`. Returns
/// `true` on pass.
pub fn open_loop_assess(
    world: &WorldState,
    ego_policy: &PolicySequence,
    vehicle: VehicleId,
    hypothesis: Intention,
    params: &ModelParams,
    horizon: f64,
    step: f64,
) -> bool {
    let index = LaneIndex::build(world);
    let (Some(ego), Some(j)) = (world.ego_index(), world.index_of(vehicle)) else {
        return true;
    };
    let cache = TrackCache::new(world, &index, params, horizon, step);
    let ego_track = cache.ego_track(ego, ego_policy, None);
    !cache.assess_fails(&ego_track, j, hypothesis)
}

/// Cartesian product over the intentions of `failing` vehicles; everyone in
/// `fixed` keeps the given intention.
pub fn enumerate_scenarios(
    failing: &[(VehicleId, Vec<(Intention, f64)>)],
    fixed: &BTreeMap<VehicleId, Intention>,
    cap: usize,
) -> Result<Vec<Scenario>, CfbError> {
    let count = failing
        .iter()
        .try_fold(1usize, |acc, (_, opts)| acc.checked_mul(opts.len().max(1)))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(CfbError::TooManyCombinations(count, cap));
    }
    let map_of = |opts: &[(Intention, f64)]| -> Intention {
        let mut best = opts[0];
        for &o in &opts[1..] {
            if o.1 > best.1 {
                best = o;
            }
        }
        best.0
    };
    let mut out = vec![Scenario {
        assignment: fixed.clone(),
        probability: 1.0,
        origin: ScenarioOrigin::MapOnly,
    }];
    for (v, opts) in failing {
        let total: f64 = opts.iter().map(|o| o.1).sum();
        let map_choice = map_of(opts);
        let mut next = Vec::with_capacity(out.len() * opts.len());
        for s in &out {
            for &(intention, p) in opts {
                let mut a = s.assignment.clone();
                a.insert(*v, intention);
                next.push(Scenario {
                    assignment: a,
                    probability: s.probability * p / total,
                    origin: if s.origin == ScenarioOrigin::MapOnly && intention == map_choice {
                        ScenarioOrigin::MapOnly
                    } else {
                        ScenarioOrigin::Branched
                    },
                });
            }
        }
        out = next;
    }
    Ok(out)
}

/// Keeps the `k` most probable scenarios and renormalizes them.
pub fn top_k_marginalize(mut scenarios: Vec<Scenario>, k: usize) -> Vec<Scenario> {
    scenarios.sort_by(|a, b| {
        b.probability
            .total_cmp(&a.probability)
            .then_with(|| a.order_key().cmp(&b.order_key()))
    });
    scenarios.truncate(k.max(1));
    renormalize(&mut scenarios);
    scenarios
}

fn renormalize(scenarios: &mut [Scenario]) {
    let total: f64 = scenarios.iter().map(|s| s.probability).sum();
    if total > 0.0 {
        for s in scenarios.iter_mut() {
            s.probability /= total;
        }
    } else {
        let n = scenarios.len() as f64;
        for s in scenarios.iter_mut() {
            s.probability = 1.0 / n;
        }
    }
}

/// Everything CFB decided for one policy sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfbOutcome {
    pub key: Vec<VehicleId>,
    pub uncertain: Vec<VehicleId>,
    pub failed: Vec<(VehicleId, Intention)>,
    pub scenarios: Vec<Scenario>,
    pub fallback: bool,
}

/// MAP assignment for every agent in the world.
pub fn map_assignment(world: &WorldState, beliefs: &BTreeMap<VehicleId, IntentionBelief>) -> BTreeMap<VehicleId, Intention> {
    world
        .agents()
        .map(|v| {
            let i = beliefs.get(&v.id).map_or(Lateral::LaneKeep, map_intention);
            (v.id, i)
        })
        .collect()
}

/// Lane-feasible MAP intention: the MAP choice when its lane exists, lane
/// keeping otherwise.
fn feasible_map(map: &LaneMap, place: Option<&Placement>, b: Option<&IntentionBelief>) -> Intention {
    let Some(b) = b else { return Lateral::LaneKeep };
    let m = map_intention(b);
    match (m.side(), place) {
        (Some(side), Some(p)) if map.neighbor_index(p.current.lane, side).is_some() => m,
        (None, _) => m,
        _ => Lateral::LaneKeep,
    }
}

/// Scenario set for one ego policy, given its open-loop ego track.
pub fn cfb(
    cache: &TrackCache,
    ego: usize,
    ego_track: &Track,
    beliefs: &BTreeMap<VehicleId, IntentionBelief>,
    cfg: &CfbConfig,
) -> CfbOutcome {
    let world = cache.world;
    let map = &*world.map;
    let index = cache.index;

    let mut all: BTreeMap<VehicleId, Intention> = BTreeMap::new();
    for (j, v) in world.vehicles.iter().enumerate() {
        if j != ego {
            all.insert(v.id, feasible_map(map, index.get(j), beliefs.get(&v.id)));
        }
    }

    let mut lanes: Vec<usize> = index.get(ego).map(|p| vec![p.current.lane]).unwrap_or_default();
    lanes.extend(ego_track.node_targets.iter().map(|t| t.lane));
    let lanes = lanes_with_neighbors(map, &lanes);
    let key_idx = key_vehicles_on(world, index, ego, &lanes, cfg);
    let key: Vec<VehicleId> = key_idx.iter().map(|&j| world.vehicles[j].id).collect();

    let key_beliefs: Vec<IntentionBelief> = key_idx
        .iter()
        .filter_map(|&j| beliefs.get(&world.vehicles[j].id).copied())
        .collect();
    let (uncertain, _) = select_uncertain_vehicles(&key_beliefs, cfg);

    let mut failing: Vec<(VehicleId, Vec<(Intention, f64)>)> = Vec::new();
    let mut failed = Vec::new();
    for &v in &uncertain {
        let j = world.index_of(v).expect("key vehicle exists");
        let Some(place) = index.get(j) else { continue };
        let b = &beliefs[&v];
        let options = feasible_intentions(map, place, b);
        let mut any = false;
        for &h in &options {
            if cache.assess_fails(ego_track, j, h) {
                failed.push((v, h));
                any = true;
            }
        }
        if any && options.len() > 1 {
            failing.push((v, options.iter().map(|&i| (i, b.prob(i))).collect()));
        }
    }

    let (scenarios, fallback) = match enumerate_scenarios(&failing, &all, cfg.max_combinations) {
        Ok(s) => (top_k_marginalize(s, cfg.top_k), false),
        Err(_) => (fallback_scenarios(&failing, &all), true),
    };
    let scenarios = ensure_map_scenario(scenarios, &all, cfg.top_k);
    CfbOutcome {
        key,
        uncertain,
        failed,
        scenarios,
        fallback,
    }
}

/// MAP scenario plus the single most probable deviation from it.
fn fallback_scenarios(
    failing: &[(VehicleId, Vec<(Intention, f64)>)],
    map_assign: &BTreeMap<VehicleId, Intention>,
) -> Vec<Scenario> {
    let mut map_p = 1.0;
    let mut best: Option<(f64, VehicleId, Intention)> = None;
    for (v, opts) in failing {
        let total: f64 = opts.iter().map(|o| o.1).sum();
        let m = map_assign[v];
        let pm = opts.iter().find(|o| o.0 == m).map_or(0.0, |o| o.1) / total;
        map_p *= pm;
        for &(i, p) in opts {
            if i != m && pm > 0.0 {
                let ratio = p / total / pm;
                if best.map_or(true, |b| ratio > b.0) {
                    best = Some((ratio, *v, i));
                }
            }
        }
    }
    let mut out = vec![Scenario {
        assignment: map_assign.clone(),
        probability: map_p,
        origin: ScenarioOrigin::MapOnly,
    }];
    if let Some((ratio, v, i)) = best {
        let mut a = map_assign.clone();
        a.insert(v, i);
        out.push(Scenario {
            assignment: a,
            probability: map_p * ratio,
            origin: ScenarioOrigin::Branched,
        });
    }
    renormalize(&mut out);
    out
}

fn ensure_map_scenario(
    mut scenarios: Vec<Scenario>,
    map_assign: &BTreeMap<VehicleId, Intention>,
    k: usize,
) -> Vec<Scenario> {
    if let Some(s) = scenarios.iter_mut().find(|s| &s.assignment == map_assign) {
        s.origin = ScenarioOrigin::MapOnly;
        return scenarios;
    }
    let floor = scenarios.iter().map(|s| s.probability).fold(f64::INFINITY, f64::min);
    if scenarios.len() >= k.max(1) {
        scenarios.pop();
    }
    scenarios.push(Scenario {
        assignment: map_assign.clone(),
        probability: floor.min(1.0),
        origin: ScenarioOrigin::MapOnly,
    });
    renormalize(&mut scenarios);
    scenarios
}

/// The single nominal scenario.
pub fn map_only(world: &WorldState, index: &LaneIndex, beliefs: &BTreeMap<VehicleId, IntentionBelief>) -> Scenario {
    let map = &*world.map;
    let assignment = world
        .vehicles
        .iter()
        .enumerate()
        .filter(|(_, v)| v.id != world.ego)
        .map(|(j, v)| (v.id, feasible_map(map, index.get(j), beliefs.get(&v.id))))
        .collect();
    Scenario {
        assignment,
        probability: 1.0,
        origin: ScenarioOrigin::MapOnly,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{straight_road, vehicle_at};
    use crate::world::{Longitudinal, SemanticAction};
    use proptest::prelude::*;

    fn b(v: u32, p: [f64; 3]) -> IntentionBelief {
        IntentionBelief::new(VehicleId(v), p)
    }

    #[test]
    fn key_window_uses_speed_and_floors() {
        let cfg = CfbConfig::default();
        assert_eq!(key_window(10.0, &cfg), (-40.0, 80.0));
        assert_eq!(key_window(1.0, &cfg), (-20.0, 30.0));
    }

    #[test]
    fn key_vehicles_respect_range_and_lanes() {
        let map = straight_road(3, 500.0);
        let world = WorldState::new(
            map.clone(),
            0.0,
            VehicleId(0),
            vec![
                vehicle_at(0, 0, 100.0, 0.0, 10.0),
                vehicle_at(1, 0, 300.0, 0.0, 10.0),
                vehicle_at(2, 1, 150.0, 0.0, 10.0),
                vehicle_at(3, 2, 110.0, 0.0, 10.0),
                vehicle_at(4, 0, 70.0, 0.0, 10.0),
            ],
        );
        let key = select_key_vehicles(&world, VehicleId(0), &CfbConfig::default());
        assert_eq!(key, [VehicleId(2), VehicleId(4)].into_iter().collect());
        let empty = WorldState::new(map, 0.0, VehicleId(0), vec![vehicle_at(0, 0, 100.0, 0.0, 10.0)]);
        assert!(select_key_vehicles(&empty, VehicleId(0), &CfbConfig::default()).is_empty());
    }

    #[test]
    fn uncertainty_threshold_and_cap() {
        let cfg = CfbConfig::default();
        let (u, c) = select_uncertain_vehicles(&[b(1, [0.9, 0.05, 0.05]), b(2, [0.4, 0.35, 0.25])], &cfg);
        assert_eq!(u, vec![VehicleId(2)]);
        assert_eq!(c[&VehicleId(1)], Lateral::LaneKeep);

        let six: Vec<_> = [0.7, 0.4, 0.5, 0.36, 0.6, 0.45]
            .iter()
            .enumerate()
            .map(|(k, &m)| b(k as u32, [m, (1.0 - m) / 2.0, (1.0 - m) / 2.0]))
            .collect();
        let (u, c) = select_uncertain_vehicles(&six, &cfg);
        let mut oracle: Vec<_> = six.iter().collect();
        oracle.sort_by(|a, b| a.max_prob().partial_cmp(&b.max_prob()).unwrap());
        let mut want: Vec<_> = oracle[..4].iter().map(|b| b.vehicle).collect();
        want.sort();
        assert_eq!(u, want);
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn enumeration_products() {
        let fixed = BTreeMap::new();
        let none = enumerate_scenarios(&[], &fixed, 81).unwrap();
        assert_eq!(none.len(), 1);
        assert_eq!(none[0].probability, 1.0);

        let opts = vec![(Lateral::LaneKeep, 0.5), (Lateral::ChangeLeft, 0.3), (Lateral::ChangeRight, 0.2)];
        let two = enumerate_scenarios(&[(VehicleId(1), opts.clone()), (VehicleId(2), opts.clone())], &fixed, 81).unwrap();
        assert_eq!(two.len(), 9);
        let total: f64 = two.iter().map(|s| s.probability).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for s in &two {
            let p = |v: u32| opts.iter().find(|o| o.0 == s.assignment[&VehicleId(v)]).unwrap().1;
            assert!((s.probability - p(1) * p(2)).abs() < 1e-12);
        }

        let no_left = vec![(Lateral::LaneKeep, 0.5), (Lateral::ChangeRight, 0.2)];
        let one = enumerate_scenarios(&[(VehicleId(1), no_left)], &fixed, 81).unwrap();
        assert_eq!(one.len(), 2);
        assert!((one[0].probability - 0.5 / 0.7).abs() < 1e-12);

        let five: Vec<_> = (0..5).map(|v| (VehicleId(v), opts.clone())).collect();
        assert_eq!(
            enumerate_scenarios(&five, &fixed, 81).unwrap_err(),
            CfbError::TooManyCombinations(243, 81)
        );
    }

    fn scenario(v: u32, i: Intention, p: f64) -> Scenario {
        Scenario {
            assignment: [(VehicleId(v), i)].into_iter().collect(),
            probability: p,
            origin: ScenarioOrigin::Branched,
        }
    }

    #[test]
    fn top_k_renormalizes() {
        let s = vec![
            scenario(1, Lateral::LaneKeep, 0.5),
            scenario(1, Lateral::ChangeLeft, 0.3),
            scenario(1, Lateral::ChangeRight, 0.2),
        ];
        let all = top_k_marginalize(s.clone(), 5);
        assert_eq!(all.len(), 3);
        let two = top_k_marginalize(s, 2);
        assert!((two[0].probability - 0.625).abs() < 1e-12);
        assert!((two[1].probability - 0.375).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn top_k_matches_sort_oracle(ps in proptest::collection::vec(0.01f64..1.0, 9), k in 1usize..9) {
            let total: f64 = ps.iter().sum();
            let s: Vec<_> = ps.iter().enumerate().map(|(n, &p)| scenario(n as u32, Lateral::LaneKeep, p / total)).collect();
            let got = top_k_marginalize(s, k);
            let mut sorted: Vec<f64> = ps.iter().map(|p| p / total).collect();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let kept: f64 = sorted[..k].iter().sum();
            prop_assert_eq!(got.len(), k);
            for (g, want) in got.iter().zip(&sorted[..k]) {
                prop_assert!((g.probability - want / kept).abs() < 1e-12);
            }
        }
    }

    fn lcl_policy() -> PolicySequence {
        let a = SemanticAction::new(Lateral::ChangeLeft, Longitudinal::Maintain, 2.0);
        PolicySequence::new(vec![a; 4])
    }

    #[test]
    fn insertion_into_ego_target_lane_fails_assessment() {
        let map = straight_road(3, 400.0);
        let world = WorldState::new(
            map,
            0.0,
            VehicleId(0),
            vec![vehicle_at(0, 0, 50.0, 0.0, 12.0), vehicle_at(1, 0, 72.0, 0.0, 10.0)],
        );
        let p = ModelParams::default();
        assert!(!open_loop_assess(&world, &lcl_policy(), VehicleId(1), Lateral::ChangeLeft, &p, 8.0, 0.4));
        let far = WorldState::new(
            world.map.clone(),
            0.0,
            VehicleId(0),
            vec![vehicle_at(0, 0, 50.0, 0.0, 12.0), vehicle_at(1, 2, 0.0, 0.0, 10.0)],
        );
        for h in Lateral::ALL {
            if h != Lateral::ChangeLeft {
                assert!(open_loop_assess(&far, &lcl_policy(), VehicleId(1), h, &p, 8.0, 0.4));
            }
        }
    }

    #[test]
    fn cfb_without_key_vehicles_is_map_only() {
        let map = straight_road(2, 400.0);
        let world = WorldState::new(map, 0.0, VehicleId(0), vec![vehicle_at(0, 0, 50.0, 0.0, 12.0)]);
        let index = LaneIndex::build(&world);
        let p = ModelParams::default();
        let cache = TrackCache::new(&world, &index, &p, 8.0, 0.4);
        let track = cache.ego_track(0, &lcl_policy(), None);
        let out = cfb(&cache, 0, &track, &BTreeMap::new(), &CfbConfig::default());
        assert_eq!(out.scenarios.len(), 1);
        assert_eq!(out.scenarios[0].probability, 1.0);
        assert_eq!(out.scenarios[0].origin, ScenarioOrigin::MapOnly);
    }
}
