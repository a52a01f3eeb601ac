//! Policy-tree planning: candidate sequences, scenario rollouts, reward
//! evaluation and selection, plus the replanning loop.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{BeliefParams, BeliefTracker, IntentionBelief};
use crate::cfb::{cfb, map_only, CfbConfig, CfbOutcome, Scenario, TrackCache};
use crate::dcp_tree::{
    action_distance, advance_ongoing, extract_policy_sequences, mpdm_sequences, update_dcp_tree,
    PolicySequence, TreeError,
};
use crate::map::LaneId;
use crate::models::ModelParams;
use crate::noise::NoiseParams;
use crate::simulation::{
    record_rollout, resolve_action, resolve_intention, Program, Rollout, SequenceProgram, Simulator,
    Targets,
};
use crate::world::{
    LaneIndex, Lateral, Longitudinal, Placement, SemanticAction, VehicleState, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Eudm,
    Edm,
    Mpdm,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "eudm" => Ok(Mode::Eudm),
            "edm" => Ok(Mode::Edm),
            "mpdm" => Ok(Mode::Mpdm),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Eudm => "eudm",
            Mode::Edm => "edm",
            Mode::Mpdm => "mpdm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub efficiency: f64,
    pub safety: f64,
    pub consistency: f64,
    /// Charged once per risky rollout, and once more if the ego collides.
    pub risky_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            safety: 2.0,
            consistency: 0.3,
            risky_penalty: 100.0,
        }
    }
}

impl RewardWeights {
    pub fn scaled(self, k: f64) -> Self {
        Self {
            efficiency: self.efficiency * k,
            safety: self.safety * k,
            consistency: self.consistency * k,
            risky_penalty: self.risky_penalty * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub mode: Mode,
    pub horizon: f64,
    pub node_duration: f64,
    pub tree_height: usize,
    pub sim_resolution: f64,
    pub replan_dt: f64,
    pub reward: RewardWeights,
    pub cfb: CfbConfig,
    pub models: ModelParams,
    pub noise: NoiseParams,
    pub belief: BeliefParams,
    /// Evaluate candidate sequences on the rayon pool.
    pub parallel: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Eudm,
            horizon: 8.0,
            node_duration: 2.0,
            tree_height: 4,
            sim_resolution: 0.4,
            replan_dt: 0.05,
            reward: RewardWeights::default(),
            cfb: CfbConfig::default(),
            models: ModelParams::default(),
            noise: NoiseParams::default(),
            belief: BeliefParams::default(),
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("horizon {0} is not node_duration x tree_height")]
    Horizon(f64),
    #[error("sim_resolution {0} does not divide node_duration")]
    Resolution(f64),
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

impl PlannerConfig {
    pub fn with_mode(self, mode: Mode) -> Self {
        Self { mode, ..self }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("horizon", self.horizon),
            ("node_duration", self.node_duration),
            ("sim_resolution", self.sim_resolution),
            ("replan_dt", self.replan_dt),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::NonPositive(name));
            }
        }
        if self.tree_height == 0 {
            return Err(ConfigError::NonPositive("tree_height"));
        }
        if (self.node_duration * self.tree_height as f64 - self.horizon).abs() > 1e-9 {
            return Err(ConfigError::Horizon(self.horizon));
        }
        let k = self.node_duration / self.sim_resolution;
        if (k - k.round()).abs() > 1e-9 {
            return Err(ConfigError::Resolution(self.sim_resolution));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.sim_resolution).round() as usize
    }
}

/// Ego decision state carried between cycles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ongoing {
    pub action: SemanticAction,
    /// Lane and speed the ongoing action is steering toward.
    pub targets: Option<(LaneId, f64)>,
    pub last_best: Option<PolicySequence>,
}

impl Ongoing {
    pub fn new(action: SemanticAction) -> Self {
        Self {
            action,
            targets: None,
            last_best: None,
        }
    }
}

impl Default for Ongoing {
    fn default() -> Self {
        Self::new(SemanticAction::new(
            Lateral::LaneKeep,
            Longitudinal::Maintain,
            SemanticAction::DEFAULT_DURATION,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("every candidate sequence collides in every scenario")]
    NoFeasiblePolicy,
    #[error("ego vehicle missing from the world")]
    EgoMissing,
    #[error("ego vehicle is off the map")]
    EgoOffMap,
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Reward of one rollout, split into its terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RolloutReward {
    pub efficiency: f64,
    pub safety: f64,
    pub consistency: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyEvaluation {
    pub sequence: PolicySequence,
    pub scenarios: Vec<Scenario>,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<RolloutReward>,
    pub weighted_reward: f64,
    pub feasible: bool,
    pub cfb: Option<CfbOutcome>,
}

impl PolicyEvaluation {
    /// Rollout of the MAP scenario.
    pub fn map_rollout(&self) -> &Rollout {
        let k = self
            .scenarios
            .iter()
            .position(|s| s.origin == crate::cfb::ScenarioOrigin::MapOnly)
            .unwrap_or(0);
        &self.rollouts[k]
    }
}

/// Reward terms of one rollout of `sequence`.
pub fn rollout_reward(
    rollout: &Rollout,
    sequence: &PolicySequence,
    last_best: Option<&PolicySequence>,
    desired_velocity: f64,
    w: &RewardWeights,
) -> RolloutReward {
    let trace = rollout.ego_trace();
    let n = trace.len().max(1) as f64;
    let efficiency = trace
        .iter()
        .map(|s| (s.velocity - desired_velocity).abs())
        .sum::<f64>()
        / n;
    let safety = rollout.annotations.iter().map(|a| a.rss_shortfall).sum::<f64>()
        / rollout.annotations.len().max(1) as f64;
    let consistency = last_best.map_or(0, |b| action_distance(sequence, b)) as f64;
    let mut penalty = 0.0;
    if rollout.ego_collision || rollout.rss_violation() {
        penalty += w.risky_penalty;
    }
    if rollout.ego_collision {
        penalty += w.risky_penalty;
    }
    let total = -w.efficiency * efficiency - w.safety * safety - w.consistency * consistency - penalty;
    RolloutReward {
        efficiency,
        safety,
        consistency,
        penalty,
        total,
    }
}

/// Probability-weighted sum of rollout rewards.
pub fn weighted_reward(weights: &[f64], rewards: &[f64]) -> f64 {
    weights.iter().zip(rewards).map(|(w, r)| w * r).sum()
}

/// Closed-loop rollout of one scenario.
pub fn rollout_scenario(
    world: &WorldState,
    index: &LaneIndex,
    scenario: &Scenario,
    sequence: &PolicySequence,
    root: Option<Targets>,
    cfg: &PlannerConfig,
) -> Rollout {
    let map = &*world.map;
    let mut sim = Simulator::with_index(world.clone(), index.clone(), &cfg.models);
    let seq_key = sequence.content_hash();
    let scen_key = scenario.content_hash();
    let mut ego = usize::MAX;
    for (i, v) in world.vehicles.iter().enumerate() {
        if v.id == world.ego {
            ego = i;
            sim.set_program(i, Program::Sequence(SequenceProgram::new(sequence, root)));
            continue;
        }
        if let Some(place) = index.get(i) {
            let intention = scenario.intention(v.id);
            let t = resolve_intention(map, place, v.state.velocity, intention)
                .or_else(|| resolve_intention(map, place, v.state.velocity, Lateral::LaneKeep));
            if let Some(t) = t {
                sim.set_program(i, Program::Hold(t));
            }
        }
        if !cfg.noise.is_silent() {
            sim.set_noise(
                i,
                Some(cfg.noise.stream(&[world.time.to_bits(), seq_key, scen_key, v.id.0 as u64])),
            );
        }
    }
    record_rollout(&mut sim, ego, cfg.steps(), cfg.sim_resolution)
}

/// A sequence to evaluate with the ego targets its first node starts from.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub sequence: PolicySequence,
    pub root: Option<Targets>,
}

/// How far ahead lane ends are compared when offering lane changes.
const AVAILABILITY_HORIZON: f64 = 300.0;

fn lateral_available(world: &WorldState, place: &Placement, base: usize, lateral: Lateral) -> bool {
    match lateral.side() {
        None => true,
        Some(side) => {
            let map = &*world.map;
            let base = if place.s_along(map, base).is_some() {
                crate::simulation::follow_chain(map, place, base)
            } else {
                place.current.lane
            };
            let Some(next) = map.neighbor_index(base, side) else {
                return false;
            };
            // a lane that ends before the current one is a trap, not an option
            let reach = |lane: usize| {
                place
                    .s_along(map, lane)
                    .map_or(0.0, |s| map.distance_to_end(lane, s, AVAILABILITY_HORIZON))
            };
            reach(next) + 1.0 >= reach(base)
        }
    }
}

/// Candidate sequences for `cfg.mode`, rooted at the ongoing action.
pub fn candidates(
    world: &WorldState,
    index: &LaneIndex,
    ongoing: &Ongoing,
    cfg: &PlannerConfig,
) -> Result<Vec<Candidate>, PlanError> {
    let map = &*world.map;
    let ego = world.ego_index().ok_or(PlanError::EgoMissing)?;
    let place = *index.get(ego).ok_or(PlanError::EgoOffMap)?;
    let v = world.vehicles[ego].state.velocity;
    let set = SemanticAction::full_set(cfg.node_duration);
    let ongoing_targets = ongoing
        .targets
        .and_then(|(lane, velocity)| map.index_of(lane).map(|lane| Targets { lane, velocity }));
    let root_targets = ongoing_targets
        .unwrap_or_else(|| resolve_action(map, &place, v, &ongoing.action, None));
    let root_dur = ongoing.action.duration.clamp(1e-3, cfg.node_duration);

    match cfg.mode {
        Mode::Eudm | Mode::Edm => {
            let mut tree = update_dcp_tree(&set, &ongoing.action, cfg.tree_height)?;
            let root_lat = ongoing.action.lateral;
            tree.prune(|a| {
                a.lateral == root_lat || lateral_available(world, &place, root_targets.lane, a.lateral)
            });
            Ok(extract_policy_sequences(&tree, root_dur, cfg.node_duration, cfg.horizon)
                .into_iter()
                .map(|sequence| Candidate {
                    sequence,
                    root: Some(root_targets),
                })
                .collect())
        }
        Mode::Mpdm => Ok(mpdm_sequences(&set, cfg.tree_height, root_dur, cfg.node_duration, cfg.horizon)
            .into_iter()
            .filter_map(|sequence| {
                let first = sequence.actions[0];
                if first.same_behavior(&ongoing.action) {
                    Some(Candidate {
                        sequence,
                        root: Some(root_targets),
                    })
                } else if lateral_available(world, &place, place.current.lane, first.lateral) {
                    Some(Candidate { sequence, root: None })
                } else {
                    None
                }
            })
            .collect()),
    }
}

fn evaluate_candidate(
    world: &WorldState,
    index: &LaneIndex,
    cache: &TrackCache,
    ego: usize,
    beliefs: &BTreeMap<crate::world::VehicleId, IntentionBelief>,
    ongoing: &Ongoing,
    cand: &Candidate,
    cfg: &PlannerConfig,
) -> PolicyEvaluation {
    let (scenarios, outcome) = match cfg.mode {
        Mode::Eudm => {
            let track = cache.ego_track(ego, &cand.sequence, cand.root);
            let out = cfb(cache, ego, &track, beliefs, &cfg.cfb);
            (out.scenarios.clone(), Some(out))
        }
        Mode::Edm | Mode::Mpdm => (vec![map_only(world, index, beliefs)], None),
    };
    let desired = world.vehicles[ego].params.desired_velocity;
    let rollouts: Vec<Rollout> = scenarios
        .iter()
        .map(|s| rollout_scenario(world, index, s, &cand.sequence, cand.root, cfg))
        .collect();
    let rewards: Vec<RolloutReward> = rollouts
        .iter()
        .map(|r| rollout_reward(r, &cand.sequence, ongoing.last_best.as_ref(), desired, &cfg.reward))
        .collect();
    let probs: Vec<f64> = scenarios.iter().map(|s| s.probability).collect();
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    PolicyEvaluation {
        sequence: cand.sequence.clone(),
        feasible: !rollouts.iter().all(|r| r.ego_collision),
        weighted_reward: weighted_reward(&probs, &totals),
        scenarios,
        rollouts,
        rewards,
        cfb: outcome,
    }
}

fn behavior_key(seq: &PolicySequence) -> Vec<(usize, usize)> {
    seq.actions
        .iter()
        .map(|a| (a.lateral.index(), a.longitudinal as usize))
        .collect()
}

/// Index of the feasible evaluation with the best weighted reward; ties go
/// to the last best sequence, then to the lexicographically smallest.
pub fn select_policy(evals: &[PolicyEvaluation], last_best: Option<&PolicySequence>) -> Option<usize> {
    let is_last = |e: &PolicyEvaluation| {
        last_best.is_some_and(|b| action_distance(&e.sequence, b) == 0)
    };
    evals
        .iter()
        .enumerate()
        .filter(|(_, e)| e.feasible)
        .min_by(|(_, a), (_, b)| {
            b.weighted_reward
                .total_cmp(&a.weighted_reward)
                .then_with(|| is_last(b).cmp(&is_last(a)))
                .then_with(|| behavior_key(&a.sequence).cmp(&behavior_key(&b.sequence)))
        })
        .map(|(i, _)| i)
}

/// Result of one planning cycle.
#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub best: PolicySequence,
    pub next: Ongoing,
    /// Ego states of the best sequence's MAP rollout, one per simulation step.
    pub trace: Vec<VehicleState>,
    pub selected: usize,
    pub evaluations: Vec<PolicyEvaluation>,
}

/// One planning cycle over a frozen world.
pub fn plan_once(
    world: &WorldState,
    beliefs: &BTreeMap<crate::world::VehicleId, IntentionBelief>,
    ongoing: &Ongoing,
    cfg: &PlannerConfig,
) -> Result<PlanOutput, PlanError> {
    cfg.validate()?;
    let index = LaneIndex::build(world);
    plan_with_index(world, &index, beliefs, ongoing, cfg)
}

pub fn plan_with_index(
    world: &WorldState,
    index: &LaneIndex,
    beliefs: &BTreeMap<crate::world::VehicleId, IntentionBelief>,
    ongoing: &Ongoing,
    cfg: &PlannerConfig,
) -> Result<PlanOutput, PlanError> {
    let ego = world.ego_index().ok_or(PlanError::EgoMissing)?;
    let cands = candidates(world, index, ongoing, cfg)?;
    let cache = TrackCache::new(world, index, &cfg.models, cfg.horizon, cfg.sim_resolution);
    let eval = |c: &Candidate| evaluate_candidate(world, index, &cache, ego, beliefs, ongoing, c, cfg);
    let evaluations: Vec<PolicyEvaluation> = if cfg.parallel && rayon::current_num_threads() > 1 {
        cands.par_iter().map(eval).collect()
    } else {
        cands.iter().map(eval).collect()
    };
    let selected =
        select_policy(&evaluations, ongoing.last_best.as_ref()).ok_or(PlanError::NoFeasiblePolicy)?;
    let best_eval = &evaluations[selected];
    let best = best_eval.sequence.clone();
    let map_rollout = best_eval.map_rollout();
    let next_action = advance_ongoing(&best, cfg.replan_dt, cfg.node_duration);
    let switched = !next_action.same_behavior(&best.actions[0])
        || best.actions[0].duration - cfg.replan_dt <= 1e-9;
    let map = &*world.map;
    let targets = if switched {
        map_rollout.node_targets.get(1).map(|t| (t.lane_id(map), t.velocity))
    } else {
        map_rollout.node_targets.first().map(|t| (t.lane_id(map), t.velocity))
    };
    let trace = map_rollout.ego_trace();
    Ok(PlanOutput {
        next: Ongoing {
            action: next_action,
            targets,
            last_best: Some(best.clone()),
        },
        best,
        trace,
        selected,
        evaluations,
    })
}

/// In-lane braking trace used when no policy is feasible.
pub fn emergency_trace(world: &WorldState, cfg: &PlannerConfig) -> Result<Vec<VehicleState>, PlanError> {
    let index = LaneIndex::build(world);
    let ego = world.ego_index().ok_or(PlanError::EgoMissing)?;
    let place = index.get(ego).ok_or(PlanError::EgoOffMap)?;
    let mut sim = Simulator::with_index(world.clone(), index.clone(), &cfg.models);
    sim.set_program(
        ego,
        Program::Hold(Targets {
            lane: place.current.lane,
            velocity: 0.0,
        }),
    );
    sim.set_reactive(ego, false);
    Ok(record_rollout(&mut sim, ego, cfg.steps(), cfg.sim_resolution).ego_trace())
}

/// Per-candidate summary in a cycle record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub sequence: String,
    pub reward: f64,
    pub feasible: bool,
    pub scenarios: usize,
}

/// Scenario summary in a cycle record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub assignment: BTreeMap<crate::world::VehicleId, Lateral>,
    pub probability: f64,
}

/// One line of the planner trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub time: f64,
    pub candidates: usize,
    pub rewards: Vec<CandidateRecord>,
    pub selected: Option<PolicySequence>,
    pub selected_label: Option<String>,
    pub ongoing: SemanticAction,
    pub scenarios: Vec<ScenarioRecord>,
    /// Vehicles whose hypotheses failed the open-loop check, with the
    /// failing intention.
    pub risky: Vec<(crate::world::VehicleId, Lateral)>,
    pub beliefs: Vec<IntentionBelief>,
    pub trace: Vec<VehicleState>,
    pub emergency: bool,
}

/// Stateful planner: belief tracking plus ongoing-action bookkeeping.
#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: PlannerConfig,
    pub tracker: BeliefTracker,
    pub ongoing: Ongoing,
    last_time: Option<f64>,
}

impl Planner {
    pub fn new(cfg: PlannerConfig) -> Result<Self, PlanError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            tracker: BeliefTracker::new(cfg.belief),
            // nothing is underway yet, so the placeholder root lasts one cycle
            ongoing: Ongoing::new(SemanticAction::new(
                Lateral::LaneKeep,
                Longitudinal::Maintain,
                cfg.replan_dt,
            )),
            last_time: None,
        })
    }

    /// Observes `world`, plans, and advances the ongoing action.
    pub fn cycle(&mut self, world: &WorldState) -> Result<CycleRecord, PlanError> {
        let index = LaneIndex::build(world);
        let dt = self.last_time.map_or(self.cfg.replan_dt, |t| (world.time - t).max(0.0));
        self.last_time = Some(world.time);
        self.tracker.observe(world, &index, dt, &self.cfg.models.rss);
        let beliefs = self.tracker.beliefs.clone();
        match plan_with_index(world, &index, &beliefs, &self.ongoing, &self.cfg) {
            Ok(out) => {
                let best = &out.evaluations[out.selected];
                let record = CycleRecord {
                    time: world.time,
                    candidates: out.evaluations.len(),
                    rewards: out
                        .evaluations
                        .iter()
                        .map(|e| CandidateRecord {
                            sequence: e.sequence.label(),
                            reward: e.weighted_reward,
                            feasible: e.feasible,
                            scenarios: e.scenarios.len(),
                        })
                        .collect(),
                    selected: Some(out.best.clone()),
                    selected_label: Some(out.best.label()),
                    ongoing: out.next.action,
                    scenarios: best
                        .scenarios
                        .iter()
                        .map(|s| ScenarioRecord {
                            assignment: s.assignment.clone(),
                            probability: s.probability,
                        })
                        .collect(),
                    risky: best.cfb.as_ref().map(|c| c.failed.clone()).unwrap_or_default(),
                    beliefs: beliefs.values().copied().collect(),
                    trace: out.trace,
                    emergency: false,
                };
                self.ongoing = out.next;
                Ok(record)
            }
            Err(PlanError::NoFeasiblePolicy) => {
                let trace = emergency_trace(world, &self.cfg)?;
                let brake = SemanticAction::new(Lateral::LaneKeep, Longitudinal::Decelerate, self.cfg.node_duration);
                self.ongoing = Ongoing::new(brake);
                Ok(CycleRecord {
                    time: world.time,
                    candidates: 0,
                    rewards: Vec::new(),
                    selected: None,
                    selected_label: None,
                    ongoing: brake,
                    scenarios: Vec::new(),
                    risky: Vec::new(),
                    beliefs: beliefs.values().copied().collect(),
                    trace,
                    emergency: true,
                })
            }
            Err(e) => Err(e),
        }
    }
}

/// Something the planner can drive.
pub trait Environment {
    fn observe(&self) -> WorldState;
    /// Hands the latest decision to the environment.
    fn apply(&mut self, record: &CycleRecord);
    /// Moves the environment forward; returns `false` once it has ended.
    fn advance(&mut self, dt: f64) -> bool;
}

/// Runs plan cycles every `replan_dt` of environment time until `stop`
/// returns true (checked before each cycle) or the environment ends.
pub fn replan_loop<E: Environment>(
    env: &mut E,
    cfg: PlannerConfig,
    mut stop: impl FnMut(usize, &WorldState) -> bool,
) -> Result<Vec<CycleRecord>, PlanError> {
    let mut planner = Planner::new(cfg)?;
    let mut log = Vec::new();
    loop {
        let world = env.observe();
        if stop(log.len(), &world) {
            break;
        }
        let record = planner.cycle(&world)?;
        env.apply(&record);
        log.push(record);
        if !env.advance(cfg.replan_dt) {
            break;
        }
    }
    Ok(log)
}
