//! Episode configuration and seeded generation of agent populations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use eudm_core::models::{IdmParams, MobilParams, RssParams};
use eudm_core::noise::mix_key;
use eudm_core::planner::{Mode, PlannerConfig};
use eudm_core::LaneId;

use crate::maps::{MERGE_EXIT_APRON, MERGE_SECTIONS, MERGE_SPEED_LIMIT, RING_RADIUS, RING_SPEED_LIMIT};

/// Driver model of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub idm: IdmParams,
    pub mobil: MobilParams,
    /// 0 is timid, 1 is aggressive.
    pub aggressiveness: f64,
    pub accel_noise_std: f64,
    pub steer_noise_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub lane: LaneId,
    pub s: f64,
    pub velocity: f64,
    /// Drawn from the traffic ranges when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<AgentParams>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSpec {
    pub lane: LaneId,
    pub s: f64,
    pub velocity: f64,
    pub desired_velocity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    /// Relative half-width of the uniform draw around default parameters.
    pub randomization: f64,
    /// Desired speeds are drawn around this fraction of the speed limit.
    pub speed_fraction: f64,
    pub max_aggressiveness: f64,
    /// Mean time between spawns per entry lane; no spawning when absent.
    pub spawn_interval: Option<f64>,
    pub spawn_velocity: f64,
    /// Lane-change decisions are taken this often.
    pub decision_interval: f64,
    /// Minimum time between two lane changes of one agent.
    pub cooldown: f64,
    /// Remaining lane length below which an agent merges whenever safe.
    pub forced_merge_distance: f64,
    pub accel_noise_std: f64,
    pub steer_noise_std: f64,
    /// Vehicles this close to the end of a road with no longer lane beside
    /// them leave the simulation.
    pub exit_margin: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            randomization: 0.3,
            speed_fraction: 0.9,
            max_aggressiveness: 1.0,
            spawn_interval: None,
            spawn_velocity: 6.0,
            decision_interval: 0.5,
            cooldown: 4.0,
            forced_merge_distance: 120.0,
            accel_noise_std: 0.2,
            steer_noise_std: 0.005,
            exit_margin: 1.0,
        }
    }
}

/// Thresholds used by the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub min_distance: f64,
    /// Fraction of the safe gap below which a frame is unsafe.
    pub rss_fraction: f64,
    pub ud_decel: f64,
    pub lcc_rate: f64,
    pub rss: RssParams,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_distance: 2.0,
            rss_fraction: 0.5,
            ud_decel: 1.6,
            lcc_rate: 0.12,
            rss: RssParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    /// `ring`, `double_merge`, or a path to a map file.
    pub map: String,
    pub ego: EgoSpec,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// An episode whose ego has stood still with no feasible policy for
    /// this long is aborted.
    #[serde(default = "default_abort_after")]
    pub abort_after: f64,
    /// The planner only observes vehicles this close to the ego.
    #[serde(default = "default_sensor_range")]
    pub sensor_range: f64,
}

fn default_sensor_range() -> f64 {
    100.0
}

fn default_abort_after() -> f64 {
    5.0
}

fn default_dt() -> f64 {
    0.05
}

impl ScenarioConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.planner.mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.planner.noise.seed = seed;
        self
    }

    /// Two-lane loop with slower agents to overtake.
    pub fn ring(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(seed, &[1]));
        let per_lane = 7;
        let len = std::f64::consts::TAU * RING_RADIUS;
        let mut agents = Vec::new();
        for lane in 0..2u32 {
            for k in 0..per_lane {
                let s = 40.0 + (k as f64 + rng.gen_range(-0.2..0.2)) * len / per_lane as f64;
                agents.push(AgentSpec {
                    lane: LaneId(lane),
                    s: s.rem_euclid(len),
                    velocity: rng.gen_range(9.0..13.0),
                    params: None,
                });
            }
        }
        Self {
            map: "ring".into(),
            ego: EgoSpec {
                lane: LaneId(0),
                s: 0.0,
                velocity: 12.0,
                desired_velocity: RING_SPEED_LIMIT,
            },
            agents,
            planner: PlannerConfig::default(),
            duration: 60.0,
            seed,
            dt: default_dt(),
            traffic: TrafficConfig {
                speed_fraction: 0.8,
                ..Default::default()
            },
            thresholds: Thresholds::default(),
            abort_after: default_abort_after(),
            sensor_range: default_sensor_range(),
        }
        .with_seed(seed)
    }

    /// Dense traffic through the lane drop and the bottleneck.
    pub fn double_merge(seed: u64) -> Self {
        const EGO_START: f64 = 60.0;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_key(seed, &[2]));
        let [_, x1, x2, x3] = MERGE_SECTIONS;
        let mut agents = Vec::new();
        let mut fill = |lane: u32, from: f64, to: f64, spacing: f64, agents: &mut Vec<AgentSpec>| {
            let mut s = from + rng.gen_range(0.0..spacing);
            while s < to {
                agents.push(AgentSpec {
                    lane: LaneId(lane),
                    s,
                    velocity: rng.gen_range(5.0..8.0),
                    params: None,
                });
                s += spacing * rng.gen_range(0.7..1.3);
            }
        };
        fill(0, 5.0, x1 - 15.0, 16.0, &mut agents);
        fill(1, 5.0, x1, 16.0, &mut agents);
        fill(2, 5.0, x1, 16.0, &mut agents);
        fill(3, 0.0, x2 - x1, 18.0, &mut agents);
        fill(4, 0.0, x2 - x1, 18.0, &mut agents);
        fill(5, 10.0, x3 - x2 - 20.0, 24.0, &mut agents);
        fill(6, 0.0, x3 - x2 - 20.0, 24.0, &mut agents);
        fill(7, 0.0, x3 - x2 - 20.0, 24.0, &mut agents);
        // lanes joined end to end can put two draws on top of each other
        let place = |a: &AgentSpec| {
            let (x0, row) = match a.lane.0 {
                l @ 0..=2 => (0.0, l),
                l @ 3..=4 => (x1, l - 2),
                l => (x2, l - 5),
            };
            (row, x0 + a.s)
        };
        let ego = (1, EGO_START);
        let mut kept: Vec<AgentSpec> = Vec::new();
        for a in agents {
            let (row, x) = place(&a);
            let clear = std::iter::once(ego)
                .chain(kept.iter().map(place))
                .all(|(r, x2)| r != row || (x - x2).abs() > 12.0);
            if clear {
                kept.push(a);
            }
        }
        let agents = kept;
        Self {
            map: "double_merge".into(),
            ego: EgoSpec {
                lane: LaneId(1),
                s: EGO_START,
                velocity: 6.0,
                desired_velocity: MERGE_SPEED_LIMIT,
            },
            agents,
            planner: PlannerConfig::default(),
            duration: 120.0,
            seed,
            dt: default_dt(),
            traffic: TrafficConfig {
                spawn_interval: Some(1.5),
                exit_margin: MERGE_EXIT_APRON,
                ..Default::default()
            },
            thresholds: Thresholds::default(),
            abort_after: default_abort_after(),
            sensor_range: default_sensor_range(),
        }
        .with_seed(seed)
    }

    pub fn preset(name: &str, seed: u64) -> Option<Self> {
        match name {
            "ring" => Some(Self::ring(seed)),
            "double_merge" => Some(Self::double_merge(seed)),
            _ => None,
        }
    }
}

/// Agent parameters drawn uniformly within the configured spread.
pub fn draw_agent_params(rng: &mut impl Rng, traffic: &TrafficConfig, speed_limit: f64) -> AgentParams {
    let r = traffic.randomization.clamp(0.0, 0.95);
    let mut f = || if r > 0.0 { rng.gen_range(1.0 - r..=1.0 + r) } else { 1.0 };
    let base = IdmParams::default();
    let mobil = MobilParams::default();
    let mut idm = IdmParams {
        desired_velocity: speed_limit * traffic.speed_fraction * f(),
        time_headway: base.time_headway * f(),
        max_accel: base.max_accel * f(),
        comfortable_decel: base.comfortable_decel * f(),
        min_spacing: base.min_spacing * f(),
        ..base
    };
    let mut mobil = MobilParams {
        politeness: mobil.politeness * f(),
        threshold: mobil.threshold * f(),
        ..mobil
    };
    let aggressiveness = if traffic.max_aggressiveness > 0.0 {
        rng.gen_range(0.0..=traffic.max_aggressiveness)
    } else {
        0.0
    };
    idm.time_headway *= 1.0 - 0.4 * aggressiveness;
    mobil.politeness *= 1.0 - aggressiveness;
    mobil.safe_decel *= 1.0 + aggressiveness;
    AgentParams {
        idm,
        mobil,
        aggressiveness,
        accel_noise_std: traffic.accel_noise_std,
        steer_noise_std: traffic.steer_noise_std,
    }
}
