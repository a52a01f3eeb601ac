//! Rule-based intention belief over {LK, LCL, LCR}.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::Side;
use crate::models::mobil::incentive_with;
use crate::models::{rss_min_safe_gap, IdmParams, Incentive, MobilParams, RssParams};
use crate::world::{Intention, LaneIndex, Lateral, VehicleId, WorldState};

#[derive(Debug, Error)]
pub enum BeliefError {
    #[error("unknown {0}")]
    UnknownVehicle(VehicleId),
    #[error("{0} does not project onto any lane")]
    OffMap(VehicleId),
}

/// Probability of each lateral intention, indexed LK, LCL, LCR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntentionBelief {
    pub vehicle: VehicleId,
    pub p_lk: f64,
    pub p_lcl: f64,
    pub p_lcr: f64,
}

impl IntentionBelief {
    pub fn new(vehicle: VehicleId, p: [f64; 3]) -> Self {
        Self {
            vehicle,
            p_lk: p[0],
            p_lcl: p[1],
            p_lcr: p[2],
        }
    }

    pub fn lane_keep(vehicle: VehicleId) -> Self {
        Self::new(vehicle, [1.0, 0.0, 0.0])
    }

    pub fn probs(&self) -> [f64; 3] {
        [self.p_lk, self.p_lcl, self.p_lcr]
    }

    pub fn prob(&self, intention: Intention) -> f64 {
        self.probs()[intention.index()]
    }

    pub fn max_prob(&self) -> f64 {
        self.probs().into_iter().fold(0.0, f64::max)
    }

    /// Scales to unit sum; a zero vector becomes certain lane keeping.
    pub fn normalized(self) -> Self {
        let p = self.probs();
        let sum: f64 = p.iter().sum();
        if !(sum > 0.0) {
            return Self::lane_keep(self.vehicle);
        }
        Self::new(self.vehicle, p.map(|x| x / sum))
    }
}

/// Most probable intention; ties resolve LK, then LCL, then LCR.
pub fn map_intention(belief: &IntentionBelief) -> Intention {
    let p = belief.probs();
    let mut best = 0;
    for k in 1..3 {
        if p[k] > p[best] {
            best = k;
        }
    }
    Lateral::ALL[best]
}

/// Observations about one lane around a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneFeatures {
    pub velocity_diff_to_leader: Option<f64>,
    pub leader_gap: Option<f64>,
    pub follower_gap: Option<f64>,
    pub rss_satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BeliefFeatures {
    pub current: LaneFeatures,
    pub left: Option<LaneFeatures>,
    pub right: Option<LaneFeatures>,
    pub incentive_left: Option<Incentive>,
    pub incentive_right: Option<Incentive>,
    /// Signed lateral velocity relative to the lane, left positive.
    pub lateral_offset_trend: f64,
}

impl BeliefFeatures {
    fn lane(&self, lateral: Lateral) -> Option<&LaneFeatures> {
        match lateral {
            Lateral::LaneKeep => Some(&self.current),
            Lateral::ChangeLeft => self.left.as_ref(),
            Lateral::ChangeRight => self.right.as_ref(),
        }
    }

    fn incentive(&self, lateral: Lateral) -> Option<&Incentive> {
        match lateral {
            Lateral::LaneKeep => None,
            Lateral::ChangeLeft => self.incentive_left.as_ref(),
            Lateral::ChangeRight => self.incentive_right.as_ref(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefParams {
    pub w_incentive: f64,
    pub w_drift: f64,
    pub w_rss: f64,
    pub temperature: f64,
    /// Exponential smoothing rate, 1/s.
    pub smoothing_rate: f64,
    pub lk_bias: f64,
    /// Incentives are clamped to +-this before weighting.
    pub incentive_clamp: f64,
    /// Lateral speed (m/s) that counts as a full drift match.
    pub drift_scale: f64,
    /// Drift toward a side above which safety vetoes no longer apply.
    pub committed_drift: f64,
    pub politeness: f64,
    /// A change is ruled out only if the new follower would have to brake
    /// harder than this. Set to what the boldest drivers accept, not to
    /// what is comfortable.
    pub veto_decel: f64,
}

impl Default for BeliefParams {
    fn default() -> Self {
        Self {
            w_incentive: 1.0,
            w_drift: 2.0,
            w_rss: 0.5,
            temperature: 1.0,
            smoothing_rate: 0.7,
            lk_bias: 0.5,
            incentive_clamp: 2.0,
            drift_scale: 0.5,
            committed_drift: 0.2,
            politeness: 0.3,
            veto_decel: 8.0,
        }
    }
}

fn lane_features(
    world: &WorldState,
    index: &LaneIndex,
    i: usize,
    lane: usize,
    rss: &RssParams,
) -> LaneFeatures {
    let n = index.neighbors_in_lane(world, i, lane);
    let v = world.vehicles[i].state.velocity;
    let vel = |j: usize| world.vehicles[j].state.velocity;
    let mut ok = true;
    if let Some((j, gap)) = n.leader {
        ok &= gap >= rss_min_safe_gap(v, vel(j), rss);
    }
    if let Some((j, gap)) = n.follower {
        ok &= gap >= rss_min_safe_gap(vel(j), v, rss);
    }
    LaneFeatures {
        velocity_diff_to_leader: n.leader.map(|(j, _)| vel(j) - v),
        leader_gap: n.leader.map(|(_, g)| g),
        follower_gap: n.follower.map(|(_, g)| g),
        rss_satisfied: ok,
    }
}

/// Features of vehicle `i` from a prebuilt lane index.
pub fn features_with(
    world: &WorldState,
    index: &LaneIndex,
    i: usize,
    params: &BeliefParams,
    rss: &RssParams,
) -> Result<BeliefFeatures, BeliefError> {
    let map = &*world.map;
    let vehicle = &world.vehicles[i];
    let place = index.get(i).ok_or(BeliefError::OffMap(vehicle.id))?;
    let cur = place.current.lane;
    let mobil = MobilParams {
        politeness: params.politeness,
        safe_decel: params.veto_decel,
        ..Default::default()
    };
    let idm = IdmParams::default();
    let idm_of = |_: usize, lane: usize| idm.with_desired_velocity(map.lane_at(lane).speed_limit());
    let side = |side: Side| {
        map.neighbor_index(cur, side).map(|n| {
            let f = lane_features(world, index, i, n, rss);
            let inc = incentive_with(world, index, i, side, &mobil, idm_of).ok();
            (f, inc)
        })
    };
    let left = side(Side::Left);
    let right = side(Side::Right);
    Ok(BeliefFeatures {
        current: lane_features(world, index, i, cur, rss),
        left: left.map(|x| x.0),
        right: right.map(|x| x.0),
        incentive_left: left.and_then(|x| x.1),
        incentive_right: right.and_then(|x| x.1),
        lateral_offset_trend: vehicle.state.velocity * place.heading_error.sin(),
    })
}

pub fn extract_features(
    world: &WorldState,
    vehicle: VehicleId,
    params: &BeliefParams,
    rss: &RssParams,
) -> Result<BeliefFeatures, BeliefError> {
    let i = world
        .index_of(vehicle)
        .ok_or(BeliefError::UnknownVehicle(vehicle))?;
    features_with(world, &LaneIndex::build(world), i, params, rss)
}

/// Instantaneous distribution implied by the features alone.
pub fn instantaneous(vehicle: VehicleId, feat: &BeliefFeatures, p: &BeliefParams) -> IntentionBelief {
    let drift = feat.lateral_offset_trend;
    let mut scores = [f64::NEG_INFINITY; 3];
    for lat in Lateral::ALL {
        let Some(lane) = feat.lane(lat) else { continue };
        let rss_ok = if lane.rss_satisfied { 1.0 } else { 0.0 };
        let score = match lat {
            Lateral::LaneKeep => {
                let still = (1.0 - drift.abs() / p.drift_scale).max(0.0);
                p.lk_bias + p.w_drift * still + p.w_rss * rss_ok
            }
            _ => {
                let toward = if lat == Lateral::ChangeLeft { drift } else { -drift };
                let inc = feat.incentive(lat);
                // an RSS-unsafe gap only costs the bonus; aggressive drivers
                // take such gaps, so only a physically unsafe one is ruled out
                let vetoed = inc.is_some_and(|i| !i.safe);
                if vetoed && toward < p.committed_drift {
                    continue;
                }
                let gain = inc.map_or(0.0, |i| i.value.clamp(-p.incentive_clamp, p.incentive_clamp));
                let matched = (toward.max(0.0) / p.drift_scale).min(1.0);
                p.w_incentive * gain + p.w_drift * matched + p.w_rss * rss_ok
            }
        };
        scores[lat.index()] = score / p.temperature;
    }
    let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scores.map(|s| if s.is_finite() { (s - top).exp() } else { 0.0 });
    IntentionBelief::new(vehicle, e).normalized()
}

/// One smoothing step toward the instantaneous distribution.
pub fn update_belief(
    prev: &IntentionBelief,
    feat: &BeliefFeatures,
    dt: f64,
    params: &BeliefParams,
) -> IntentionBelief {
    let target = instantaneous(prev.vehicle, feat, params).probs();
    let alpha = 1.0 - (-params.smoothing_rate * dt).exp();
    let old = prev.probs();
    let mut p = [0.0; 3];
    for k in 0..3 {
        p[k] = (1.0 - alpha) * old[k] + alpha * target[k];
    }
    if feat.left.is_none() {
        p[Lateral::ChangeLeft.index()] = 0.0;
    }
    if feat.right.is_none() {
        p[Lateral::ChangeRight.index()] = 0.0;
    }
    IntentionBelief::new(prev.vehicle, p).normalized()
}

/// Beliefs for every non-ego vehicle, carried across cycles.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BeliefTracker {
    pub params: BeliefParams,
    pub beliefs: BTreeMap<VehicleId, IntentionBelief>,
}

impl BeliefTracker {
    pub fn new(params: BeliefParams) -> Self {
        Self {
            params,
            beliefs: BTreeMap::new(),
        }
    }

    /// Updates every agent seen in `world`; unseen vehicles are dropped and
    /// newcomers start from their instantaneous distribution.
    pub fn observe(&mut self, world: &WorldState, index: &LaneIndex, dt: f64, rss: &RssParams) {
        let mut next = BTreeMap::new();
        for (i, v) in world.vehicles.iter().enumerate() {
            if v.id == world.ego {
                continue;
            }
            let Ok(feat) = features_with(world, index, i, &self.params, rss) else {
                continue;
            };
            let b = match self.beliefs.get(&v.id) {
                Some(prev) => update_belief(prev, &feat, dt, &self.params),
                None => instantaneous(v.id, &feat, &self.params),
            };
            next.insert(v.id, b);
        }
        self.beliefs = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{straight_road, vehicle_at};
    use crate::geometry::Vec2;
    use proptest::prelude::*;

    fn features(lanes: u32, drift: f64) -> BeliefFeatures {
        let map = straight_road(lanes, 300.0);
        let mut v = vehicle_at(1, lanes / 2, 100.0, 0.0, 10.0);
        v.state.heading = (drift / 10.0).asin();
        let world = WorldState::new(map, 0.0, VehicleId(0), vec![vehicle_at(0, 0, 0.0, 0.0, 0.0), v]);
        extract_features(&world, VehicleId(1), &BeliefParams::default(), &RssParams::default()).unwrap()
    }

    fn alone(lanes: u32) -> BeliefFeatures {
        let map = straight_road(lanes, 300.0);
        let world = WorldState::new(map, 0.0, VehicleId(0), vec![vehicle_at(1, lanes / 2, 100.0, 0.0, 10.0)]);
        extract_features(&world, VehicleId(1), &BeliefParams::default(), &RssParams::default()).unwrap()
    }

    #[test]
    fn lone_vehicle_on_single_lane_has_no_side_features() {
        let f = features(1, 0.0);
        assert!(f.left.is_none() && f.right.is_none());
        assert!(f.incentive_left.is_none() && f.incentive_right.is_none());
    }

    #[test]
    fn drift_is_lateral_velocity() {
        let f = features(2, 0.3);
        assert!((f.lateral_offset_trend - 0.3).abs() < 1e-12);
    }

    #[test]
    fn slow_leader_raises_left_incentive() {
        let map = straight_road(3, 300.0);
        let world = WorldState::new(
            map,
            0.0,
            VehicleId(9),
            vec![vehicle_at(0, 1, 50.0, 0.0, 15.0), vehicle_at(1, 1, 75.0, 0.0, 5.0)],
        );
        let p = BeliefParams::default();
        let f = extract_features(&world, VehicleId(0), &p, &RssParams::default()).unwrap();
        let idm = IdmParams::default().with_desired_velocity(20.0);
        let gap = 25.0 - 4.8;
        let a_now = crate::models::idm_acceleration(15.0, Some(crate::models::Leader { velocity: 5.0, gap }), &idm).unwrap();
        let a_free = crate::models::idm_acceleration(15.0, None, &idm).unwrap();
        let inc = f.incentive_left.unwrap();
        assert!((inc.value - (a_free - a_now)).abs() < 1e-12);
        assert!(inc.value > 0.0);
    }

    #[test]
    fn map_intention_ties_prefer_lane_keeping() {
        let v = VehicleId(1);
        assert_eq!(map_intention(&IntentionBelief::new(v, [0.8, 0.1, 0.1])), Lateral::LaneKeep);
        let third = 1.0 / 3.0;
        assert_eq!(map_intention(&IntentionBelief::new(v, [third; 3])), Lateral::LaneKeep);
        assert_eq!(map_intention(&IntentionBelief::new(v, [0.2, 0.4, 0.4])), Lateral::ChangeLeft);
    }

    #[test]
    fn absent_left_lane_has_zero_probability() {
        let f = features(1, 0.4);
        let prev = IntentionBelief::new(VehicleId(1), [0.4, 0.3, 0.3]);
        let b = update_belief(&prev, &f, 0.4, &BeliefParams::default());
        assert_eq!(b.p_lcl, 0.0);
        assert_eq!(b.p_lcr, 0.0);
        assert!((b.p_lk - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_road_converges_to_confident_lane_keeping() {
        let f = alone(3);
        let p = BeliefParams::default();
        // fixed point of the smoothing equals the instantaneous distribution
        let fixed = instantaneous(VehicleId(1), &f, &p);
        let e = |s: f64| s.exp();
        let lk = p.lk_bias + p.w_drift + p.w_rss;
        let side = p.w_rss;
        let oracle = e(lk) / (e(lk) + 2.0 * e(side));
        assert!((fixed.p_lk - oracle).abs() < 1e-12);
        assert!(fixed.p_lk > 0.75);
        let mut b = IntentionBelief::new(VehicleId(1), [1.0 / 3.0; 3]);
        for _ in 0..100 {
            b = update_belief(&b, &f, 0.4, &p);
        }
        assert!((b.p_lk - oracle).abs() < 1e-9);
    }

    #[test]
    fn sustained_left_drift_wins() {
        let f = features(3, 0.5);
        let p = BeliefParams::default();
        let mut b = instantaneous(VehicleId(1), &features(3, 0.0), &p);
        for _ in 0..20 {
            b = update_belief(&b, &f, 0.1, &p);
        }
        assert_eq!(map_intention(&b), Lateral::ChangeLeft);
    }

    #[test]
    fn unsafe_rss_gap_is_soft_but_unsafe_incentive_is_hard() {
        let p = BeliefParams::default();
        let open = LaneFeatures {
            rss_satisfied: true,
            ..Default::default()
        };
        let tight = LaneFeatures {
            rss_satisfied: false,
            ..Default::default()
        };
        let base = BeliefFeatures {
            current: open,
            left: Some(open),
            incentive_left: Some(Incentive { value: 1.0, safe: true }),
            ..Default::default()
        };
        let roomy = instantaneous(VehicleId(1), &base, &p);
        let squeezed = instantaneous(
            VehicleId(1),
            &BeliefFeatures {
                left: Some(tight),
                ..base
            },
            &p,
        );
        assert!(squeezed.p_lcl > 0.0 && squeezed.p_lcl < roomy.p_lcl);
        let blocked = instantaneous(
            VehicleId(1),
            &BeliefFeatures {
                incentive_left: Some(Incentive { value: 1.0, safe: false }),
                ..base
            },
            &p,
        );
        assert_eq!(blocked.p_lcl, 0.0);
    }

    #[test]
    fn tracker_follows_vehicles() {
        let map = straight_road(2, 300.0);
        let mut world = WorldState::new(
            map,
            0.0,
            VehicleId(0),
            vec![vehicle_at(0, 0, 10.0, 0.0, 10.0), vehicle_at(1, 0, 60.0, 0.0, 10.0)],
        );
        let mut t = BeliefTracker::new(BeliefParams::default());
        t.observe(&world, &LaneIndex::build(&world), 0.05, &RssParams::default());
        assert_eq!(t.beliefs.len(), 1);
        world.vehicles[1].state.position = Vec2::new(61.0, 0.0);
        t.observe(&world, &LaneIndex::build(&world), 0.05, &RssParams::default());
        assert!(t.beliefs[&VehicleId(1)].p_lk > 0.75);
    }

    fn arb_features() -> impl Strategy<Value = BeliefFeatures> {
        let lane = (any::<bool>(), -5.0f64..5.0).prop_map(|(ok, d)| LaneFeatures {
            velocity_diff_to_leader: Some(d),
            leader_gap: Some(10.0),
            follower_gap: None,
            rss_satisfied: ok,
        });
        let inc = proptest::option::of((-5.0f64..5.0, any::<bool>()).prop_map(|(value, safe)| Incentive { value, safe }));
        (
            lane.clone(),
            proptest::option::of(lane.clone()),
            proptest::option::of(lane),
            inc.clone(),
            inc,
            -2.0f64..2.0,
        )
            .prop_map(|(current, left, right, il, ir, drift)| BeliefFeatures {
                current,
                left,
                incentive_left: left.and(il),
                right,
                incentive_right: right.and(ir),
                lateral_offset_trend: drift,
            })
    }

    fn arb_belief() -> impl Strategy<Value = IntentionBelief> {
        (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0)
            .prop_filter("nonzero", |(a, b, c)| a + b + c > 1e-6)
            .prop_map(|(a, b, c)| IntentionBelief::new(VehicleId(1), [a, b, c]).normalized())
    }

    proptest! {
        #[test]
        fn update_preserves_normalization(prev in arb_belief(), f in arb_features(), dt in 0.01f64..1.0) {
            let b = update_belief(&prev, &f, dt, &BeliefParams::default());
            let p = b.probs();
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if f.left.is_none() { prop_assert_eq!(b.p_lcl, 0.0); }
            if f.right.is_none() { prop_assert_eq!(b.p_lcr, 0.0); }
        }

        #[test]
        fn iterated_update_converges(prev in arb_belief(), f in arb_features()) {
            let p = BeliefParams::default();
            let mut b = prev;
            let mut last = f64::INFINITY;
            for _ in 0..100 {
                let n = update_belief(&b, &f, 0.4, &p);
                last = n.probs().iter().zip(b.probs()).map(|(x, y)| (x - y).abs()).sum();
                b = n;
            }
            prop_assert!(last < 1e-6);
        }

        #[test]
        fn map_matches_argmax_and_ignores_scale(prev in arb_belief(), k in 0.1f64..10.0) {
            let p = prev.probs();
            let mut best = 0;
            for i in 0..3 { if p[i] > p[best] { best = i; } }
            prop_assert_eq!(map_intention(&prev), Lateral::ALL[best]);
            let scaled = IntentionBelief::new(prev.vehicle, p.map(|x| x * k)).normalized();
            prop_assert_eq!(map_intention(&scaled), map_intention(&prev));
        }
    }
}
