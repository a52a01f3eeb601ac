//! Intelligent driver model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub desired_velocity: f64,
    pub time_headway: f64,
    pub max_accel: f64,
    pub comfortable_decel: f64,
    pub min_spacing: f64,
    pub exponent: f64,
    /// Lower clamp on the returned acceleration, positive magnitude.
    pub hard_brake: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_velocity: 15.0,
            time_headway: 1.2,
            max_accel: 2.0,
            comfortable_decel: 2.5,
            min_spacing: 2.0,
            exponent: 4.0,
            hard_brake: 8.0,
        }
    }
}

impl IdmParams {
    pub fn with_desired_velocity(self, v0: f64) -> Self {
        Self {
            desired_velocity: v0,
            ..self
        }
    }

    /// Desired dynamic gap `s*`.
    pub fn desired_gap(&self, v: f64, v_lead: f64) -> f64 {
        let dv = v - v_lead;
        let dynamic = v * self.time_headway
            + v * dv / (2.0 * (self.max_accel * self.comfortable_decel).sqrt());
        self.min_spacing + dynamic.max(0.0)
    }

    /// Acceleration without a leader.
    pub fn free_road(&self, v: f64) -> f64 {
        let v0 = self.desired_velocity;
        if v <= v0 {
            if v0 <= 0.0 {
                return 0.0;
            }
            self.max_accel * (1.0 - pow(v / v0, self.exponent))
        } else {
            // above the desired speed: bounded relaxation toward v0
            let e = self.max_accel * self.exponent / self.comfortable_decel;
            -self.comfortable_decel * (1.0 - (v0 / v).powf(e))
        }
    }
}

fn pow(x: f64, e: f64) -> f64 {
    if e == e.trunc() && e.abs() <= 16.0 {
        x.powi(e as i32)
    } else {
        x.powf(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    pub velocity: f64,
    /// Bumper-to-bumper distance.
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum IdmError {
    #[error("non-positive gap {0:.3} m to leader")]
    NonPositiveGap(f64),
}

pub fn idm_acceleration(v: f64, leader: Option<Leader>, p: &IdmParams) -> Result<f64, IdmError> {
    let mut acc = p.free_road(v);
    if let Some(l) = leader {
        if !(l.gap > 0.0) {
            return Err(IdmError::NonPositiveGap(l.gap));
        }
        let ratio = p.desired_gap(v, l.velocity) / l.gap;
        acc -= p.max_accel * ratio * ratio;
    }
    Ok(acc.clamp(-p.hard_brake, p.max_accel))
}

/// As `idm_acceleration`, braking as hard as allowed when the leader overlaps.
pub fn idm_or_brake(v: f64, leader: Option<Leader>, p: &IdmParams) -> f64 {
    idm_acceleration(v, leader, p).unwrap_or(-p.hard_brake)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn oracle(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> f64 {
        let s_star = p.min_spacing
            + (v * p.time_headway
                + v * (v - v_lead) / (2.0 * (p.max_accel * p.comfortable_decel).sqrt()))
            .max(0.0);
        let raw = p.max_accel
            * (1.0 - pow(v / p.desired_velocity, p.exponent) - (s_star / gap).powi(2));
        raw.clamp(-p.hard_brake, p.max_accel)
    }

    #[test]
    fn free_road_equilibrium_and_rest() {
        let p = IdmParams::default();
        assert_eq!(idm_acceleration(p.desired_velocity, None, &p).unwrap(), 0.0);
        assert_eq!(idm_acceleration(0.0, None, &p).unwrap(), p.max_accel);
    }

    #[test]
    fn equilibrium_gap_matches_closed_form() {
        let p = IdmParams::default();
        let v = 10.0;
        let gap = p.min_spacing + v * p.time_headway;
        let got = idm_acceleration(v, Some(Leader { velocity: v, gap }), &p).unwrap();
        let expected = p.max_accel * (1.0 - (v / p.desired_velocity).powf(4.0) - 1.0);
        assert!((got - expected).abs() < 1e-12);
        assert!((got - oracle(v, v, gap, &p)).abs() < 1e-12);
    }

    #[test]
    fn overlapping_leader_is_an_error() {
        let p = IdmParams::default();
        let r = idm_acceleration(5.0, Some(Leader { velocity: 5.0, gap: 0.0 }), &p);
        assert_eq!(r, Err(IdmError::NonPositiveGap(0.0)));
        assert_eq!(idm_or_brake(5.0, Some(Leader { velocity: 5.0, gap: -1.0 }), &p), -8.0);
    }

    #[test]
    fn above_desired_speed_relaxes_gently() {
        let p = IdmParams::default().with_desired_velocity(10.0);
        let a = idm_acceleration(15.0, None, &p).unwrap();
        assert!(a < 0.0 && a > -p.comfortable_decel);
        let stop = IdmParams::default().with_desired_velocity(0.0);
        assert!((idm_acceleration(3.0, None, &stop).unwrap() + p.comfortable_decel).abs() < 1e-12);
        assert_eq!(idm_acceleration(0.0, None, &stop).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn matches_formula_below_desired_speed(
            v in 0.0f64..15.0, v_lead in 0.0f64..30.0, gap in 0.5f64..200.0
        ) {
            let p = IdmParams::default();
            let got = idm_acceleration(v, Some(Leader { velocity: v_lead, gap }), &p).unwrap();
            prop_assert!((got - oracle(v, v_lead, gap, &p)).abs() < 1e-9);
        }

        #[test]
        fn nonincreasing_in_speed(
            v in 0.0f64..30.0, dv_step in 0.0f64..5.0, rel in -10.0f64..10.0, gap in 0.5f64..150.0,
            v0 in 1.0f64..30.0,
        ) {
            let p = IdmParams::default().with_desired_velocity(v0);
            let lo = idm_acceleration(v, Some(Leader { velocity: (v - rel).max(0.0), gap }), &p).unwrap();
            let w = v + dv_step;
            let hi = idm_acceleration(w, Some(Leader { velocity: (w - rel).max(0.0), gap }), &p).unwrap();
            // fixed speed difference (when the leader speed stays nonnegative)
            if v - rel >= 0.0 {
                prop_assert!(hi <= lo + 1e-12);
            }
            prop_assert!(p.free_road(w) <= p.free_road(v) + 1e-12);
        }

        #[test]
        fn nondecreasing_in_gap(
            v in 0.0f64..30.0, v_lead in 0.0f64..30.0, gap in 0.5f64..150.0, extra in 0.0f64..50.0,
        ) {
            let p = IdmParams::default();
            let near = idm_acceleration(v, Some(Leader { velocity: v_lead, gap }), &p).unwrap();
            let far = idm_acceleration(v, Some(Leader { velocity: v_lead, gap: gap + extra }), &p).unwrap();
            prop_assert!(far >= near - 1e-12);
        }
    }
}
