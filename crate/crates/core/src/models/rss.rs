//! Minimum safe longitudinal distance.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RssParams {
    pub response_time: f64,
    pub max_accel_during_response: f64,
    /// Braking the rear vehicle is guaranteed to apply.
    pub min_brake: f64,
    /// Hardest braking the front vehicle may apply.
    pub max_brake: f64,
}

impl Default for RssParams {
    fn default() -> Self {
        Self {
            response_time: 0.5,
            max_accel_during_response: 1.0,
            min_brake: 6.0,
            max_brake: 8.0,
        }
    }
}

pub fn rss_min_safe_gap(v_rear: f64, v_front: f64, p: &RssParams) -> f64 {
    let rho = p.response_time;
    let a = p.max_accel_during_response;
    let v_resp = v_rear + rho * a;
    let d = v_rear * rho + 0.5 * a * rho * rho + v_resp * v_resp / (2.0 * p.min_brake)
        - v_front * v_front / (2.0 * p.max_brake);
    d.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn at_rest_without_response_acceleration_is_zero() {
        let p = RssParams {
            max_accel_during_response: 0.0,
            ..Default::default()
        };
        assert_eq!(rss_min_safe_gap(0.0, 0.0, &p), 0.0);
        let q = RssParams::default();
        let expected = 0.5 * 1.0 * 0.25 + 0.25 / 12.0;
        assert!((rss_min_safe_gap(0.0, 0.0, &q) - expected).abs() < 1e-12);
    }

    #[test]
    fn fast_front_vehicle_clamps_to_zero() {
        assert_eq!(rss_min_safe_gap(0.0, 100.0, &RssParams::default()), 0.0);
    }

    #[test]
    fn closed_form_example() {
        let p = RssParams {
            response_time: 1.0,
            max_accel_during_response: 2.0,
            min_brake: 4.0,
            max_brake: 8.0,
        };
        // 20 + 1 + 22^2 / 8 - 100 / 16
        let expected = 20.0 + 1.0 + 484.0 / 8.0 - 100.0 / 16.0;
        assert!((rss_min_safe_gap(20.0, 10.0, &p) - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn monotone_in_speeds(vr in 0.0f64..40.0, vf in 0.0f64..40.0, dv in 0.0f64..10.0) {
            let p = RssParams::default();
            let base = rss_min_safe_gap(vr, vf, &p);
            prop_assert!(base >= 0.0);
            prop_assert!(rss_min_safe_gap(vr + dv, vf, &p) >= base);
            prop_assert!(rss_min_safe_gap(vr, vf + dv, &p) <= base);
        }
    }
}
