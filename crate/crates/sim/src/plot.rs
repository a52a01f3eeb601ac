//! SVG renders of episode logs: top-down keyframes and a metrics strip.

use std::fmt::Write as _;

use eudm_core::LaneMap;

use crate::episode::{EpisodeFrame, FrameVehicle};
use crate::SimError;

/// Width of the keyframe window around the ego, in meters.
const VIEW_WIDTH: f64 = 160.0;
const VIEW_HEIGHT: f64 = 80.0;

const EGO_COLOR: &str = "#d62728";
const AGENT_COLOR: &str = "#1f77b4";
const PLAN_COLOR: &str = "#2ca02c";

/// Evenly spaced frame indices, first and last included.
pub fn keyframe_indices(frames: usize, count: usize) -> Vec<usize> {
    match (frames, count) {
        (0, _) | (_, 0) => Vec::new(),
        (_, 1) => vec![0],
        _ => (0..count)
            .map(|k| ((k * (frames - 1)) as f64 / (count - 1) as f64).round() as usize)
            .collect(),
    }
}

fn corners(v: &FrameVehicle) -> [(f64, f64); 4] {
    let (s, c) = v.heading.sin_cos();
    let (hl, hw) = (v.length / 2.0, v.width / 2.0);
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)].map(|(a, b)| (v.x + a * c - b * s, v.y + a * s + b * c))
}

fn points_attr(pts: impl IntoIterator<Item = (f64, f64)>) -> String {
    pts.into_iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// One top-down SVG per requested keyframe: lane centerlines, vehicle
/// footprints, the ego's driven path so far and its latest plan.
pub fn render_keyframes(
    frames: &[EpisodeFrame],
    map: &LaneMap,
    ego: u32,
    count: usize,
) -> Result<Vec<String>, SimError> {
    if !frames.iter().any(|f| f.vehicle(ego).is_some()) {
        return Err(SimError::EmptyLog);
    }
    Ok(keyframe_indices(frames.len(), count)
        .into_iter()
        .map(|k| render_frame(frames, k, map, ego))
        .collect())
}

fn render_frame(frames: &[EpisodeFrame], k: usize, map: &LaneMap, ego: u32) -> String {
    let frame = &frames[k];
    let history: Vec<(f64, f64)> = frames[..=k]
        .iter()
        .filter_map(|f| f.vehicle(ego))
        .map(|v| (v.x, v.y))
        .collect();
    let (cx, cy) = frame
        .vehicle(ego)
        .map(|v| (v.x, v.y))
        .or_else(|| history.last().copied())
        .unwrap_or_default();
    let plan = frames[..=k].iter().rev().find_map(|f| f.plan.as_ref());

    let mut svg = String::new();
    // y grows upward in world coordinates, so flip the whole scene
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="{:.2} {:.2} {VIEW_WIDTH} {VIEW_HEIGHT}" width="800" height="400">"#,
        cx - VIEW_WIDTH / 2.0,
        -cy - VIEW_HEIGHT / 2.0,
    );
    let _ = writeln!(svg, r##"<rect x="{:.2}" y="{:.2}" width="{VIEW_WIDTH}" height="{VIEW_HEIGHT}" fill="#f4f4f4"/>"##, cx - VIEW_WIDTH / 2.0, -cy - VIEW_HEIGHT / 2.0);
    let _ = writeln!(svg, r#"<g transform="scale(1,-1)">"#);
    for lane in map.lanes() {
        let pts = lane.centerline().iter().map(|p| (p.x, p.y));
        let _ = writeln!(
            svg,
            r##"<polyline class="lane" points="{}" fill="none" stroke="#bbbbbb" stroke-width="{:.2}" stroke-opacity="0.5"/>"##,
            points_attr(pts),
            lane.width() * 0.95,
        );
    }
    if history.len() > 1 {
        let _ = writeln!(
            svg,
            r#"<polyline class="history" points="{}" fill="none" stroke="{EGO_COLOR}" stroke-width="0.4" stroke-dasharray="1,1"/>"#,
            points_attr(history.iter().copied()),
        );
    }
    if let Some(plan) = plan.filter(|p| !p.trace.is_empty()) {
        let _ = writeln!(
            svg,
            r#"<polyline class="plan" points="{}" fill="none" stroke="{PLAN_COLOR}" stroke-width="0.6"/>"#,
            points_attr(plan.trace.iter().map(|p| (p[0], p[1]))),
        );
    }
    for v in &frame.vehicles {
        let color = if v.id == ego { EGO_COLOR } else { AGENT_COLOR };
        let _ = writeln!(
            svg,
            r#"<polygon class="vehicle" data-id="{}" points="{}" fill="{color}" fill-opacity="0.8"/>"#,
            v.id,
            points_attr(corners(v)),
        );
    }
    let _ = writeln!(svg, "</g>");
    let label = plan.and_then(|p| p.selected.as_deref()).unwrap_or("-");
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="3" font-family="monospace">t={:.2}s {}</text>"#,
        cx - VIEW_WIDTH / 2.0 + 2.0,
        -cy - VIEW_HEIGHT / 2.0 + 4.0,
        frame.t,
        label,
    );
    svg.push_str("</svg>\n");
    svg
}

/// Ego time series for the metrics strip.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StripSeries {
    pub t: Vec<f64>,
    pub velocity: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub curvature: Vec<f64>,
    /// Path length driven, from logged positions.
    pub distance: f64,
}

impl StripSeries {
    /// Trapezoid integral of velocity over time.
    pub fn integrated_distance(&self) -> f64 {
        self.t
            .windows(2)
            .zip(self.velocity.windows(2))
            .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
            .sum()
    }
}

/// Acceleration is differenced from velocity so logs without it still plot.
pub fn strip_series(frames: &[EpisodeFrame], ego: u32) -> StripSeries {
    let samples: Vec<(f64, &FrameVehicle)> = frames
        .iter()
        .filter_map(|f| f.vehicle(ego).map(|v| (f.t, v)))
        .collect();
    let mut out = StripSeries::default();
    for (k, &(t, v)) in samples.iter().enumerate() {
        out.t.push(t);
        out.velocity.push(v.velocity);
        out.curvature.push(v.curvature);
        let accel = match k {
            0 => 0.0,
            _ => {
                let (tp, p) = samples[k - 1];
                if t > tp {
                    (v.velocity - p.velocity) / (t - tp)
                } else {
                    0.0
                }
            }
        };
        out.acceleration.push(accel);
        if k > 0 {
            let p = samples[k - 1].1;
            out.distance += f64::hypot(v.x - p.x, v.y - p.y);
        }
    }
    if out.acceleration.len() > 1 {
        out.acceleration[0] = out.acceleration[1];
    }
    out
}

/// Three stacked panels of velocity, acceleration and curvature over time.
pub fn render_strip(series: &StripSeries) -> String {
    const W: f64 = 800.0;
    const PANEL: f64 = 140.0;
    const PAD: f64 = 40.0;
    let panels: [(&str, &[f64], &str); 3] = [
        ("velocity (m/s)", &series.velocity, EGO_COLOR),
        ("acceleration (m/s^2)", &series.acceleration, AGENT_COLOR),
        ("curvature (1/m)", &series.curvature, PLAN_COLOR),
    ];
    let (t0, t1) = match (series.t.first(), series.t.last()) {
        (Some(&a), Some(&b)) if b > a => (a, b),
        (Some(&a), _) => (a, a + 1.0),
        _ => (0.0, 1.0),
    };
    let height = 3.0 * (PANEL + PAD) + PAD;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {height}" width="{W}" height="{height}">"#
    );
    for (k, (name, values, color)) in panels.iter().enumerate() {
        let top = PAD + k as f64 * (PANEL + PAD);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
        let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
        if hi - lo < 1e-9 {
            hi = lo + 1.0;
        }
        let x = |t: f64| PAD + (t - t0) / (t1 - t0) * (W - 2.0 * PAD);
        let y = |v: f64| top + PANEL - (v - lo) / (hi - lo) * PANEL;
        let _ = writeln!(
            svg,
            r##"<rect x="{PAD}" y="{top}" width="{}" height="{PANEL}" fill="none" stroke="#888888"/>"##,
            W - 2.0 * PAD
        );
        let _ = writeln!(
            svg,
            r#"<text x="{PAD}" y="{:.1}" font-size="12" font-family="monospace">{name} [{lo:.3}, {hi:.3}]</text>"#,
            top - 6.0
        );
        let _ = writeln!(
            svg,
            r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
            points_attr(series.t.iter().zip(values.iter()).map(|(&t, &v)| (x(t), y(v))))
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{PAD}" y="{:.1}" font-size="12" font-family="monospace">t = {t0:.1} .. {t1:.1} s</text>"#,
        height - 12.0
    );
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::PlanSummary;
    use eudm_core::fixtures::straight_road;
    use eudm_core::{VehicleParams, VehicleState, Vec2, VehicleId};

    fn ego_only(n: usize) -> Vec<EpisodeFrame> {
        let params = VehicleParams::default();
        (0..n)
            .map(|k| {
                let t = 0.05 * k as f64;
                // speeding up along a gentle arc
                let v = 8.0 + 0.5 * t;
                let x = 8.0 * t + 0.25 * t * t;
                let mut s = VehicleState::new(Vec2::new(x, 0.0), 0.0, v);
                s.acceleration = 0.5;
                EpisodeFrame {
                    t,
                    vehicles: vec![FrameVehicle::new(VehicleId(0), &params, &s)],
                    meta: None,
                    plan: (k % 4 == 0).then(|| PlanSummary {
                        selected: Some("LK-M LK-M LK-M LK-M".into()),
                        emergency: false,
                        risky: Vec::new(),
                        trace: (1..=20).map(|j| [x + j as f64, 0.0]).collect(),
                    }),
                    events: Vec::new(),
                }
            })
            .collect()
    }

    #[test]
    fn one_svg_per_keyframe() {
        let frames = ego_only(101);
        let map = straight_road(2, 300.0);
        for count in [1, 3, 7] {
            let svgs = render_keyframes(&frames, &map, 0, count).unwrap();
            assert_eq!(svgs.len(), count);
        }
        assert_eq!(keyframe_indices(101, 3), vec![0, 50, 100]);
        assert!(keyframe_indices(0, 3).is_empty());
    }

    #[test]
    fn empty_road_draws_one_vehicle_and_one_trace() {
        let frames = ego_only(41);
        let svg = render_keyframes(&frames, &straight_road(2, 300.0), 0, 2).unwrap().pop().unwrap();
        assert_eq!(svg.matches(r#"class="vehicle""#).count(), 1);
        assert_eq!(svg.matches(r#"class="history""#).count(), 1);
        assert_eq!(svg.matches(r#"class="plan""#).count(), 1);
        assert_eq!(svg.matches(r#"class="lane""#).count(), 2);
    }

    #[test]
    fn strip_integrates_to_logged_distance() {
        let frames = ego_only(201);
        let s = strip_series(&frames, 0);
        assert!((s.integrated_distance() - s.distance).abs() <= 0.01 * s.distance);
        assert!(s.acceleration.iter().all(|a| (a - 0.5).abs() < 1e-6));
        let svg = render_strip(&s);
        assert_eq!(svg.matches(r#"class="series""#).count(), 3);
    }

    #[test]
    fn missing_ego_is_an_error() {
        let frames = ego_only(5);
        assert!(matches!(render_keyframes(&frames, &straight_road(1, 50.0), 9, 2), Err(SimError::EmptyLog)));
    }
}
