//! Episode logs: JSON lines, one frame per line. Every line is also a valid
//! replay frame; the extra fields are ignored by the replay reader.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use eudm_core::log::LogFrame;
use eudm_core::planner::Mode;
use eudm_core::{VehicleId, VehicleParams, VehicleState};

use crate::scenario::Thresholds;
use crate::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameVehicle {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub velocity: f64,
    #[serde(default)]
    pub acceleration: f64,
    #[serde(default)]
    pub curvature: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

fn default_length() -> f64 {
    VehicleParams::default().length
}

fn default_width() -> f64 {
    VehicleParams::default().width
}

impl FrameVehicle {
    pub fn new(id: VehicleId, params: &VehicleParams, s: &VehicleState) -> Self {
        Self {
            id: id.0,
            x: s.position.x,
            y: s.position.y,
            heading: s.heading,
            velocity: s.velocity,
            acceleration: s.acceleration,
            curvature: s.curvature,
            length: params.length,
            width: params.width,
        }
    }
}

/// Header carried by the first frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub map: String,
    pub ego: u32,
    pub mode: Mode,
    pub seed: u64,
    pub dt: f64,
    pub thresholds: Thresholds,
}

/// Decision taken at this frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub selected: Option<String>,
    pub emergency: bool,
    /// Vehicles flagged risky by scenario branching.
    pub risky: Vec<u32>,
    /// Planned ego positions.
    pub trace: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Collision { a: u32, b: u32 },
    Spawned { id: u32 },
    Retired { id: u32 },
    LaneChange { id: u32, from: u32, to: u32 },
    End { reason: EndReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Duration,
    EgoExited,
    Collision,
    NoFeasiblePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFrame {
    pub t: f64,
    pub vehicles: Vec<FrameVehicle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<EpisodeMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub events: Vec<Event>,
}

impl EpisodeFrame {
    pub fn vehicle(&self, id: u32) -> Option<&FrameVehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn to_log_frame(&self) -> LogFrame {
        LogFrame {
            t: self.t,
            vehicles: self
                .vehicles
                .iter()
                .map(|v| eudm_core::log::LogVehicle {
                    id: v.id,
                    x: v.x,
                    y: v.y,
                    heading: v.heading,
                    velocity: v.velocity,
                })
                .collect(),
        }
    }
}

pub fn write_frames<W: Write>(mut out: W, frames: &[EpisodeFrame]) -> Result<(), SimError> {
    for f in frames {
        serde_json::to_writer(&mut out, f).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses an episode log. Blank lines are skipped and time must not go
/// backwards.
pub fn read_frames<R: BufRead>(reader: R) -> Result<Vec<EpisodeFrame>, SimError> {
    let mut out: Vec<EpisodeFrame> = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| SimError::MalformedLog { line: k + 1, message };
        let frame: EpisodeFrame = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if !frame.t.is_finite() || out.last().is_some_and(|p| frame.t < p.t) {
            return Err(malformed(format!("timestamp {} out of order", frame.t)));
        }
        out.push(frame);
    }
    Ok(out)
}

/// Header of the first frame, if any.
pub fn meta(frames: &[EpisodeFrame]) -> Option<&EpisodeMeta> {
    frames.first().and_then(|f| f.meta.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: f64) -> EpisodeFrame {
        EpisodeFrame {
            t,
            vehicles: vec![FrameVehicle {
                id: 0,
                x: 1.0 / 3.0,
                y: 0.1,
                heading: 0.2,
                velocity: 7.123456789,
                acceleration: -0.5,
                curvature: 1e-3,
                length: 4.8,
                width: 1.9,
            }],
            meta: None,
            plan: None,
            events: vec![Event::End { reason: EndReason::Duration }],
        }
    }

    #[test]
    fn round_trips_exactly() {
        let frames = vec![frame(0.0), frame(0.05)];
        let mut buf = Vec::new();
        write_frames(&mut buf, &frames).unwrap();
        assert_eq!(read_frames(buf.as_slice()).unwrap(), frames);
    }

    #[test]
    fn episode_lines_are_replay_frames() {
        let mut buf = Vec::new();
        write_frames(&mut buf, &[frame(0.0)]).unwrap();
        let plain = eudm_core::log::read_frames(buf.as_slice()).unwrap();
        assert_eq!(plain[0], frame(0.0).to_log_frame());
    }

    #[test]
    fn reports_bad_line() {
        let text = "{\"t\":0.0,\"vehicles\":[]}\n{oops}\n";
        match read_frames(text.as_bytes()) {
            Err(SimError::MalformedLog { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let text = "{\"t\":1.0,\"vehicles\":[]}\n{\"t\":0.5,\"vehicles\":[]}\n";
        assert!(matches!(read_frames(text.as_bytes()), Err(SimError::MalformedLog { line: 2, .. })));
    }
}
