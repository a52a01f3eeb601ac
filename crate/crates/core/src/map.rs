//! Lane graph with polyline centerlines and Frenet projection.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{normalize_angle, Vec2};

/// Largest spacing allowed between consecutive centerline points.
pub const MAX_POINT_SPACING: f64 = 2.0;
/// Default bound on the lateral offset accepted by a projection.
pub const DEFAULT_MAX_OFFSET: f64 = 10.0;
/// How far past a lane end a foot point may fall before projection fails.
const ENDPOINT_TOLERANCE: f64 = 1.0;
const CHAIN_DEPTH: usize = 4;
const GRID_CELL: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LaneId(pub u32);

impl fmt::Display for LaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lane {}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Error)]
pub enum MapError {
    #[error("failed to read map: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse map: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("map has no lanes")]
    Empty,
    #[error("duplicate {0}")]
    DuplicateLane(LaneId),
    #[error("{0}: lane id too large")]
    IdTooLarge(LaneId),
    #[error("{0}: a lane needs at least two centerline points")]
    TooFewPoints(LaneId),
    #[error("{lane}: points {index} and {next} are {spacing:.3} m apart (max {MAX_POINT_SPACING})")]
    SpacingTooLarge {
        lane: LaneId,
        index: usize,
        next: usize,
        spacing: f64,
    },
    #[error("{lane}: arc length does not increase at point {index}")]
    NonIncreasing { lane: LaneId, index: usize },
    #[error("{lane}: speed limit must be positive and finite")]
    BadSpeedLimit { lane: LaneId },
    #[error("{lane}: width must be positive")]
    BadWidth { lane: LaneId },
    #[error("{lane} references unknown lane {missing}")]
    UnknownLane { lane: LaneId, missing: u32 },
    #[error("{lane}: {side:?} neighbor {neighbor} does not point back")]
    AsymmetricNeighbor {
        lane: LaneId,
        neighbor: LaneId,
        side: Side,
    },
    #[error("successor chain through {0} forms a cycle")]
    SuccessorCycle(LaneId),
    #[error("{0}: point is {1:.3} m from the centerline")]
    ProjectionOutOfRange(LaneId, f64),
    #[error("{0} has no {1:?} neighbor")]
    NoSuchNeighbor(LaneId, Side),
    #[error("unknown {0}")]
    NoSuchLane(LaneId),
}

/// On-disk lane description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: LaneId,
    pub points: Vec<Vec2>,
    #[serde(default)]
    pub left: Option<LaneId>,
    #[serde(default)]
    pub right: Option<LaneId>,
    #[serde(default)]
    pub successor: Option<LaneId>,
    pub speed_limit: f64,
    #[serde(default = "default_lane_width")]
    pub width: f64,
}

fn default_lane_width() -> f64 {
    3.5
}

/// On-disk map document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    #[serde(default)]
    pub ring: bool,
    pub lanes: Vec<LaneSpec>,
}

/// Result of projecting a point onto a lane centerline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub s: f64,
    pub d: f64,
    pub segment: usize,
    /// Heading of the centerline tangent at the foot point.
    pub tangent: f64,
}

/// Lane-relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetPose {
    pub lane_id: LaneId,
    pub s: f64,
    pub d: f64,
    pub heading_error: f64,
}

#[derive(Debug, Clone)]
pub struct Lane {
    spec: LaneSpec,
    closed: bool,
    pts: Vec<Vec2>,
    arc: Vec<f64>,
    dirs: Vec<Vec2>,
    seg_len: Vec<f64>,
    grid: SegmentGrid,
}

impl Lane {
    fn build(spec: LaneSpec, closed: bool, max_offset: f64) -> Result<Lane, MapError> {
        let id = spec.id;
        if spec.points.len() < 2 {
            return Err(MapError::TooFewPoints(id));
        }
        if !(spec.speed_limit.is_finite() && spec.speed_limit > 0.0) {
            return Err(MapError::BadSpeedLimit { lane: id });
        }
        if !(spec.width.is_finite() && spec.width > 0.0) {
            return Err(MapError::BadWidth { lane: id });
        }
        let mut pts = spec.points.clone();
        if closed {
            pts.push(pts[0]);
        }
        let n = pts.len();
        let mut arc = Vec::with_capacity(n);
        let mut dirs = Vec::with_capacity(n - 1);
        let mut seg_len = Vec::with_capacity(n - 1);
        arc.push(0.0);
        for i in 0..n - 1 {
            let delta = pts[i + 1] - pts[i];
            let len = delta.norm();
            if !(len > 1e-9) {
                return Err(MapError::NonIncreasing { lane: id, index: i + 1 });
            }
            if len > MAX_POINT_SPACING + 1e-9 {
                return Err(MapError::SpacingTooLarge {
                    lane: id,
                    index: i,
                    next: (i + 1) % spec.points.len(),
                    spacing: len,
                });
            }
            arc.push(arc[i] + len);
            dirs.push(delta * (1.0 / len));
            seg_len.push(len);
        }
        let grid = SegmentGrid::build(&pts, max_offset);
        Ok(Lane {
            spec,
            closed,
            pts,
            arc,
            dirs,
            seg_len,
            grid,
        })
    }

    pub fn id(&self) -> LaneId {
        self.spec.id
    }

    pub fn left(&self) -> Option<LaneId> {
        self.spec.left
    }

    pub fn right(&self) -> Option<LaneId> {
        self.spec.right
    }

    pub fn neighbor(&self, side: Side) -> Option<LaneId> {
        match side {
            Side::Left => self.spec.left,
            Side::Right => self.spec.right,
        }
    }

    pub fn successor(&self) -> Option<LaneId> {
        self.spec.successor
    }

    pub fn speed_limit(&self) -> f64 {
        self.spec.speed_limit
    }

    pub fn width(&self) -> f64 {
        self.spec.width
    }

    /// True when the centerline closes on itself (ring maps).
    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    pub fn centerline(&self) -> &[Vec2] {
        &self.spec.points
    }

    pub fn spec(&self) -> &LaneSpec {
        &self.spec
    }

    fn segments(&self) -> usize {
        self.dirs.len()
    }

    /// Wraps `s` into `[0, length)` for closed lanes, clamps it otherwise.
    pub fn wrap_s(&self, s: f64) -> f64 {
        let len = self.length();
        if self.closed {
            s.rem_euclid(len)
        } else {
            s.clamp(0.0, len)
        }
    }

    fn segment_at(&self, s: f64) -> usize {
        // arc[i] <= s < arc[i + 1]
        let idx = self.arc.partition_point(|&a| a <= s);
        idx.saturating_sub(1).min(self.segments() - 1)
    }

    /// Centerline point and tangent heading at arc length `s`.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let s = self.wrap_s(s);
        let i = self.segment_at(s);
        let u = s - self.arc[i];
        (self.pts[i] + self.dirs[i] * u, self.dirs[i].angle())
    }

    /// Cartesian point at Frenet coordinates `(s, d)`.
    pub fn point_at(&self, s: f64, d: f64) -> Vec2 {
        let s = self.wrap_s(s);
        let i = self.segment_at(s);
        let u = s - self.arc[i];
        self.pts[i] + self.dirs[i] * u + self.dirs[i].perp() * d
    }

    #[inline]
    fn eval_segment(&self, p: Vec2, i: usize) -> (f64, f64) {
        // returns (clamped distance squared, unclamped parameter)
        let rel = p - self.pts[i];
        let u = rel.dot(self.dirs[i]);
        let uc = u.clamp(0.0, self.seg_len[i]);
        let foot = self.pts[i] + self.dirs[i] * uc;
        ((p - foot).norm_sq(), u)
    }

    fn finish(&self, p: Vec2, i: usize, u: f64, max_offset: f64) -> Option<Projection> {
        let last = self.segments() - 1;
        let mut uc = u.clamp(0.0, self.seg_len[i]);
        let mut overshoot = 0.0;
        if !self.closed {
            if i == 0 && u < 0.0 {
                overshoot = -u;
                uc = 0.0;
            } else if i == last && u > self.seg_len[i] {
                overshoot = u - self.seg_len[i];
                uc = self.seg_len[i];
            }
        }
        if overshoot > ENDPOINT_TOLERANCE {
            return None;
        }
        let d = self.dirs[i].cross(p - self.pts[i]);
        if d.abs() > max_offset {
            return None;
        }
        let mut s = self.arc[i] + uc;
        if self.closed && s >= self.length() {
            s -= self.length();
        }
        Some(Projection {
            s,
            d,
            segment: i,
            tangent: self.dirs[i].angle(),
        })
    }

    /// Nearest-point projection over the whole lane.
    pub fn project(&self, p: Vec2, max_offset: f64) -> Option<Projection> {
        let mut best: Option<(f64, usize, f64)> = None;
        for &i in self.grid.candidates(p) {
            let i = i as usize;
            let (dist, u) = self.eval_segment(p, i);
            if best.map_or(true, |(b, _, _)| dist < b) {
                best = Some((dist, i, u));
            }
        }
        let (_, i, u) = best?;
        self.finish(p, i, u, max_offset)
    }

    /// Projection by local descent from a previously found segment. Falls back
    /// to the global search when the descent wanders too far.
    pub fn project_from(&self, p: Vec2, hint: usize, max_offset: f64) -> Option<Projection> {
        let n = self.segments();
        let step = |i: usize, fwd: bool| -> Option<usize> {
            if fwd {
                if i + 1 < n {
                    Some(i + 1)
                } else if self.closed {
                    Some(0)
                } else {
                    None
                }
            } else if i > 0 {
                Some(i - 1)
            } else if self.closed {
                Some(n - 1)
            } else {
                None
            }
        };
        let mut i = hint.min(n - 1);
        let (mut best, mut best_u) = self.eval_segment(p, i);
        for _ in 0..64 {
            let mut moved = false;
            for fwd in [true, false] {
                if let Some(j) = step(i, fwd) {
                    let (dist, u) = self.eval_segment(p, j);
                    if dist < best {
                        best = dist;
                        best_u = u;
                        i = j;
                        moved = true;
                        break;
                    }
                }
            }
            if !moved {
                return self.finish(p, i, best_u, max_offset);
            }
        }
        self.project(p, max_offset)
    }

    /// Frenet pose of a point with the given heading.
    pub fn frenet_project(
        &self,
        point: Vec2,
        heading: f64,
        max_offset: f64,
    ) -> Result<FrenetPose, MapError> {
        match self.project(point, max_offset) {
            Some(pr) => Ok(FrenetPose {
                lane_id: self.id(),
                s: pr.s,
                d: pr.d,
                heading_error: normalize_angle(heading - pr.tangent),
            }),
            None => {
                let nearest = self
                    .pts
                    .iter()
                    .map(|q| q.distance(point))
                    .fold(f64::INFINITY, f64::min);
                Err(MapError::ProjectionOutOfRange(self.id(), nearest))
            }
        }
    }
}

/// Uniform grid over a lane's bounding box listing every segment within
/// `max_offset` of each cell.
#[derive(Debug, Clone)]
struct SegmentGrid {
    origin: Vec2,
    nx: usize,
    ny: usize,
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl SegmentGrid {
    fn build(pts: &[Vec2], reach: f64) -> Self {
        let (mut lo, mut hi) = (pts[0], pts[0]);
        for p in pts {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        let origin = Vec2::new(lo.x - reach, lo.y - reach);
        let nx = (((hi.x - lo.x + 2.0 * reach) / GRID_CELL).floor() as usize) + 1;
        let ny = (((hi.y - lo.y + 2.0 * reach) / GRID_CELL).floor() as usize) + 1;
        let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); nx * ny];
        for i in 0..pts.len() - 1 {
            let (a, b) = (pts[i], pts[i + 1]);
            let x0 = ((a.x.min(b.x) - reach - origin.x) / GRID_CELL).floor().max(0.0) as usize;
            let x1 = (((a.x.max(b.x) + reach - origin.x) / GRID_CELL).floor() as usize).min(nx - 1);
            let y0 = ((a.y.min(b.y) - reach - origin.y) / GRID_CELL).floor().max(0.0) as usize;
            let y1 = (((a.y.max(b.y) + reach - origin.y) / GRID_CELL).floor() as usize).min(ny - 1);
            for gy in y0..=y1 {
                for gx in x0..=x1 {
                    buckets[gy * nx + gx].push(i as u32);
                }
            }
        }
        let mut starts = Vec::with_capacity(nx * ny + 1);
        let mut items = Vec::new();
        for b in buckets {
            starts.push(items.len() as u32);
            items.extend(b);
        }
        starts.push(items.len() as u32);
        Self {
            origin,
            nx,
            ny,
            starts,
            items,
        }
    }

    fn candidates(&self, p: Vec2) -> &[u32] {
        let gx = ((p.x - self.origin.x) / GRID_CELL).floor();
        let gy = ((p.y - self.origin.y) / GRID_CELL).floor();
        if gx < 0.0 || gy < 0.0 || gx as usize >= self.nx || gy as usize >= self.ny {
            return &[];
        }
        let c = gy as usize * self.nx + gx as usize;
        &self.items[self.starts[c] as usize..self.starts[c + 1] as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Link {
    pub lane: usize,
    /// Position of the linked lane's `s = 0` in the source lane's coordinate.
    pub offset: f64,
}

/// Immutable lane graph shared by every evaluator.
#[derive(Debug, Clone)]
pub struct LaneMap {
    ring: bool,
    max_offset: f64,
    lanes: Vec<Lane>,
    slots: Vec<u32>,
    links: Vec<Vec<Link>>,
}

impl LaneMap {
    pub fn from_file(file: MapFile) -> Result<LaneMap, MapError> {
        Self::with_max_offset(file, DEFAULT_MAX_OFFSET)
    }

    pub fn with_max_offset(file: MapFile, max_offset: f64) -> Result<LaneMap, MapError> {
        if file.lanes.is_empty() {
            return Err(MapError::Empty);
        }
        let mut specs = file.lanes;
        specs.sort_by_key(|l| l.id);
        let max_id = specs.last().unwrap().id;
        if max_id.0 > 1 << 20 {
            return Err(MapError::IdTooLarge(max_id));
        }
        let mut slots = vec![u32::MAX; max_id.0 as usize + 1];
        for (i, l) in specs.iter().enumerate() {
            if slots[l.id.0 as usize] != u32::MAX {
                return Err(MapError::DuplicateLane(l.id));
            }
            slots[l.id.0 as usize] = i as u32;
        }
        let known = |id: LaneId| slots.get(id.0 as usize).is_some_and(|&s| s != u32::MAX);
        for l in &specs {
            for r in [l.left, l.right, l.successor].into_iter().flatten() {
                if !known(r) {
                    return Err(MapError::UnknownLane {
                        lane: l.id,
                        missing: r.0,
                    });
                }
            }
        }
        let by_id = |id: LaneId| &specs[slots[id.0 as usize] as usize];
        for l in &specs {
            if let Some(n) = l.left {
                if by_id(n).right != Some(l.id) {
                    return Err(MapError::AsymmetricNeighbor {
                        lane: l.id,
                        neighbor: n,
                        side: Side::Left,
                    });
                }
            }
            if let Some(n) = l.right {
                if by_id(n).left != Some(l.id) {
                    return Err(MapError::AsymmetricNeighbor {
                        lane: l.id,
                        neighbor: n,
                        side: Side::Right,
                    });
                }
            }
        }
        // Successor chains: only self-loops on ring maps may close.
        for l in &specs {
            if file.ring && l.successor == Some(l.id) {
                continue;
            }
            let mut seen = HashSet::new();
            seen.insert(l.id);
            let mut cur = l.successor;
            while let Some(next) = cur {
                let nspec = by_id(next);
                if file.ring && nspec.successor == Some(next) {
                    break;
                }
                if !seen.insert(next) {
                    return Err(MapError::SuccessorCycle(l.id));
                }
                cur = nspec.successor;
            }
        }
        let lanes = specs
            .into_iter()
            .map(|s| {
                let closed = file.ring && s.successor == Some(s.id);
                Lane::build(s, closed, max_offset)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut map = LaneMap {
            ring: file.ring,
            max_offset,
            lanes,
            slots,
            links: Vec::new(),
        };
        map.links = map.build_links();
        Ok(map)
    }

    pub fn from_json(text: &str) -> Result<LaneMap, MapError> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LaneMap, MapError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self) -> MapFile {
        MapFile {
            ring: self.ring,
            lanes: self.lanes.iter().map(|l| l.spec.clone()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("map serializes")
    }

    fn build_links(&self) -> Vec<Vec<Link>> {
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); self.lanes.len()];
        for (i, l) in self.lanes.iter().enumerate() {
            if l.closed {
                continue;
            }
            if let Some(s) = l.successor() {
                preds[self.slot(s)].push(i);
            }
        }
        let mut links = Vec::with_capacity(self.lanes.len());
        for (i, lane) in self.lanes.iter().enumerate() {
            let mut out = Vec::new();
            if !lane.closed {
                let mut offset = lane.length();
                let mut cur = lane.successor().map(|s| self.slot(s));
                for _ in 0..CHAIN_DEPTH {
                    let Some(j) = cur else { break };
                    if j == i || self.lanes[j].closed {
                        break;
                    }
                    out.push(Link { lane: j, offset });
                    offset += self.lanes[j].length();
                    cur = self.lanes[j].successor().map(|s| self.slot(s));
                }
                let mut frontier = vec![(i, 0.0)];
                for _ in 0..CHAIN_DEPTH {
                    let mut next = Vec::new();
                    for (k, off) in frontier {
                        for &p in &preds[k] {
                            let o = off - self.lanes[p].length();
                            out.push(Link { lane: p, offset: o });
                            next.push((p, o));
                        }
                    }
                    frontier = next;
                }
            }
            links.push(out);
        }
        links
    }

    #[inline]
    pub(crate) fn slot(&self, id: LaneId) -> usize {
        self.slots[id.0 as usize] as usize
    }

    pub fn index_of(&self, id: LaneId) -> Option<usize> {
        self.slots
            .get(id.0 as usize)
            .filter(|&&s| s != u32::MAX)
            .map(|&s| s as usize)
    }

    pub fn lane(&self, id: LaneId) -> Option<&Lane> {
        self.index_of(id).map(|i| &self.lanes[i])
    }

    pub fn require(&self, id: LaneId) -> Result<&Lane, MapError> {
        self.lane(id).ok_or(MapError::NoSuchLane(id))
    }

    #[inline]
    pub fn lane_at(&self, index: usize) -> &Lane {
        &self.lanes[index]
    }

    pub fn lanes(&self) -> &[Lane] {
        &self.lanes
    }

    pub fn is_ring(&self) -> bool {
        self.ring
    }

    pub fn max_offset(&self) -> f64 {
        self.max_offset
    }

    pub fn neighbor_index(&self, index: usize, side: Side) -> Option<usize> {
        self.lanes[index].neighbor(side).map(|id| self.slot(id))
    }

    pub fn successor_index(&self, index: usize) -> Option<usize> {
        self.lanes[index].successor().map(|id| self.slot(id))
    }

    /// Signed distance from `(from, s_from)` forward to `(to, s_to)` measured
    /// along the lane graph, if the two lanes are connected longitudinally.
    pub fn longitudinal_offset(&self, from: usize, s_from: f64, to: usize, s_to: f64) -> Option<f64> {
        if from == to {
            let lane = &self.lanes[from];
            let mut ds = s_to - s_from;
            if lane.closed {
                let len = lane.length();
                ds = (ds + 0.5 * len).rem_euclid(len) - 0.5 * len;
            }
            return Some(ds);
        }
        self.links[from]
            .iter()
            .find(|l| l.lane == to)
            .map(|l| l.offset + s_to - s_from)
    }

    /// Moves `ds >= 0` forward along the successor chain.
    pub fn advance(&self, index: usize, s: f64, ds: f64) -> Option<(usize, f64)> {
        let mut lane = index;
        let mut s = s + ds;
        for _ in 0..=CHAIN_DEPTH {
            let l = &self.lanes[lane];
            if l.closed {
                return Some((lane, s.rem_euclid(l.length())));
            }
            if s <= l.length() {
                return Some((lane, s));
            }
            s -= l.length();
            lane = self.successor_index(lane)?;
        }
        None
    }

    /// Remaining drivable distance from `(index, s)` before the chain ends,
    /// capped at `horizon`.
    pub fn distance_to_end(&self, index: usize, s: f64, horizon: f64) -> f64 {
        let mut lane = index;
        let mut acc = -s;
        for _ in 0..=CHAIN_DEPTH {
            let l = &self.lanes[lane];
            if l.closed {
                return horizon;
            }
            acc += l.length();
            if acc >= horizon {
                return horizon;
            }
            match self.successor_index(lane) {
                Some(n) => lane = n,
                None => return acc.max(0.0),
            }
        }
        horizon
    }

    /// Lane reached by `action`'s lateral component from `current`.
    pub fn neighbor_of(&self, current: LaneId, side: Side) -> Result<LaneId, MapError> {
        self.require(current)?
            .neighbor(side)
            .ok_or(MapError::NoSuchNeighbor(current, side))
    }

    /// Best lane for a point: smallest |d| among lanes whose direction agrees
    /// with `heading`.
    pub fn locate(&self, p: Vec2, heading: f64) -> Option<(usize, Projection)> {
        let mut best: Option<(usize, Projection)> = None;
        for (i, lane) in self.lanes.iter().enumerate() {
            if let Some(pr) = lane.project(p, self.max_offset) {
                if normalize_angle(heading - pr.tangent).abs() > std::f64::consts::FRAC_PI_2 {
                    continue;
                }
                if best.map_or(true, |(_, b)| pr.d.abs() < b.d.abs()) {
                    best = Some((i, pr));
                }
            }
        }
        best
    }

    /// Lanes sorted by id, for stable iteration in logs.
    pub fn lane_ids(&self) -> BTreeSet<LaneId> {
        self.lanes.iter().map(|l| l.id()).collect()
    }
}

/// Projects `point` onto `lane` with the default offset bound.
pub fn frenet_project(point: Vec2, heading: f64, lane: &Lane) -> Result<FrenetPose, MapError> {
    lane.frenet_project(point, heading, DEFAULT_MAX_OFFSET)
}
