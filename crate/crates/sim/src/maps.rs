//! Built-in benchmark maps.

use std::f64::consts::TAU;
use std::sync::Arc;

use eudm_core::map::{LaneSpec, MapFile};
use eudm_core::{LaneId, LaneMap, MapError, Vec2};

pub const LANE_WIDTH: f64 = 3.5;
pub const RING_RADIUS: f64 = 120.0;
pub const RING_SPEED_LIMIT: f64 = 15.0;
pub const MERGE_SPEED_LIMIT: f64 = 10.0;
/// Section boundaries of the double merge, in meters along +x.
pub const MERGE_SECTIONS: [f64; 4] = [0.0, 225.0, 375.0, 600.0];
/// Run-out past the end of the measured road so traffic leaves at speed
/// instead of stopping at a dead end. Vehicles are retired on entering it.
pub const MERGE_EXIT_APRON: f64 = 120.0;

const SPACING: f64 = 1.5;

/// Two concentric closed lanes driven counter-clockwise; lane 0 is the outer
/// (right) lane at the nominal radius.
pub fn ring_file() -> MapFile {
    let lanes = (0..2u32)
        .map(|i| {
            let r = RING_RADIUS - i as f64 * LANE_WIDTH;
            let n = (TAU * r / SPACING).ceil() as usize;
            LaneSpec {
                id: LaneId(i),
                points: (0..n)
                    .map(|k| {
                        let a = TAU * k as f64 / n as f64 - std::f64::consts::FRAC_PI_2;
                        Vec2::new(r * a.cos(), r * a.sin())
                    })
                    .collect(),
                left: (i == 0).then_some(LaneId(1)),
                right: (i == 1).then_some(LaneId(0)),
                successor: Some(LaneId(i)),
                speed_limit: RING_SPEED_LIMIT,
                width: LANE_WIDTH,
            }
        })
        .collect();
    MapFile { ring: true, lanes }
}

fn straight(id: u32, y: f64, x0: f64, x1: f64) -> LaneSpec {
    let n = ((x1 - x0) / SPACING).ceil() as usize;
    LaneSpec {
        id: LaneId(id),
        points: (0..=n)
            .map(|k| Vec2::new(x0 + (x1 - x0) * k as f64 / n as f64, y))
            .collect(),
        left: None,
        right: None,
        successor: None,
        speed_limit: MERGE_SPEED_LIMIT,
        width: LANE_WIDTH,
    }
}

/// A three-lane road whose right lane ends, a two-lane bottleneck, and a
/// three-lane exit section whose right lane starts fresh.
pub fn double_merge_file() -> MapFile {
    let [x0, x1, x2, x3] = MERGE_SECTIONS;
    let w = LANE_WIDTH;
    let mut lanes = vec![
        straight(0, 0.0, x0, x1),
        straight(1, w, x0, x1),
        straight(2, 2.0 * w, x0, x1),
        straight(3, w, x1, x2),
        straight(4, 2.0 * w, x1, x2),
        straight(5, 0.0, x2, x3 + MERGE_EXIT_APRON),
        straight(6, w, x2, x3 + MERGE_EXIT_APRON),
        straight(7, 2.0 * w, x2, x3 + MERGE_EXIT_APRON),
    ];
    let link = |lanes: &mut Vec<LaneSpec>, group: &[u32]| {
        for pair in group.windows(2) {
            lanes[pair[0] as usize].left = Some(LaneId(pair[1]));
            lanes[pair[1] as usize].right = Some(LaneId(pair[0]));
        }
    };
    link(&mut lanes, &[0, 1, 2]);
    link(&mut lanes, &[3, 4]);
    link(&mut lanes, &[5, 6, 7]);
    for (from, to) in [(1, 3), (2, 4), (3, 6), (4, 7)] {
        lanes[from].successor = Some(LaneId(to));
    }
    MapFile { ring: false, lanes }
}

/// Named built-in map, or a JSON map file.
pub fn load_map(name_or_path: &str) -> Result<Arc<LaneMap>, MapError> {
    let file = match name_or_path {
        "ring" => ring_file(),
        "double_merge" => double_merge_file(),
        path => return LaneMap::load(path).map(Arc::new),
    };
    LaneMap::from_file(file).map(Arc::new)
}
