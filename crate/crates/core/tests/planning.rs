use std::collections::BTreeMap;

use eudm_core::belief::IntentionBelief;
use eudm_core::fixtures::{straight_road, vehicle_at};
use eudm_core::planner::{plan_once, Mode, Ongoing, Planner, PlannerConfig};
use eudm_core::world::Lateral;
use eudm_core::{VehicleId, WorldState};

fn open_road() -> WorldState {
    // already cruising at the speed it wants
    let mut ego = vehicle_at(0, 0, 50.0, 0.0, 12.0);
    ego.params.desired_velocity = 12.0;
    WorldState::new(straight_road(2, 500.0), 0.0, VehicleId(0), vec![ego, vehicle_at(1, 1, 150.0, 0.0, 10.0)])
}

#[test]
fn every_mode_cruises_on_an_open_road() {
    let world = open_road();
    let beliefs: BTreeMap<_, _> = world.agents().map(|v| (v.id, IntentionBelief::lane_keep(v.id))).collect();
    for mode in [Mode::Eudm, Mode::Edm, Mode::Mpdm] {
        let cfg = PlannerConfig { mode, ..Default::default() };
        let out = plan_once(&world, &beliefs, &Ongoing::default(), &cfg).unwrap();
        assert!(out.best.actions.iter().all(|a| a.lateral == Lateral::LaneKeep), "{mode}: {}", out.best.label());
        for e in &out.evaluations {
            let total: f64 = e.scenarios.iter().map(|s| s.probability).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn cycle_records_round_trip_through_json() {
    let mut planner = Planner::new(PlannerConfig::default()).unwrap();
    let record = planner.cycle(&open_road()).unwrap();
    let text = serde_json::to_string(&record).unwrap();
    assert_eq!(serde_json::from_str::<eudm_core::planner::CycleRecord>(&text).unwrap(), record);
    assert!(!record.emergency);
    assert!(record.selected_label.is_some());
}
