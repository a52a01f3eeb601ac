//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line
//! and a summary count follows.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eudm_core::belief::IntentionBelief;
use eudm_core::cfb::{cfb, CfbConfig, TrackCache};
use eudm_core::dcp_tree::{expected_leaf_count, extract_policy_sequences, update_dcp_tree};
use eudm_core::fixtures::{straight_road, vehicle_at, LANE_WIDTH};
use eudm_core::log::{LogFrame, LogVehicle};
use eudm_core::models::{
    idm_acceleration, lane_change_incentive, pure_pursuit_steer, rss_min_safe_gap, IdmParams,
    PurePursuitParams, RssParams,
};
use eudm_core::planner::{candidates, plan_once, Mode, Ongoing, Planner, PlannerConfig};
use eudm_core::simulation::resolve_intention;
use eudm_core::world::{Lateral, LaneIndex, Longitudinal, SemanticAction, VehicleState};
use eudm_core::{LaneId, Side, Vec2, VehicleId, WorldState};
use eudm_sim::bench::{run_benchmark, summarize, SummaryRow};
use eudm_sim::env::run_episode;
use eudm_sim::episode::write_frames;
use eudm_sim::scenario::ScenarioConfig;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:.1?}, budget {limit:?}"))
}

// 1. DCP tree combinatorics

/// All length-`h` continuations of `root` with at most one change.
fn brute_force(n: usize, h: usize, root: usize) -> BTreeSet<Vec<usize>> {
    let mut all = vec![vec![root]];
    for _ in 1..h {
        all = all
            .into_iter()
            .flat_map(|t| (0..n).map(move |a| [t.clone(), vec![a]].concat()))
            .collect();
    }
    all.into_iter()
        .filter(|t| t.windows(2).filter(|w| w[0] != w[1]).count() <= 1)
        .collect()
}

fn dcp_combinatorics() -> Check {
    let start = Instant::now();
    let full = SemanticAction::full_set(2.0);
    for n in 1..=9 {
        let set = &full[..n];
        for h in 2..=6 {
            let tree = update_dcp_tree(set, &set[0], h).map_err(|e| e.to_string())?;
            let traces: BTreeSet<Vec<usize>> = tree.traces().into_iter().collect();
            let formula = (n - 1) * (h - 2) + n;
            ensure(
                traces.len() == formula && expected_leaf_count(n, h) == formula,
                format!("|A|={n} h={h}: {} leaves, expected {formula}", traces.len()),
            )?;
            ensure(traces == brute_force(n, h, 0), format!("|A|={n} h={h}: traces differ from enumeration"))?;
            let seqs = extract_policy_sequences(&tree, 2.0, 2.0, 2.0 * h as f64);
            ensure(seqs.len() == formula, format!("|A|={n} h={h}: {} sequences", seqs.len()))?;
        }
    }
    let tree = update_dcp_tree(&full[..3], &full[0], 3).map_err(|e| e.to_string())?;
    let got: BTreeSet<_> = tree.traces().into_iter().collect();
    let fig: BTreeSet<Vec<usize>> = [[0, 0, 0], [0, 0, 1], [0, 0, 2], [0, 1, 1], [0, 2, 2]]
        .into_iter()
        .map(Vec::from)
        .collect();
    ensure(got == fig, format!("three actions, height three: {got:?}"))?;
    within(Duration::from_secs(1), start)?;
    Ok(format!("45 (|A|, h) pairs match, {:.0?}", start.elapsed()))
}

// 2. CFB probability conservation

fn random_scene(rng: &mut ChaCha8Rng) -> (WorldState, BTreeMap<VehicleId, IntentionBelief>) {
    let lanes = rng.gen_range(1..=4u32);
    let map = straight_road(lanes, 600.0);
    let mut ego = vehicle_at(0, rng.gen_range(0..lanes), rng.gen_range(100.0..150.0), 0.0, rng.gen_range(4.0..16.0));
    ego.params.desired_velocity = 15.0;
    let ego_lane = (ego.state.position.y / LANE_WIDTH).round() as u32;
    let mut taken = vec![(ego_lane, ego.state.position.x)];
    let mut vehicles = vec![ego];
    let want = rng.gen_range(1..=9);
    let mut id = 1;
    for _ in 0..want * 4 {
        if id > want {
            break;
        }
        let lane = rng.gen_range(0..lanes);
        let s = rng.gen_range(40.0..300.0);
        if taken.iter().any(|&(l, x)| l == lane && (x - s).abs() < 8.0) {
            continue;
        }
        taken.push((lane, s));
        let d = rng.gen_range(-0.6..0.6);
        vehicles.push(vehicle_at(id, lane, s, d, rng.gen_range(2.0..16.0)));
        id += 1;
    }
    let beliefs = vehicles[1..]
        .iter()
        .map(|v| {
            // deliberately leaves mass on lanes that may not exist
            let w: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let total: f64 = w.iter().sum::<f64>().max(1e-9);
            (v.id, IntentionBelief::new(v.id, w.map(|x| x / total)))
        })
        .collect();
    (WorldState::new(map, 0.0, VehicleId(0), vehicles), beliefs)
}

fn cfb_conservation() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = PlannerConfig::default();
    let cfb_cfg = CfbConfig::default();
    let mut outputs = 0;
    let mut branched = 0;
    for scene in 0..1000 {
        let (world, beliefs) = random_scene(&mut rng);
        let index = LaneIndex::build(&world);
        let cands = candidates(&world, &index, &Ongoing::default(), &cfg).map_err(|e| e.to_string())?;
        let cache = TrackCache::new(&world, &index, &cfg.models, cfg.horizon, cfg.sim_resolution);
        let ego = world.ego_index().expect("ego present");
        for _ in 0..3 {
            let c = &cands[rng.gen_range(0..cands.len())];
            let track = cache.ego_track(ego, &c.sequence, c.root);
            let out = cfb(&cache, ego, &track, &beliefs, &cfb_cfg);
            outputs += 1;
            branched += usize::from(out.scenarios.len() > 1);
            let total: f64 = out.scenarios.iter().map(|s| s.probability).sum();
            ensure((total - 1.0).abs() <= 1e-9, format!("scene {scene}: weights sum to {total}"))?;
            for s in &out.scenarios {
                for k in &out.key {
                    ensure(s.assignment.contains_key(k), format!("scene {scene}: key {k} unassigned"))?;
                }
                for (&vid, &intention) in &s.assignment {
                    let j = world.index_of(vid).expect("assigned vehicle exists");
                    let place = index.get(j).expect("scene vehicles are on the road");
                    let v = world.vehicles[j].state.velocity;
                    ensure(
                        resolve_intention(&world.map, place, v, intention).is_some(),
                        format!("scene {scene}: {vid} assigned {intention:?} toward a missing lane"),
                    )?;
                }
            }
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!("{outputs} outputs over 1000 scenes ({branched} branched), {:.1?}", start.elapsed()))
}

// 3. Blocker: reactive vs. farsighted

fn blocker_scene() -> WorldState {
    // a slow car ahead, and a faster one in the left lane about to pass
    let mut ego = vehicle_at(0, 0, 100.0, 0.0, 10.0);
    ego.params.desired_velocity = 15.0;
    WorldState::new(
        straight_road(2, 600.0),
        0.0,
        VehicleId(0),
        vec![ego, vehicle_at(1, 0, 125.0, 0.0, 4.0), vehicle_at(2, 1, 94.0, 0.0, 14.0)],
    )
}

fn blocker() -> Check {
    let start = Instant::now();
    let world = blocker_scene();
    let beliefs: BTreeMap<_, _> = world.agents().map(|v| (v.id, IntentionBelief::lane_keep(v.id))).collect();
    let ongoing = Ongoing::new(SemanticAction::new(Lateral::LaneKeep, Longitudinal::Maintain, 2.0));
    let run = |mode| plan_once(&world, &beliefs, &ongoing, &PlannerConfig { mode, ..Default::default() });
    let mpdm = run(Mode::Mpdm).map_err(|e| e.to_string())?;
    let eudm = run(Mode::Eudm).map_err(|e| e.to_string())?;

    let lateral = |s: &eudm_core::dcp_tree::PolicySequence| s.actions.iter().map(|a| a.lateral).collect::<Vec<_>>();
    let m = lateral(&mpdm.best);
    ensure(m.iter().all(|&l| l == Lateral::LaneKeep), format!("MPDM chose {}", mpdm.best.label()))?;
    let e = lateral(&eudm.best);
    let k = e.iter().position(|&l| l != Lateral::LaneKeep);
    ensure(
        k.is_some_and(|k| k > 0 && e[k..].iter().all(|&l| l == Lateral::ChangeLeft)),
        format!("EUDM chose {}", eudm.best.label()),
    )?;
    let rollout = eudm.evaluations[eudm.selected].map_rollout();
    ensure(!rollout.collision, "EUDM rollout collides")?;
    let end = rollout.states.last().expect("rollout has states");
    let x = |w: &WorldState, id: u32| w.vehicle(VehicleId(id)).expect("vehicle in rollout").state.position.x;
    ensure(x(end, 0) > x(end, 1), "EUDM rollout never gets past the blocker")?;
    within(Duration::from_secs(10), start)?;
    Ok(format!("MPDM {} / EUDM {}", mpdm.best.label(), eudm.best.label()))
}

// 4. Cut-in risk capture

fn lv(id: u32, x: f64, y: f64, heading: f64, velocity: f64) -> LogVehicle {
    LogVehicle { id, x, y, heading, velocity }
}

/// A slower car ahead in the left lane drifts toward the ego lane while a
/// neighbor rules out dodging left.
fn cut_in_frame(t: f64) -> LogFrame {
    let lateral = -0.4;
    let y = LANE_WIDTH + lateral * t;
    LogFrame {
        t,
        vehicles: vec![
            lv(0, 10.0 + 12.0 * t, 0.0, 0.0, 12.0),
            lv(1, 25.0 + 10.0 * t, y, f64::atan2(lateral, 10.0), f64::hypot(10.0, lateral)),
            lv(2, 7.0 + 12.0 * t, LANE_WIDTH, 0.0, 12.0),
        ],
    }
}

fn cut_in() -> Check {
    let start = Instant::now();
    let map = straight_road(2, 500.0);
    let cfg = PlannerConfig {
        replan_dt: 0.2,
        ..Default::default()
    };
    let mut planner = Planner::new(cfg).map_err(|e| e.to_string())?;
    let world_at = |t: f64| {
        let mut w = cut_in_frame(t).to_world(map.clone(), VehicleId(0));
        w.vehicles[0].params.desired_velocity = 12.0;
        w
    };
    for k in 0..5 {
        planner.cycle(&world_at(0.2 * k as f64)).map_err(|e| e.to_string())?;
    }
    let world = world_at(1.0);
    planner.tracker.observe(&world, &LaneIndex::build(&world), 0.2, &cfg.models.rss);
    let agent = VehicleId(1);
    let belief = planner.tracker.beliefs[&agent];
    ensure(belief.max_prob() < cfg.cfb.uncertainty_threshold, format!("leader is not uncertain: {belief:?}"))?;

    let out = plan_once(&world, &planner.tracker.beliefs, &planner.ongoing, &cfg).map_err(|e| e.to_string())?;
    let eval = &out.evaluations[out.selected];
    let insertion = eval
        .scenarios
        .iter()
        .position(|s| s.assignment.get(&agent) == Some(&Lateral::ChangeRight))
        .ok_or("no insertion scenario in the CFB set")?;
    // judged on the node being executed now; later nodes are the recovery
    let now = out.best.actions[0].longitudinal;
    let gap = |w: &WorldState| {
        let e = w.vehicle(VehicleId(0)).expect("ego").state.position.x;
        let a = w.vehicle(agent).expect("agent").state.position.x;
        a - e
    };
    let r = &eval.rollouts[insertion];
    let opened = gap(r.states.last().expect("states")) > gap(&r.states[0]);
    ensure(
        now == Longitudinal::Decelerate || (now == Longitudinal::Maintain && opened),
        format!("selected {} does not yield to the inserted car", out.best.label()),
    )?;
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "p(insert)={:.2}, selected {}, gap opens: {opened}",
        eval.scenarios[insertion].probability,
        out.best.label()
    ))
}

// 5. Latency

fn busy_world() -> (WorldState, BTreeMap<VehicleId, IntentionBelief>) {
    let mut ego = vehicle_at(0, 1, 100.0, 0.0, 12.0);
    ego.params.desired_velocity = 15.0;
    let spots = [
        (0, 70.0, 11.0),
        (0, 115.0, 10.0),
        (0, 150.0, 12.0),
        (1, 80.0, 13.0),
        (1, 128.0, 9.0),
        (1, 170.0, 11.0),
        (2, 90.0, 14.0),
        (2, 120.0, 12.0),
        (2, 160.0, 10.0),
    ];
    let mut vehicles = vec![ego];
    vehicles.extend(spots.iter().enumerate().map(|(k, &(l, s, v))| vehicle_at(k as u32 + 1, l, s, 0.0, v)));
    let beliefs = vehicles[1..]
        .iter()
        .map(|v| (v.id, IntentionBelief::new(v.id, [0.5, 0.3, 0.2])))
        .collect();
    (WorldState::new(straight_road(3, 800.0), 0.0, VehicleId(0), vehicles), beliefs)
}

fn median_ms(world: &WorldState, beliefs: &BTreeMap<VehicleId, IntentionBelief>, cfg: &PlannerConfig) -> Result<f64, String> {
    let ongoing = Ongoing::default();
    let mut ms = Vec::with_capacity(100);
    for _ in 0..100 {
        let t = Instant::now();
        let out = plan_once(world, beliefs, &ongoing, cfg).map_err(|e| e.to_string())?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
        ensure(out.evaluations.len() == 25, format!("{} sequences", out.evaluations.len()))?;
    }
    ms.sort_by(f64::total_cmp);
    Ok(ms[ms.len() / 2])
}

fn latency() -> Check {
    let (world, beliefs) = busy_world();
    let cfg = PlannerConfig::default();
    ensure(
        cfg.cfb.top_k == 6 && cfg.horizon == 8.0 && cfg.sim_resolution == 0.4,
        "defaults drifted from the benchmark setting",
    )?;
    let par = median_ms(&world, &beliefs, &PlannerConfig { parallel: true, ..cfg })?;
    let ser = median_ms(&world, &beliefs, &PlannerConfig { parallel: false, ..cfg })?;
    let line = format!("median {par:.1} ms parallel, {ser:.1} ms serial");
    ensure(par < 50.0 && ser < 500.0, line.clone())?;
    Ok(line)
}

// 6. Benchmark ordering

fn bench_suite(map: &str, modes: &[Mode], reps: usize) -> Vec<SummaryRow> {
    let mut cfg = ScenarioConfig::preset(map, 0).expect("preset");
    cfg.planner.replan_dt = 0.2;
    let rows = run_benchmark(&[cfg], modes, reps);
    summarize(&rows)
}

fn benchmark_ordering() -> Check {
    let start = Instant::now();
    let modes = [Mode::Eudm, Mode::Edm, Mode::Mpdm];
    let merge = bench_suite("double_merge", &modes, 10);
    let ring = bench_suite("ring", &modes, 3);
    let row = |m: Mode| merge.iter().find(|r| r.mode == m).expect("row per mode");
    let (e, d, p) = (row(Mode::Eudm), row(Mode::Edm), row(Mode::Mpdm));
    let failed: usize = merge.iter().chain(&ring).map(|r| r.failed).sum();
    let line = format!(
        "safety eudm {:.6} edm {:.6} mpdm {:.6}; UD eudm {:.2} edm {:.2} mpdm {:.2}; ring LCC {:?}",
        e.safety,
        d.safety,
        p.safety,
        e.ud_per_km,
        d.ud_per_km,
        p.ud_per_km,
        ring.iter().map(|r| r.lcc_per_km).collect::<Vec<_>>()
    );
    ensure(failed == 0, format!("{failed} episodes failed; {line}"))?;
    ensure(e.safety < d.safety && e.safety < p.safety, format!("safety ordering: {line}"))?;
    ensure(e.ud_per_km < d.ud_per_km && e.ud_per_km < p.ud_per_km, format!("UD ordering: {line}"))?;
    ensure(ring.iter().all(|r| r.lcc_per_km == 0.0), format!("ring LCC: {line}"))?;
    within(Duration::from_secs(30 * 60), start)?;
    Ok(line)
}

// 7. Model oracles

fn model_oracles() -> Check {
    let start = Instant::now();
    for v0 in [1.0, 5.0, 13.9, 30.0] {
        let p = IdmParams::default().with_desired_velocity(v0);
        let a = idm_acceleration(v0, None, &p).map_err(|e| e.to_string())?;
        ensure(a.abs() <= 1e-12, format!("IDM at v0={v0}: {a}"))?;
    }
    let map = straight_road(1, 300.0);
    for v in [0.0, 5.0, 20.0] {
        let state = VehicleState::new(Vec2::new(80.0, 0.0), 0.0, v);
        let steer = pure_pursuit_steer(&state, &map, LaneId(0), 0.0, &PurePursuitParams::default()).map_err(|e| e.to_string())?;
        ensure(steer == 0.0, format!("pure pursuit on a straight path: {steer}"))?;
    }
    let rss = RssParams::default();
    let speeds: Vec<f64> = (0..=30).map(f64::from).collect();
    for w in speeds.windows(2) {
        for &other in &speeds {
            ensure(
                rss_min_safe_gap(w[1], other, &rss) >= rss_min_safe_gap(w[0], other, &rss),
                "RSS gap not nondecreasing in rear speed",
            )?;
            ensure(
                rss_min_safe_gap(other, w[1], &rss) <= rss_min_safe_gap(other, w[0], &rss),
                "RSS gap not nonincreasing in front speed",
            )?;
        }
    }
    let world = WorldState::new(straight_road(3, 300.0), 0.0, VehicleId(0), vec![vehicle_at(0, 1, 50.0, 0.0, 12.0)]);
    for side in [Side::Left, Side::Right] {
        let inc = lane_change_incentive(&world, VehicleId(0), side, 0.3).map_err(|e| e.to_string())?;
        ensure(inc.value == 0.0, format!("MOBIL {side:?} on a symmetric road: {}", inc.value))?;
    }
    within(Duration::from_secs(5), start)?;
    Ok(format!("IDM, pure pursuit, RSS, MOBIL, {:.0?}", start.elapsed()))
}

// 8. Determinism

fn episode_bytes(cfg: &ScenarioConfig) -> Result<(Vec<u8>, Vec<Option<String>>), String> {
    let ep = run_episode(cfg).map_err(|e| e.to_string())?;
    let mut bytes = Vec::new();
    write_frames(&mut bytes, &ep.frames).map_err(|e| e.to_string())?;
    let selected = ep.frames.iter().filter_map(|f| f.plan.as_ref().map(|p| p.selected.clone())).collect();
    Ok((bytes, selected))
}

fn determinism() -> Check {
    let mut checked = 0;
    for (map, seed) in [("double_merge", 3), ("ring", 1)] {
        let mut cfg = ScenarioConfig::preset(map, seed).expect("preset");
        cfg.duration = 8.0;
        cfg.planner.parallel = true;
        let a = episode_bytes(&cfg)?;
        let b = episode_bytes(&cfg)?;
        cfg.planner.parallel = false;
        let c = episode_bytes(&cfg)?;
        ensure(a == b, format!("{map}: repeated runs differ"))?;
        ensure(a == c, format!("{map}: parallel and serial runs differ"))?;
        checked += a.1.len();
    }
    Ok(format!("{checked} cycles identical across runs and evaluation modes"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 8] = [
        ("1 DCP tree combinatorics", dcp_combinatorics),
        ("2 CFB probability conservation", cfb_conservation),
        ("3 blocker: MPDM keeps lane, EUDM changes later", blocker),
        ("4 cut-in risk capture", cut_in),
        ("5 planning latency", latency),
        ("6 benchmark ordering", benchmark_ordering),
        ("7 model oracles", model_oracles),
        ("8 determinism", determinism),
    ];
    let mut passed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => {
                passed += 1;
                println!("PASS criterion {name}: {detail}");
            }
            Err(why) => println!("FAIL criterion {name}: {why}"),
        }
    }
    // a red criterion is reported, not hidden; only a crash fails the target
    println!("acceptance: {passed}/{} criteria pass", criteria.len());
}
