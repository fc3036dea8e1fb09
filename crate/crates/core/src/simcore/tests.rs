use std::sync::Arc;

use super::*;
use crate::dynamics::{IdmParams, VehicleClass, VehicleSpec, VehicleState};
use crate::netmodel::tests::straight_pair;

fn ctx() -> Arc<SimContext> {
    Arc::new(SimContext::with_defaults(
        straight_pair(),
        SimParams::default(),
    ))
}

fn car_at(world: &mut WorldState, lane: &str, x: f64, speed: f64) -> AgentId {
    let net = world.network();
    let l = net.lane_idx(lane).unwrap();
    let lane_ref = net.lane(l);
    let s = if lane == "ab_0" { x } else { 100.0 - x };
    let state = VehicleState {
        position: lane_ref.point_at(s, 0.0),
        heading: lane_ref.heading_at(s),
        speed,
        accel: 0.0,
        steer: 0.0,
        lane: l,
        s,
        d: 0.0,
        odometer: 0.0,
    };
    world.insert_agent(
        VehicleSpec::default_for(VehicleClass::Car),
        IdmParams::default(),
        vec![l],
        state,
    )
}

#[test]
fn coasting_target_moves_v_dt() {
    let mut w = WorldState::new(ctx(), 1);
    let t = car_at(&mut w, "ab_0", 20.0, 10.0);
    w.set_target(t);
    w.step(ControlInput::COAST);
    let a = w.agent(t).unwrap();
    assert!((a.state.position.x - 21.0).abs() < 1e-12);
    assert!((a.state.s - 21.0).abs() < 1e-12);
    assert!(w.collision_log().is_empty());
    assert!((w.time() - 0.1).abs() < 1e-15);
}

#[test]
fn overlapping_cars_log_one_event() {
    let mut w = WorldState::new(ctx(), 1);
    let a = car_at(&mut w, "ab_0", 20.0, 5.0);
    let b = car_at(&mut w, "ab_0", 22.0, 5.0);
    w.set_target(a);
    w.step(ControlInput::new(0.2, 1.0));
    assert_eq!(w.collision_log().len(), 1);
    let e = &w.collision_log()[0];
    assert_eq!(e.participants, vec![a, b]);
    assert!(e.target_involved);
    assert_eq!(w.is_terminal(80), TerminalStatus::CollisionTarget);
    // The background participant despawns; the target stays.
    assert!(w.agent(b).is_none());
    assert!(w.agent(a).is_some());
}

#[test]
fn follower_keeps_distance() {
    let mut w = WorldState::new(ctx(), 1);
    let lead = car_at(&mut w, "ab_0", 40.0, 0.0);
    let follow = car_at(&mut w, "ab_0", 5.0, 12.0);
    w.set_target(lead);
    for _ in 0..100 {
        w.step(ControlInput::new(0.0, 0.0));
    }
    assert!(w.collision_log().is_empty());
    let f = w.agent(follow).unwrap();
    assert!(f.state.speed < 0.5);
    let gap = 40.0 - f.state.position.x - 4.5;
    assert!(gap > 1.0 && gap < 6.0, "gap {gap}");
}

#[test]
fn background_despawns_at_route_end() {
    let mut w = WorldState::new(ctx(), 1);
    let t = car_at(&mut w, "ba_0", 50.0, 0.0);
    let b = car_at(&mut w, "ab_0", 95.0, 10.0);
    w.set_target(t);
    let mut gone = false;
    for _ in 0..20 {
        let out = w.step(ControlInput::COAST);
        gone |= out.despawned.contains(&b);
    }
    assert!(gone);
    assert!(w.agent(b).is_none());
}

#[test]
fn target_leaving_the_road_is_off_network() {
    let mut w = WorldState::new(ctx(), 1);
    let t = car_at(&mut w, "ab_0", 20.0, 15.0);
    w.set_target(t);
    let mut status = TerminalStatus::Running;
    for _ in 0..60 {
        w.step(ControlInput::new(0.3, 0.0));
        status = w.is_terminal(1000);
        if status.is_terminal() {
            break;
        }
    }
    assert_eq!(status, TerminalStatus::TargetOffNetwork);
}

#[test]
fn horizon_counts_from_root() {
    let mut w = WorldState::new(ctx(), 1);
    let t = car_at(&mut w, "ab_0", 0.0, 1.0);
    w.set_target(t);
    w.step(ControlInput::COAST);
    w.mark_root();
    for _ in 0..4 {
        assert_eq!(w.is_terminal(4), TerminalStatus::Running);
        w.step(ControlInput::COAST);
    }
    assert_eq!(w.is_terminal(4), TerminalStatus::HorizonReached);
}

#[test]
fn snapshot_replay_is_exact() {
    let mut w = spawn_traffic(ctx(), &small_flow(), 11).unwrap();
    let snap = w.snapshot();
    assert_eq!(snap.restore(), w);
    let controls: Vec<_> = (0..10)
        .map(|k| ControlInput::new(0.05 * (k % 3) as f64, 1.0 - k as f64 * 0.3))
        .collect();
    for u in &controls {
        w.step(*u);
    }
    let mut r = snap.restore();
    for u in &controls {
        r.step(*u);
    }
    assert_eq!(w, r);
    assert_eq!(w.state_hash(), r.state_hash());
}

fn small_flow() -> FlowConfig {
    FlowConfig {
        vehicle_count: [4, 6],
        depart_rate: 0.5,
        warmup_steps: [20, 40],
        ..FlowConfig::default()
    }
}

#[test]
fn spawn_is_deterministic() {
    let a = spawn_traffic(ctx(), &small_flow(), 5).unwrap();
    let b = spawn_traffic(ctx(), &small_flow(), 5).unwrap();
    assert_eq!(a.state_hash(), b.state_hash());
}

#[test]
fn single_vehicle_becomes_target() {
    let flow = FlowConfig {
        vehicle_count: [1, 1],
        warmup_steps: [0, 5],
        ..FlowConfig::default()
    };
    let w = spawn_traffic(ctx(), &flow, 3).unwrap();
    assert_eq!(w.agent_count(), 1);
    assert_eq!(w.target_id(), w.agents().next().map(|a| a.id));
}

#[test]
fn warmup_draw_replays() {
    let flow = FlowConfig {
        vehicle_count: [2, 2],
        warmup_steps: [50, 100],
        ..FlowConfig::default()
    };
    for seed in 0..5 {
        let w = spawn_traffic(ctx(), &flow, seed).unwrap();
        // Replay the documented draw order: count, then class, origin,
        // destination and (after the first) departure gap per vehicle.
        let mut rng = SimRng::new(seed);
        let n = rng.range_inclusive(2, 2);
        let net = straight_pair();
        let sources = net.source_lanes();
        for i in 0..n {
            rng.weighted(&[0.1, 0.8, 0.1]);
            let o = sources[rng.below(sources.len() as u64) as usize];
            let sinks = net.reachable_sinks(o);
            rng.below(sinks.len() as u64);
            if i > 0 {
                rng.exponential(1.0);
            }
        }
        let warm = rng.range_inclusive(50, 100);
        assert!((50..=100).contains(&warm));
        assert_eq!(w.step_count(), warm);
        assert!((w.time() - warm as f64 * 0.1).abs() < 1e-12);
    }
}

#[test]
fn capacity_error_reports_limit() {
    let flow = FlowConfig {
        vehicle_count: [500, 500],
        ..FlowConfig::default()
    };
    match spawn_traffic(ctx(), &flow, 1) {
        Err(SpawnError::Capacity {
            requested,
            max_feasible,
        }) => {
            assert_eq!(requested, 500);
            assert_eq!(max_feasible, 20);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn trajectory_csv_has_header_and_rows() {
    let mut w = WorldState::new(ctx(), 1);
    let t = car_at(&mut w, "ab_0", 20.0, 10.0);
    w.set_target(t);
    let mut buf = Vec::new();
    write_trajectory_csv(&w.trajectory_rows(), &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], TRAJECTORY_HEADER);
    assert!(lines[1].starts_with("0,0,20,-1.6,0,10,"));
    assert!(lines[1].contains(",ab_0,20,0"));
}

#[test]
fn crossing_traffic_yields() {
    let net = crate::netmodel::load_network(CROSS).unwrap();
    let ctx = Arc::new(SimContext::with_defaults(net, SimParams::default()));
    assert_eq!(ctx.conflicts().len(), 2);
    let mut w = WorldState::new(Arc::clone(&ctx), 1);
    let we = ctx.network().lane_idx("we_0").unwrap();
    let sn = ctx.network().lane_idx("sn_0").unwrap();
    let spec = VehicleSpec::default_for(VehicleClass::Car);
    let mk = |lane: LaneIdx, s: f64| {
        let l = ctx.network().lane(lane);
        VehicleState {
            position: l.point_at(s, 0.0),
            heading: l.heading_at(s),
            speed: 10.0,
            accel: 0.0,
            steer: 0.0,
            lane,
            s,
            d: 0.0,
            odometer: 0.0,
        }
    };
    // Both arrive at the crossing at the same time.
    let a = w.insert_agent(spec, IdmParams::default(), vec![we], mk(we, 20.0));
    let b = w.insert_agent(spec, IdmParams::default(), vec![sn], mk(sn, 20.0));
    for _ in 0..300 {
        w.step_default();
    }
    assert!(w.collision_log().is_empty(), "{:?}", w.collision_log());
    assert!(
        w.agent(a).is_none() && w.agent(b).is_none(),
        "both should have cleared the network"
    );
}

const CROSS: &str = r#"{
  "version": 1,
  "nodes": [
    {"id": "w", "x": -60, "y": 0}, {"id": "e", "x": 60, "y": 0},
    {"id": "s", "x": 0, "y": -60}, {"id": "n", "x": 0, "y": 60}
  ],
  "edges": [
    {"id": "we", "from": "w", "to": "e", "lanes": [
      {"id": "we_0", "width": 3.5, "speed_limit": 13.9, "centerline": [[-60, 0], [60, 0]], "successors": []}]},
    {"id": "sn", "from": "s", "to": "n", "lanes": [
      {"id": "sn_0", "width": 3.5, "speed_limit": 13.9, "centerline": [[0, -60], [0, 60]], "successors": []}]}
  ]
}"#;
