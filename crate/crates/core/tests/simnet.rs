mod common;

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{crossing, crossing_flow, fixture, net, random_grid};
use dualight::evalkit::compute_metrics;
use dualight::simnet::{
    load_scenario, nearest_neighbors, parse_scenario, standardize_intersection, ArmSpec,
    IntersectionSpec, Neighbor, Network, ScenarioSpec, SimError, SimState, Turn, PHASE_TABLE,
};

fn random_actions(state: &SimState, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..state.num_intersections())
        .map(|i| {
            let valid: Vec<usize> = state.network().std[i].valid_phase_indices().collect();
            valid[rng.gen_range(0..valid.len())]
        })
        .collect()
}

#[test]
fn loads_grid_fixture() {
    let spec = load_scenario(fixture("grid2x2.json")).unwrap();
    assert_eq!(spec.intersections.len(), 4);
    assert_eq!(spec.links.len(), 12);
    assert!(spec.intersections.iter().all(|it| it.arms.len() == 4));
    assert_eq!(spec.episode_length_s, 3600);
    assert_eq!(spec.decision_interval_s, 15);
}

#[test]
fn route_skipping_a_link_names_the_flow() {
    match load_scenario(fixture("bad_route.json")) {
        Err(SimError::Validation(msg)) => {
            assert!(msg.contains("flow 0"), "{msg}");
            assert!(msg.contains("disconnected"), "{msg}");
        }
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn empty_intersection_list_is_rejected() {
    match load_scenario(fixture("empty.json")) {
        Err(SimError::Validation(msg)) => assert!(msg.contains("no intersections"), "{msg}"),
        other => panic!("expected a validation error, got {other:?}"),
    }
}

#[test]
fn malformed_file_reports_position() {
    match load_scenario(fixture("malformed.json")) {
        Err(SimError::Parse { path, line, .. }) => {
            assert_eq!(line, 3);
            assert!(path.contains("arms"), "{path}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert!(matches!(
        load_scenario(fixture("does-not-exist.json")),
        Err(SimError::Io { .. })
    ));
}

#[test]
fn invalid_geometry_is_rejected() {
    let mut spec = crossing(vec![], 10);
    spec.intersections[0].arms[1].angle_deg = 0.0;
    assert!(matches!(Network::new(spec), Err(SimError::Validation(_))));

    let mut spec = crossing(vec![], 10);
    spec.intersections[0].arms.truncate(1);
    assert!(matches!(Network::new(spec), Err(SimError::Validation(_))));

    let mut spec = crossing(vec![], 10);
    spec.decision_interval_s = 7;
    assert!(matches!(Network::new(spec), Err(SimError::Validation(_))));
}

#[test]
fn turn_that_leads_elsewhere_is_rejected() {
    let mut flow = crossing_flow(0, Turn::Through, 100.0, 0, 3600);
    flow.route[0].1 = dualight::simnet::RouteMove::Left;
    let err = Network::new(crossing(vec![flow], 10)).unwrap_err();
    assert!(err.to_string().contains("flow 0"), "{err}");
}

#[test]
fn schema_round_trip() {
    let spec = load_scenario(fixture("grid2x2.json")).unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    assert_eq!(parse_scenario(&text).unwrap(), spec);
}

#[test]
fn four_arm_standardization() {
    let spec = crossing(vec![], 10);
    let s = standardize_intersection(&spec.intersections[0], &spec, 4).unwrap();
    assert!((0..8).all(|m| s.movement_present(m)));
    assert!(s.valid_phases.iter().all(|&v| v));
    assert_eq!(s.arm_slots, vec![0, 1, 2, 3]);
}

#[test]
fn t_junction_standardization() {
    let spec = load_scenario(fixture("tjunction.json")).unwrap();
    let s = standardize_intersection(&spec.intersections[0], &spec, 4).unwrap();
    let present = (0..8).filter(|&m| s.movement_present(m)).count();
    assert_eq!(present, 6);
    // only the single-arm phase of the missing slot has no present movement
    let invalid: Vec<usize> = (0..8).filter(|&p| !s.valid_phases[p]).collect();
    assert_eq!(invalid, vec![7]);
    assert_eq!(PHASE_TABLE[7], [6, 7]);

    let sim = SimState::new(net(spec));
    for p in &invalid {
        assert!(matches!(
            sim.clone().step(&[*p]),
            Err(SimError::InvalidPhase { .. })
        ));
    }
}

#[test]
fn two_arm_standardization() {
    let mut spec = crossing(vec![], 10);
    spec.intersections[0].arms = vec![
        ArmSpec {
            angle_deg: 0.0,
            movements: vec![Turn::Through, Turn::Left],
        },
        ArmSpec {
            angle_deg: 180.0,
            movements: vec![Turn::Through],
        },
    ];
    let s = standardize_intersection(&spec.intersections[0], &spec, 4).unwrap();
    let absent = (0..8).filter(|&m| !s.movement_present(m)).count();
    assert!(absent >= 4, "{absent}");
    assert!(s.valid_phases.iter().any(|&v| v));
}

fn point(id: u32, x: f64, y: f64) -> IntersectionSpec {
    IntersectionSpec {
        id,
        x,
        y,
        arms: vec![],
        ftc: None,
    }
}

fn points(list: &[(u32, f64, f64)]) -> ScenarioSpec {
    ScenarioSpec {
        scenario_id: 0,
        intersections: list.iter().map(|&(id, x, y)| point(id, x, y)).collect(),
        boundaries: vec![],
        links: vec![],
        flows: vec![],
        episode_length_s: 3600,
        decision_interval_s: 15,
    }
}

#[test]
fn neighbor_order() {
    // 2×2 unit grid, ids row-major
    let s = points(&[(0, 0.0, 0.0), (1, 1.0, 0.0), (2, 0.0, 1.0), (3, 1.0, 1.0)]);
    assert_eq!(
        nearest_neighbors(&s, 0, 2).unwrap(),
        vec![Neighbor::Intersection(1), Neighbor::Intersection(2)]
    );
    assert_eq!(nearest_neighbors(&s, 0, 3).unwrap()[2], Neighbor::Intersection(3));

    let single = points(&[(5, 0.0, 0.0)]);
    assert_eq!(nearest_neighbors(&single, 5, 4).unwrap(), vec![Neighbor::SelfPad; 4]);

    let ties = points(&[(1, 0.0, 0.0), (7, 2.0, 0.0), (3, -2.0, 0.0)]);
    assert_eq!(
        nearest_neighbors(&ties, 1, 2).unwrap(),
        vec![Neighbor::Intersection(2), Neighbor::Intersection(1)]
    );
    assert!(matches!(
        nearest_neighbors(&ties, 99, 2),
        Err(SimError::UnknownIntersection(99))
    ));
}

#[test]
fn neighbor_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(1..9);
        let list: Vec<(u32, f64, f64)> = (0..n)
            .map(|k| (k as u32 * 3 + 1, rng.gen_range(0..4) as f64, rng.gen_range(0..4) as f64))
            .collect();
        let s = points(&list);
        for &(id, x, y) in &list {
            let mut all: Vec<(f64, u32, usize)> = list
                .iter()
                .enumerate()
                .filter(|(_, p)| p.0 != id)
                .map(|(idx, p)| ((p.1 - x).hypot(p.2 - y), p.0, idx))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let got = nearest_neighbors(&s, id, 4).unwrap();
            for (slot, nb) in got.iter().enumerate() {
                match all.get(slot) {
                    Some(&(_, _, idx)) => assert_eq!(*nb, Neighbor::Intersection(idx)),
                    None => assert_eq!(*nb, Neighbor::SelfPad),
                }
            }
        }
    }
}

#[test]
fn queued_vehicle_discharges_within_a_step() {
    // one vehicle spawned at t=0 reaches the queue at t=10
    let spec = crossing(vec![crossing_flow(0, Turn::Through, 3600.0, 0, 1)], 10);
    let mut sim = SimState::new(net(spec));
    // slot 2 only: the vehicle waits
    sim.step(&[6]).unwrap();
    assert_eq!(sim.queue_len(0, 0), 1);
    let (obs, rewards) = sim.step(&[0]).unwrap();
    assert_eq!(sim.queue_len(0, 0), 0);
    assert_eq!(obs[0].0[8], 0.0);
    assert_eq!(rewards[0], 0.0);
}

#[test]
fn empty_network_has_zero_rewards() {
    let mut sim = SimState::new(net(crossing(vec![], 10)));
    for _ in 0..10 {
        let (_, r) = sim.step(&[3]).unwrap();
        assert_eq!(r, vec![0.0]);
    }
}

/// Builds queues of 2, 1 and 3 vehicles on movements 0, 2 and 3 of the
/// crossing, all held by a phase serving none of them.
fn staged_queues() -> SimState {
    let flows = vec![
        crossing_flow(0, Turn::Through, 3600.0, 0, 2),
        crossing_flow(1, Turn::Through, 3600.0, 0, 1),
        crossing_flow(1, Turn::Left, 3600.0, 0, 3),
    ];
    let mut sim = SimState::new(net(crossing(flows, 5)));
    sim.step(&[6]).unwrap();
    sim
}

#[test]
fn observation_layout() {
    let mut sim = staged_queues();
    sim.set_phases(&[5]).unwrap();
    let o = sim.observe(0).unwrap();
    assert_eq!(
        o.0,
        [0., 0., 0., 0., 0., 1., 0., 0., 2., 0., 1., 3., 0., 0., 0., 0.]
    );
    assert!(matches!(sim.observe(1), Err(SimError::UnknownIntersection(_))));

    let fresh = SimState::new(net(crossing(vec![], 10)));
    let o = fresh.observe(0).unwrap();
    assert_eq!(o.0[0], 1.0);
    assert!(o.0[1..].iter().all(|&x| x == 0.0));
}

#[test]
fn reward_values() {
    let sim = staged_queues();
    assert_eq!(sim.reward(0).unwrap(), -1.5);

    let spec = crossing(vec![crossing_flow(3, Turn::Left, 3600.0, 0, 1)], 5);
    let mut sim = SimState::new(net(spec));
    sim.step(&[0]).unwrap();
    assert_eq!(sim.reward(0).unwrap(), -0.25);
}

#[test]
fn right_turns_are_uncontrolled_and_unobserved() {
    let spec = crossing(vec![crossing_flow(0, Turn::Right, 720.0, 0, 3600)], 5);
    let mut sim = SimState::new(net(spec));
    for _ in 0..20 {
        let (obs, r) = sim.step(&[6]).unwrap();
        assert_eq!(r[0], 0.0);
        assert_eq!(obs[0].stopped(), 0.0);
        assert_eq!(sim.right_queue_len(0, 0), 0);
    }
    assert!(sim.counts().finished > 0);
}

#[test]
fn absent_slots_report_zero() {
    let spec = load_scenario(fixture("tjunction.json")).unwrap();
    let mut sim = SimState::new(net(spec));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let a = random_actions(&sim, &mut rng);
        let (obs, _) = sim.step(&a).unwrap();
        assert_eq!(obs[0].0[8 + 6], 0.0);
        assert_eq!(obs[0].0[8 + 7], 0.0);
    }
}

#[test]
fn clock_and_determinism() {
    let spec = random_grid(11);
    let run = || {
        let mut sim = SimState::new(net(spec.clone()));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trace = Vec::new();
        for k in 0..240u32 {
            let a = random_actions(&sim, &mut rng);
            let (obs, r) = sim.step(&a).unwrap();
            assert_eq!(sim.clock(), (k + 1) * 15);
            trace.push((obs, r));
        }
        (trace, sim.vehicle_logs())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    assert_eq!(compute_metrics(&la, 3600), compute_metrics(&lb, 3600));
}

#[test]
fn jittered_spawns_are_seeded() {
    use dualight::simnet::SimOptions;
    let n = net(random_grid(4));
    let logs = |seed| {
        let mut sim = SimState::with_options(
            Arc::clone(&n),
            &SimOptions {
                spawn_jitter_seed: Some(seed),
            },
        );
        let a: Vec<usize> = (0..sim.num_intersections()).map(|_| 0).collect();
        for _ in 0..40 {
            sim.step(&a).unwrap();
        }
        sim.vehicle_logs()
    };
    assert_eq!(logs(1), logs(1));
    assert_ne!(logs(1), logs(2));
}

#[test]
fn vehicles_never_beat_free_flow() {
    let n = net(random_grid(21));
    let mut sim = SimState::new(Arc::clone(&n));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..240 {
        let a = random_actions(&sim, &mut rng);
        sim.step(&a).unwrap();
    }
    let logs = sim.vehicle_logs();
    assert!(logs.iter().any(|v| v.finish_s.is_some()));
    for v in logs {
        if let Some(f) = v.finish_s {
            assert!(f - v.spawn_s >= v.free_flow_s);
            assert_eq!(f - v.spawn_s, v.free_flow_s + v.wait_s);
        } else {
            assert!(v.wait_s + v.free_flow_s <= 3600 - v.spawn_s);
        }
    }
}

#[test]
fn standardization_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let n_arms = rng.gen_range(2..=4);
        let mut angles: Vec<f64> = Vec::new();
        while angles.len() < n_arms {
            let a = rng.gen_range(0..72) as f64 * 5.0;
            if angles.iter().all(|b| ((a - b).rem_euclid(360.0)).min((b - a).rem_euclid(360.0)) > 30.0) {
                angles.push(a);
            }
        }
        let arms: Vec<ArmSpec> = angles
            .iter()
            .map(|&angle_deg| ArmSpec {
                angle_deg,
                movements: vec![Turn::Through, Turn::Left],
            })
            .collect();
        let mut spec = crossing(vec![], 10);
        spec.links.clear();
        spec.boundaries.clear();
        spec.intersections[0].arms = arms;
        let first = standardize_intersection(&spec.intersections[0], &spec, 4).unwrap();

        // re-express the intersection on its canonical compass and repeat
        let mut derived = spec.clone();
        derived.intersections[0].arms = (0..4)
            .filter_map(|slot| {
                first.slot_arm[slot].map(|arm| ArmSpec {
                    angle_deg: 90.0 * slot as f64,
                    movements: spec.intersections[0].arms[arm].movements.clone(),
                })
            })
            .collect();
        let second = standardize_intersection(&derived.intersections[0], &derived, 4).unwrap();
        let pattern = |s: &dualight::simnet::StdIntersection| s.movement_map.map(|m| m.is_some());
        assert_eq!(pattern(&first), pattern(&second), "angles {angles:?}");
        assert_eq!(first.valid_phases, second.valid_phases);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn conservation_and_reward_sign(seed in 0u64..10_000, act_seed in any::<u64>()) {
        let mut sim = SimState::new(net(random_grid(seed)));
        let mut rng = ChaCha8Rng::seed_from_u64(act_seed);
        for _ in 0..60 {
            let a = random_actions(&sim, &mut rng);
            sim.set_phases(&a).unwrap();
            for _ in 0..15 {
                sim.advance_second();
                let c = sim.counts();
                prop_assert_eq!(c.spawned, c.in_transit + c.queued + c.finished);
            }
            for i in 0..sim.num_intersections() {
                let r = sim.reward(i).unwrap();
                let stopped = sim.observe(i).unwrap().stopped();
                prop_assert!(r <= 0.0);
                prop_assert_eq!(r == 0.0, stopped == 0.0);
            }
        }
    }
}

#[test]
fn jitter_keeps_the_departure_count() {
    use dualight::simnet::SimOptions;
    let n = net(random_grid(9));
    let spawned = |seed: Option<u64>| {
        let mut sim = SimState::with_options(Arc::clone(&n), &SimOptions { spawn_jitter_seed: seed });
        let a = vec![0; sim.num_intersections()];
        while sim.clock() < 3600 {
            sim.step(&a).unwrap();
        }
        sim.counts().spawned
    };
    let base = spawned(None);
    assert!(base > 0);
    for s in 0..5 {
        assert_eq!(spawned(Some(s)), base);
    }
}

#[test]
fn shipped_scenarios_match_the_generator() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    assert_eq!(load_scenario(dir.join("grid3x3.json")).unwrap(), common::grid3());
    assert_eq!(load_scenario(dir.join("grid3x3_asym.json")).unwrap(), common::grid3_asym());
}
