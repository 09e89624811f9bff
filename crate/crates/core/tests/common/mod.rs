#![allow(dead_code)]

pub mod oracle;

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualight::qkernel::{Dims, ExperientialWeights, SharedParams};
use dualight::simnet::synth::{grid, GridConfig};
use dualight::simnet::{
    ArmSpec, BoundarySpec, FlowSpec, IntersectionSpec, Link, Network, Observation, RouteMove,
    ScenarioSpec, Turn, OBS_DIM,
};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

/// One 4-arm intersection (arms at 0/90/180/270, slots 0..3) fed from four
/// boundary nodes. Link `2s` enters on slot `s`, link `2s + 1` leaves by it.
pub fn crossing(flows: Vec<FlowSpec>, free_flow_s: u32) -> ScenarioSpec {
    let arms = [0.0, 90.0, 180.0, 270.0];
    let boundaries: Vec<BoundarySpec> = arms
        .iter()
        .enumerate()
        .map(|(s, a): (usize, &f64)| BoundarySpec {
            id: 10 + s as u32,
            x: 200.0 * a.to_radians().cos(),
            y: 200.0 * a.to_radians().sin(),
        })
        .collect();
    let mut links = Vec::new();
    for b in &boundaries {
        links.push(Link {
            from: b.id,
            to: 1,
            free_flow_s,
            saturation_vps: 1.0,
        });
        links.push(Link {
            from: 1,
            to: b.id,
            free_flow_s,
            saturation_vps: 1.0,
        });
    }
    ScenarioSpec {
        scenario_id: 0,
        intersections: vec![IntersectionSpec {
            id: 1,
            x: 0.0,
            y: 0.0,
            arms: arms
                .iter()
                .map(|&angle_deg| ArmSpec {
                    angle_deg,
                    movements: vec![Turn::Through, Turn::Left, Turn::Right],
                })
                .collect(),
            ftc: None,
        }],
        boundaries,
        links,
        flows,
        episode_length_s: 3600,
        decision_interval_s: 15,
    }
}

/// Flow entering the crossing on `slot` and making `turn`, spawning at
/// `rate_vph` during `[start, end)`.
pub fn crossing_flow(slot: usize, turn: Turn, rate_vph: f64, start_s: u32, end_s: u32) -> FlowSpec {
    let exit = (slot + turn.exit_offset()) % 4;
    let mv = match turn {
        Turn::Through => RouteMove::Through,
        Turn::Left => RouteMove::Left,
        Turn::Right => RouteMove::Right,
    };
    FlowSpec {
        route: vec![(2 * slot, mv), (2 * exit + 1, RouteMove::Exit)],
        rate_vph,
        start_s,
        end_s,
    }
}

/// A seeded random grid scenario: 1–3 rows and columns, random demand.
pub fn random_grid(seed: u64) -> ScenarioSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = GridConfig {
        rows: rng.gen_range(1..=3),
        cols: rng.gen_range(1..=3),
        free_flow_s: rng.gen_range(5..=30),
        we_vph: rng.gen_range(0.0..1200.0),
        ew_vph: rng.gen_range(0.0..1200.0),
        ns_vph: rng.gen_range(0.0..1200.0),
        sn_vph: rng.gen_range(0.0..1200.0),
        left_vph: if rng.gen_bool(0.5) { rng.gen_range(50.0..400.0) } else { 0.0 },
        ..GridConfig::default()
    };
    grid(seed as usize, &cfg)
}

/// The near-saturation 3×3 grid used by the learning checks.
pub fn grid3() -> ScenarioSpec {
    grid(
        0,
        &GridConfig {
            we_vph: 700.0,
            ew_vph: 700.0,
            ns_vph: 700.0,
            sn_vph: 700.0,
            ..GridConfig::default()
        },
    )
}

/// A 3×3 grid with unbalanced directional demand and left turns.
pub fn grid3_asym() -> ScenarioSpec {
    grid(
        1,
        &GridConfig {
            we_vph: 900.0,
            ew_vph: 400.0,
            ns_vph: 300.0,
            sn_vph: 650.0,
            left_vph: 150.0,
            ..GridConfig::default()
        },
    )
}

pub fn net(spec: ScenarioSpec) -> Arc<Network> {
    Arc::new(Network::new(spec).expect("valid scenario"))
}

/// Random observation: a phase one-hot followed by small queue counts,
/// optionally perturbed off the integer lattice.
pub fn random_obs(rng: &mut ChaCha8Rng) -> Observation {
    let mut o = [0.0; OBS_DIM];
    o[rng.gen_range(0..8)] = 1.0;
    for x in o.iter_mut().skip(8) {
        *x = rng.gen_range(0..12) as f64 + rng.gen_range(-0.3..0.3);
    }
    Observation(o)
}

/// Random shared parameters and random (non-unit) experiential tables.
pub fn random_model(seed: u64, dims: &Dims, sizes: &[usize]) -> (SharedParams, ExperientialWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SharedParams::random(dims, &mut rng);
    let mut emb = ExperientialWeights::ones(dims, sizes);
    for t in &mut emb.tables {
        for x in t.int.data.iter_mut().chain(t.fea.data.iter_mut()) {
            *x = rng.gen_range(0.3..1.7);
        }
    }
    (params, emb)
}

/// A random grid advanced by a random number of randomly chosen valid
/// phases.
pub fn random_state(seed: u64) -> dualight::simnet::SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut sim = dualight::simnet::SimState::new(net(random_grid(seed)));
    let steps = rng.gen_range(0..120);
    for _ in 0..steps {
        let actions: Vec<usize> = sim
            .network()
            .std
            .iter()
            .map(|s| {
                let valid: Vec<usize> = s.valid_phase_indices().collect();
                valid[rng.gen_range(0..valid.len())]
            })
            .collect();
        sim.step(&actions).unwrap();
    }
    sim
}
