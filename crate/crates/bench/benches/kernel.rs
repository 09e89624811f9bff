use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualight::qkernel::{backward, forward, init_params, Dims};
use dualight::simnet::synth::{grid, GridConfig};
use dualight::simnet::{Network, Observation, SimState, OBS_DIM};

fn observations(n: usize, seed: u64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut o = [0.0; OBS_DIM];
            o[rng.gen_range(0..8)] = 1.0;
            for x in o.iter_mut().skip(8) {
                *x = rng.gen_range(0..10) as f64;
            }
            Observation(o)
        })
        .collect()
}

fn kernel(c: &mut Criterion) {
    for neighbors in [4, 9] {
        let dims = Dims {
            neighbors,
            ..Dims::default()
        };
        let (params, emb) = init_params(1, &dims, &[9]);
        let obs = observations(1 + neighbors, 2);
        c.bench_function(&format!("forward/{}-nodes", 1 + neighbors), |b| {
            b.iter(|| forward(&params, &emb, 0, 4, black_box(&obs[0]), black_box(&obs[1..])).unwrap())
        });
        let (_, cache) = forward(&params, &emb, 0, 4, &obs[0], &obs[1..]).unwrap();
        let dq = vec![0.1; dims.phases];
        c.bench_function(&format!("backward/{}-nodes", 1 + neighbors), |b| {
            b.iter(|| backward(&params, black_box(&cache), &dq).unwrap())
        });
    }
}

fn simulator(c: &mut Criterion) {
    let spec = grid(
        0,
        &GridConfig {
            we_vph: 700.0,
            ew_vph: 700.0,
            ns_vph: 700.0,
            sn_vph: 700.0,
            ..GridConfig::default()
        },
    );
    let net = Arc::new(Network::new(spec).unwrap());
    c.bench_function("sim/episode-3x3", |b| {
        b.iter(|| {
            let mut sim = SimState::new(net.clone());
            for t in 0..240usize {
                let a = vec![t % 4; 9];
                sim.step(&a).unwrap();
            }
            black_box(sim.counts())
        })
    });
}

criterion_group!(benches, kernel, simulator);
criterion_main!(benches);
