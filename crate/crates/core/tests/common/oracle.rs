//! Independent reference implementations used to check the Q-network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dualight::qkernel::{backward, forward, Dims, ExperientialWeights, Mat, SharedParams};
use dualight::simnet::{Observation, SimState, PHASE_TABLE};

use super::{random_model, random_obs};

fn at(m: &Mat, r: usize, c: usize) -> f64 {
    m.data[r * m.cols + c]
}

pub struct ScalarForward {
    pub q: Vec<f64>,
    /// heads × nodes
    pub attn: Vec<Vec<f64>>,
    /// Smallest distance of any ReLU input from zero.
    pub kink_margin: f64,
}

/// Plain nested-loop forward pass; `obs[0]` is the agent itself.
pub fn scalar_forward(
    p: &SharedParams,
    int_row: &[f64],
    fea_row: &[f64],
    obs: &[Observation],
) -> ScalarForward {
    let f = p.w_feat.rows;
    let d = p.w_feat.cols;
    let heads = p.w_att.len();
    let dl = p.w_att[0].cols;
    let np = p.w_out.cols;
    let n = obs.len();
    let mut margin = f64::INFINITY;

    let mut psi = vec![vec![0.0; d]; n];
    for j in 0..n {
        for c in 0..d {
            let mut s = p.b_feat[c];
            for r in 0..f {
                s += obs[j].0[r] * at(&p.w_feat, r, c);
            }
            margin = margin.min(s.abs());
            psi[j][c] = if s > 0.0 { s } else { 0.0 };
        }
    }

    let mut g = vec![0.0; d];
    let mut attn = Vec::new();
    for m in 0..heads {
        let mut h = vec![vec![0.0; dl]; n];
        for j in 0..n {
            for c in 0..dl {
                let mut s = 0.0;
                for r in 0..d {
                    s += int_row[j] * psi[j][r] * at(&p.w_att[m], r, c);
                }
                h[j][c] = s;
            }
        }
        let logits: Vec<f64> = (0..n)
            .map(|j| {
                let mut s = 0.0;
                for c in 0..dl {
                    s += h[0][c] * h[j][c];
                }
                s / (dl as f64).sqrt()
            })
            .collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
        let total: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|x| x / total).collect();
        for c in 0..d {
            let mut s = 0.0;
            for r in 0..dl {
                let mut pooled = 0.0;
                for j in 0..n {
                    pooled += a[j] * h[j][r];
                }
                s += pooled * at(&p.w_val[m], r, c);
            }
            g[c] += s / heads as f64;
        }
        attn.push(a);
    }

    let mut concat = vec![0.0; 2 * d];
    for c in 0..d {
        margin = margin.min(g[c].abs());
        concat[c] = if g[c] > 0.0 { g[c] } else { 0.0 };
        concat[d + c] = fea_row[c] * psi[0][c];
    }
    let q = (0..np)
        .map(|o| {
            let mut s = p.b_out[o];
            for r in 0..2 * d {
                s += concat[r] * at(&p.w_out, r, o);
            }
            s
        })
        .collect();
    ScalarForward {
        q,
        attn,
        kink_margin: margin,
    }
}

/// A random forward/backward problem for agent `(k, i)`.
pub struct Instance {
    pub dims: Dims,
    pub params: SharedParams,
    pub emb: ExperientialWeights,
    pub k: usize,
    pub i: usize,
    pub obs: Vec<Observation>,
    pub dq: Vec<f64>,
}

impl Instance {
    pub fn scalar(&self) -> ScalarForward {
        let t = &self.emb.tables[self.k];
        scalar_forward(&self.params, t.int.row(self.i), t.fea.row(self.i), &self.obs)
    }

    pub fn loss(&self, params: &SharedParams, emb: &ExperientialWeights) -> f64 {
        let (q, _) = forward(params, emb, self.k, self.i, &self.obs[0], &self.obs[1..]).unwrap();
        q.iter().zip(&self.dq).map(|(a, b)| a * b).sum()
    }
}

/// Seeded instance with `neighbors` neighbor observations. Instances whose
/// ReLU inputs sit within `1e-3` of a kink are redrawn, since finite
/// differences are meaningless there.
pub fn random_instance(seed: u64, neighbors: usize, heads: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        heads,
        neighbors,
        ..Dims::default()
    };
    let sizes = [3, 4];
    loop {
        let (params, emb) = random_model(rng.gen(), &dims, &sizes);
        let k = rng.gen_range(0..sizes.len());
        let i = rng.gen_range(0..sizes[k]);
        let obs: Vec<Observation> = (0..=neighbors).map(|_| random_obs(&mut rng)).collect();
        let dq = (0..dims.phases).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let inst = Instance {
            dims,
            params,
            emb,
            k,
            i,
            obs,
            dq,
        };
        if inst.scalar().kink_margin > 1e-3 {
            return inst;
        }
    }
}

/// Relative error with a small absolute floor so that entries which are
/// zero up to rounding do not dominate.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central finite differences of `dq · Q` against the analytic backward
/// pass over every shared parameter and both embedding rows. Returns the
/// largest relative error and the number of entries checked.
pub fn gradient_check(inst: &Instance, h: f64) -> (f64, usize) {
    let (_, cache) = forward(
        &inst.params,
        &inst.emb,
        inst.k,
        inst.i,
        &inst.obs[0],
        &inst.obs[1..],
    )
    .unwrap();
    let grads = backward(&inst.params, &cache, &inst.dq).unwrap();
    let mut worst: f64 = 0.0;
    let mut count = 0;

    let analytic: Vec<Vec<f64>> = grads.shared.tensors().iter().map(|t| t.to_vec()).collect();
    let mut params = inst.params.clone();
    for (ti, tensor) in analytic.iter().enumerate() {
        for (idx, &a) in tensor.iter().enumerate() {
            let orig = params.tensors()[ti][idx];
            params.tensors_mut()[ti][idx] = orig + h;
            let up = inst.loss(&params, &inst.emb);
            params.tensors_mut()[ti][idx] = orig - h;
            let down = inst.loss(&params, &inst.emb);
            params.tensors_mut()[ti][idx] = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
            count += 1;
        }
    }

    let row = grads.row(inst.k, inst.i).expect("row gradient");
    let mut emb = inst.emb.clone();
    for (fea, analytic) in [(false, &row.int), (true, &row.fea)] {
        for (c, &a) in analytic.iter().enumerate() {
            let orig = *cell(&mut emb, inst.k, inst.i, fea, c);
            *cell(&mut emb, inst.k, inst.i, fea, c) = orig + h;
            let up = inst.loss(&inst.params, &emb);
            *cell(&mut emb, inst.k, inst.i, fea, c) = orig - h;
            let down = inst.loss(&inst.params, &emb);
            *cell(&mut emb, inst.k, inst.i, fea, c) = orig;
            worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
            count += 1;
        }
    }
    (worst, count)
}

fn cell(e: &mut ExperientialWeights, k: usize, i: usize, fea: bool, c: usize) -> &mut f64 {
    let t = &mut e.tables[k];
    let m = if fea { &mut t.fea } else { &mut t.int };
    let cols = m.cols;
    &mut m.data[i * cols + c]
}

/// Vehicles queued on the approach that movement `m` of intersection `i`
/// feeds, located from the grid geometry: the downstream intersection sits
/// one spacing away along the exit arm and is entered on its arm pointing
/// back.
pub fn geometric_downstream(state: &SimState, i: usize, m: usize, spacing: f64) -> usize {
    let net = state.network();
    let spec = &net.spec;
    let std = &net.std[i];
    let offset = if m % 2 == 0 { 2 } else { 3 };
    let exit_slot = (m / 2 + offset) % 4;
    let Some(arm) = std.slot_arm[exit_slot] else {
        return 0;
    };
    let here = &spec.intersections[i];
    let angle = here.arms[arm].angle_deg.to_radians();
    let (tx, ty) = (here.x + spacing * angle.cos(), here.y + spacing * angle.sin());
    let Some(j) = spec
        .intersections
        .iter()
        .position(|o| (o.x - tx).hypot(o.y - ty) < 1e-6)
    else {
        return 0;
    };
    let back = (here.arms[arm].angle_deg + 180.0).rem_euclid(360.0);
    let there = &spec.intersections[j];
    let arm_j = there
        .arms
        .iter()
        .position(|a| (a.angle_deg - back).abs() < 1e-6)
        .expect("grid arms face each other");
    let slot = net.std[j]
        .slot_arm
        .iter()
        .position(|&a| a == Some(arm_j))
        .unwrap();
    state.queue_len(j, 2 * slot) + state.queue_len(j, 2 * slot + 1) + state.right_queue_len(j, slot)
}

/// Argmax over all eight phases of the summed upstream-minus-downstream
/// queue, skipping phases with no present movement; lowest index on ties.
pub fn max_pressure_oracle(state: &SimState, i: usize, spacing: f64) -> usize {
    let std = &state.network().std[i];
    let mut best = None;
    for (p, moves) in PHASE_TABLE.iter().enumerate() {
        let present: Vec<usize> = moves.iter().copied().filter(|&m| std.movement_map[m].is_some()).collect();
        if present.is_empty() {
            continue;
        }
        let v: i64 = present
            .iter()
            .map(|&m| state.queue_len(i, m) as i64 - geometric_downstream(state, i, m, spacing) as i64)
            .sum();
        match best {
            Some((_, b)) if b >= v => {}
            _ => best = Some((p, v)),
        }
    }
    best.expect("some phase is valid").0
}
