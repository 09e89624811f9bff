//! Forward and backward passes of the Q-network.
//!
//! For agent `i` of scenario `k` with nodes `j = 0` (self) and `1..=n`
//! (neighbors in neighbor-list order):
//!
//! ```text
//! psi_j  = relu(o_j W_f + b_f)
//! z_j    = e_j * psi_j                       e = Emb_int[k][i]
//! h_mj   = z_j Ŵ_m
//! a_mj   = softmax_j(h_m0 · h_mj / sqrt(D'))
//! w_g    = relu(1/M Σ_m (Σ_j a_mj h_mj) W^m)
//! w_f    = f ⊙ psi_0                         f = Emb_fea[k][i]
//! Q      = [w_g, w_f] W_o + b_o
//! ```

use std::collections::BTreeMap;

use super::params::{Dims, ExperientialWeights, SharedParams};
use super::tensor::dot;
use super::KernelError;
use crate::simnet::Observation;

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub scenario: usize,
    pub intersection: usize,
    generation: u64,
    pub nodes: usize,
    /// nodes × F
    pub obs: Vec<f64>,
    /// nodes × D, pre-activation of the feature extractor.
    pub pre: Vec<f64>,
    /// nodes × D
    pub psi: Vec<f64>,
    pub int_row: Vec<f64>,
    pub fea_row: Vec<f64>,
    /// nodes × D, intersection-weighted features.
    pub z: Vec<f64>,
    /// heads × nodes × D'
    pub h: Vec<f64>,
    /// heads × nodes, attention coefficients.
    pub attn: Vec<f64>,
    /// heads × D', attention-pooled latent.
    pub pooled: Vec<f64>,
    /// D, head-averaged output before the activation.
    pub g_pre: Vec<f64>,
    /// 2D: `[w_g, w_f]`.
    pub concat: Vec<f64>,
    pub q: Vec<f64>,
}

impl ForwardCache {
    /// Attention coefficients of head `m`.
    pub fn attention(&self, m: usize) -> &[f64] {
        &self.attn[m * self.nodes..(m + 1) * self.nodes]
    }
}

/// Gradients for one row of each experiential table.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbRowGrad {
    pub int: Vec<f64>,
    pub fea: Vec<f64>,
}

/// Dense gradients for the shared parameters plus sparse row gradients
/// for the experiential tables, keyed by `(scenario, intersection)`.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub shared: SharedParams,
    pub rows: BTreeMap<(usize, usize), EmbRowGrad>,
}

impl GradientSet {
    pub fn zeros(d: &Dims) -> Self {
        GradientSet {
            shared: SharedParams::zeros(d),
            rows: BTreeMap::new(),
        }
    }

    /// Gradient of an embedding row; exactly zero for untouched rows.
    pub fn row(&self, scenario: usize, intersection: usize) -> Option<&EmbRowGrad> {
        self.rows.get(&(scenario, intersection))
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.shared.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
        for g in self.rows.values_mut() {
            g.int.iter_mut().chain(g.fea.iter_mut()).for_each(|x| *x *= s);
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.shared.is_all_zero()
            && self
                .rows
                .values()
                .all(|g| g.int.iter().chain(&g.fea).all(|&x| x == 0.0))
    }
}

/// Which gradients a backward pass accumulates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradTargets {
    pub shared: bool,
    pub embeddings: bool,
}

impl GradTargets {
    pub const ALL: GradTargets = GradTargets {
        shared: true,
        embeddings: true,
    };
    pub const SHARED: GradTargets = GradTargets {
        shared: true,
        embeddings: false,
    };
    pub const EMBEDDINGS: GradTargets = GradTargets {
        shared: false,
        embeddings: true,
    };
}

fn check_shapes(params: &SharedParams, obs_len: usize) -> Result<(), KernelError> {
    let d = params.w_feat.cols;
    let heads = params.w_att.len();
    if params.w_feat.rows != obs_len {
        return Err(KernelError::DimensionMismatch(format!(
            "observation length {obs_len} but W_f has {} rows",
            params.w_feat.rows
        )));
    }
    if heads == 0 || params.w_val.len() != heads || params.w_out.rows != 2 * d {
        return Err(KernelError::DimensionMismatch(
            "inconsistent shared parameter shapes".into(),
        ));
    }
    Ok(())
}

/// Q-values for agent `i` of scenario `k` from its own observation and
/// those of its neighbors (in neighbor-list order).
pub fn forward(
    params: &SharedParams,
    emb: &ExperientialWeights,
    k: usize,
    i: usize,
    obs_self: &Observation,
    obs_neighbors: &[Observation],
) -> Result<(Vec<f64>, ForwardCache), KernelError> {
    let tables = emb.tables.get(k).ok_or(KernelError::OutOfRange {
        what: "scenario",
        index: k,
    })?;
    if i >= tables.int.rows {
        return Err(KernelError::OutOfRange {
            what: "intersection",
            index: i,
        });
    }
    let int_row = tables.int.row(i);
    let fea_row = tables.fea.row(i);
    forward_rows(params, k, i, int_row, fea_row, obs_self, obs_neighbors)
}

/// Forward pass with explicit experiential weight rows.
pub fn forward_rows(
    params: &SharedParams,
    k: usize,
    i: usize,
    int_row: &[f64],
    fea_row: &[f64],
    obs_self: &Observation,
    obs_neighbors: &[Observation],
) -> Result<(Vec<f64>, ForwardCache), KernelError> {
    let f = obs_self.0.len();
    check_shapes(params, f)?;
    let nodes = 1 + obs_neighbors.len();
    let d = params.w_feat.cols;
    let dl = params.w_att[0].cols;
    let heads = params.w_att.len();
    let p = params.w_out.cols;
    if int_row.len() != nodes {
        return Err(KernelError::DimensionMismatch(format!(
            "intersection-wise row has {} entries for {nodes} nodes",
            int_row.len()
        )));
    }
    if fea_row.len() != d {
        return Err(KernelError::DimensionMismatch(format!(
            "feature-wise row has {} entries, expected {d}",
            fea_row.len()
        )));
    }

    let mut obs = Vec::with_capacity(nodes * f);
    obs.extend_from_slice(&obs_self.0);
    for o in obs_neighbors {
        obs.extend_from_slice(&o.0);
    }

    let mut pre = vec![0.0; nodes * d];
    let mut psi = vec![0.0; nodes * d];
    let mut z = vec![0.0; nodes * d];
    for j in 0..nodes {
        let pj = &mut pre[j * d..(j + 1) * d];
        params.w_feat.vec_mul_into(&obs[j * f..(j + 1) * f], pj);
        for (x, b) in pj.iter_mut().zip(&params.b_feat) {
            *x += b;
        }
        for c in 0..d {
            let v = pj[c].max(0.0);
            psi[j * d + c] = v;
            z[j * d + c] = int_row[j] * v;
        }
    }

    let scale = 1.0 / (dl as f64).sqrt();
    let mut h = vec![0.0; heads * nodes * dl];
    let mut attn = vec![0.0; heads * nodes];
    let mut pooled = vec![0.0; heads * dl];
    let mut g_pre = vec![0.0; d];
    let mut u = vec![0.0; d];
    for m in 0..heads {
        let hm = &mut h[m * nodes * dl..(m + 1) * nodes * dl];
        for j in 0..nodes {
            params.w_att[m].vec_mul_into(&z[j * d..(j + 1) * d], &mut hm[j * dl..(j + 1) * dl]);
        }
        let am = &mut attn[m * nodes..(m + 1) * nodes];
        let h0 = &hm[..dl];
        for j in 0..nodes {
            am[j] = dot(h0, &hm[j * dl..(j + 1) * dl]) * scale;
        }
        let max = am.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for a in am.iter_mut() {
            *a = (*a - max).exp();
            sum += *a;
        }
        for a in am.iter_mut() {
            *a /= sum;
        }
        let cm = &mut pooled[m * dl..(m + 1) * dl];
        for j in 0..nodes {
            let a = am[j];
            for (c, hv) in cm.iter_mut().zip(&hm[j * dl..(j + 1) * dl]) {
                *c += a * hv;
            }
        }
        params.w_val[m].vec_mul_into(cm, &mut u);
        for (g, x) in g_pre.iter_mut().zip(&u) {
            *g += x / heads as f64;
        }
    }

    let mut concat = vec![0.0; 2 * d];
    for c in 0..d {
        concat[c] = g_pre[c].max(0.0);
        concat[d + c] = fea_row[c] * psi[c];
    }
    let mut q = vec![0.0; p];
    params.w_out.vec_mul_into(&concat, &mut q);
    for (x, b) in q.iter_mut().zip(&params.b_out) {
        *x += b;
    }

    let cache = ForwardCache {
        scenario: k,
        intersection: i,
        generation: params.generation(),
        nodes,
        obs,
        pre,
        psi,
        int_row: int_row.to_vec(),
        fea_row: fea_row.to_vec(),
        z,
        h,
        attn,
        pooled,
        g_pre,
        concat,
        q: q.clone(),
    };
    Ok((q, cache))
}

/// Gradients of `dq · Q` for a cached forward pass.
pub fn backward(
    params: &SharedParams,
    cache: &ForwardCache,
    dq: &[f64],
) -> Result<GradientSet, KernelError> {
    let dims = Dims {
        obs: params.w_feat.rows,
        feat: params.w_feat.cols,
        latent: params.w_att[0].cols,
        phases: params.w_out.cols,
        heads: params.w_att.len(),
        neighbors: cache.nodes - 1,
    };
    let mut grads = GradientSet::zeros(&dims);
    backward_into(params, cache, dq, GradTargets::ALL, &mut grads)?;
    Ok(grads)
}

/// Accumulates gradients of `dq · Q` into `grads`.
pub fn backward_into(
    params: &SharedParams,
    cache: &ForwardCache,
    dq: &[f64],
    targets: GradTargets,
    grads: &mut GradientSet,
) -> Result<(), KernelError> {
    if cache.generation != params.generation() {
        return Err(KernelError::StaleCache);
    }
    let f = params.w_feat.rows;
    let d = params.w_feat.cols;
    let dl = params.w_att[0].cols;
    let heads = params.w_att.len();
    let p = params.w_out.cols;
    let nodes = cache.nodes;
    if dq.len() != p {
        return Err(KernelError::DimensionMismatch(format!(
            "dQ has {} entries, expected {p}",
            dq.len()
        )));
    }

    if targets.shared {
        grads.shared.w_out.add_outer(&cache.concat, dq);
        for (g, x) in grads.shared.b_out.iter_mut().zip(dq) {
            *g += x;
        }
    }
    let mut dconcat = vec![0.0; 2 * d];
    params.w_out.mul_vec_add(dq, &mut dconcat);

    let mut dpsi = vec![0.0; nodes * d];
    let mut dfea = vec![0.0; d];
    for c in 0..d {
        let dwf = dconcat[d + c];
        dfea[c] = dwf * cache.psi[c];
        dpsi[c] += dwf * cache.fea_row[c];
    }

    let mut dg_pre = vec![0.0; d];
    for c in 0..d {
        if cache.g_pre[c] > 0.0 {
            dg_pre[c] = dconcat[c];
        }
    }

    let scale = 1.0 / (dl as f64).sqrt();
    let mut dz = vec![0.0; nodes * d];
    let mut du = vec![0.0; d];
    let mut dc = vec![0.0; dl];
    let mut dh = vec![0.0; nodes * dl];
    let mut da = vec![0.0; nodes];
    for m in 0..heads {
        for (x, g) in du.iter_mut().zip(&dg_pre) {
            *x = g / heads as f64;
        }
        let cm = &cache.pooled[m * dl..(m + 1) * dl];
        if targets.shared {
            grads.shared.w_val[m].add_outer(cm, &du);
        }
        dc.fill(0.0);
        params.w_val[m].mul_vec_add(&du, &mut dc);

        let hm = &cache.h[m * nodes * dl..(m + 1) * nodes * dl];
        let am = cache.attention(m);
        dh.fill(0.0);
        for j in 0..nodes {
            let hj = &hm[j * dl..(j + 1) * dl];
            da[j] = dot(&dc, hj);
            for (x, c) in dh[j * dl..(j + 1) * dl].iter_mut().zip(&dc) {
                *x += am[j] * c;
            }
        }
        let mean_da: f64 = am.iter().zip(&da).map(|(a, g)| a * g).sum();
        let h0 = &hm[..dl];
        for j in 0..nodes {
            let ds = am[j] * (da[j] - mean_da) * scale;
            if ds == 0.0 {
                continue;
            }
            let hj = &hm[j * dl..(j + 1) * dl];
            for c in 0..dl {
                dh[c] += ds * hj[c];
                dh[j * dl + c] += ds * h0[c];
            }
        }
        for j in 0..nodes {
            let zj = &cache.z[j * d..(j + 1) * d];
            let dhj = &dh[j * dl..(j + 1) * dl];
            if targets.shared {
                grads.shared.w_att[m].add_outer(zj, dhj);
            }
            params.w_att[m].mul_vec_add(dhj, &mut dz[j * d..(j + 1) * d]);
        }
    }

    let mut dint = vec![0.0; nodes];
    for j in 0..nodes {
        let e = cache.int_row[j];
        let psij = &cache.psi[j * d..(j + 1) * d];
        let dzj = &dz[j * d..(j + 1) * d];
        dint[j] = dot(dzj, psij);
        for c in 0..d {
            dpsi[j * d + c] += e * dzj[c];
        }
    }

    if targets.shared {
        let mut dpre = vec![0.0; d];
        for j in 0..nodes {
            for c in 0..d {
                dpre[c] = if cache.pre[j * d + c] > 0.0 {
                    dpsi[j * d + c]
                } else {
                    0.0
                };
            }
            grads
                .shared
                .w_feat
                .add_outer(&cache.obs[j * f..(j + 1) * f], &dpre);
            for (g, x) in grads.shared.b_feat.iter_mut().zip(&dpre) {
                *g += x;
            }
        }
        grads.shared.touch();
    }

    if targets.embeddings {
        let row = grads
            .rows
            .entry((cache.scenario, cache.intersection))
            .or_insert_with(|| EmbRowGrad {
                int: vec![0.0; nodes],
                fea: vec![0.0; d],
            });
        if row.int.len() != nodes || row.fea.len() != d {
            return Err(KernelError::DimensionMismatch(
                "gradient row shape differs from cache".into(),
            ));
        }
        for (g, x) in row.int.iter_mut().zip(&dint) {
            *g += x;
        }
        for (g, x) in row.fea.iter_mut().zip(&dfea) {
            *g += x;
        }
    }
    Ok(())
}
