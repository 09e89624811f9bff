//! Cross-scenario neighbors: each agent additionally attends to the
//! intersections of other scenarios whose extracted features are most
//! similar to its own (cosine similarity, top-k).

use serde::{Deserialize, Serialize};

use crate::qkernel::{
    dot, forward, ExperientialWeights, ForwardCache, KernelError, SharedParams,
};
use crate::simnet::Observation;

/// Cross-scenario neighbors per agent.
pub const CROSS_NEIGHBORS: usize = 5;

/// `u·v / (‖u‖‖v‖)`; zero when either vector is zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> f64 {
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0)
}

/// Feature-extractor output `relu(o W_f + b_f)`.
pub fn extract_features(params: &SharedParams, obs: &Observation) -> Vec<f64> {
    let mut out = vec![0.0; params.w_feat.cols];
    params.w_feat.vec_mul_into(&obs.0, &mut out);
    for (x, b) in out.iter_mut().zip(&params.b_feat) {
        *x = (*x + b).max(0.0);
    }
    out
}

/// A cross-scenario neighbor slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossRef {
    /// `(scenario, intersection)` in another scenario.
    Other(usize, usize),
    /// Padding; contributes the agent's own observation.
    SelfPad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossEntry {
    pub neighbors: Vec<CrossRef>,
    /// Similarity per slot (padding scores 0).
    pub scores: Vec<f64>,
}

/// Cross-scenario neighbor lists for every `(scenario, intersection)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossNeighborMap {
    pub entries: Vec<Vec<CrossEntry>>,
    /// Episode index at which the map was built.
    pub refreshed_at: usize,
}

/// The `kx` intersections outside scenario `k` most similar to `(k, i)`,
/// by descending similarity with ties to the lower `(scenario, intersection)`.
/// `features[s][j]` is the extracted feature vector of intersection `j` in
/// scenario `s`.
pub fn topk_cross_neighbors(features: &[Vec<Vec<f64>>], k: usize, i: usize, kx: usize) -> CrossEntry {
    let query = &features[k][i];
    let mut cands: Vec<(f64, usize, usize)> = features
        .iter()
        .enumerate()
        .filter(|(s, _)| *s != k)
        .flat_map(|(s, rows)| {
            rows.iter()
                .enumerate()
                .map(move |(j, v)| (cosine_similarity(query, v), s, j))
        })
        .collect();
    cands.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    cands.truncate(kx);
    let mut neighbors: Vec<CrossRef> = cands.iter().map(|&(_, s, j)| CrossRef::Other(s, j)).collect();
    let mut scores: Vec<f64> = cands.iter().map(|c| c.0).collect();
    neighbors.resize(kx, CrossRef::SelfPad);
    scores.resize(kx, 0.0);
    CrossEntry { neighbors, scores }
}

/// Rebuilds the whole map from per-scenario observations, extracting
/// features with each scenario's parameter set.
pub fn build_cross_map(
    params_for: impl Fn(usize) -> SharedParams,
    observations: &[Vec<Observation>],
    kx: usize,
    episode: usize,
) -> CrossNeighborMap {
    let features: Vec<Vec<Vec<f64>>> = observations
        .iter()
        .enumerate()
        .map(|(k, obs)| {
            let p = params_for(k);
            obs.iter().map(|o| extract_features(&p, o)).collect()
        })
        .collect();
    CrossNeighborMap {
        entries: (0..features.len())
            .map(|k| {
                (0..features[k].len())
                    .map(|i| topk_cross_neighbors(&features, k, i, kx))
                    .collect()
            })
            .collect(),
        refreshed_at: episode,
    }
}

/// Forward pass over same-scenario neighbors followed by cross-scenario
/// neighbors; the intersection-wise table must be `1 + same + cross` wide.
pub fn forward_xscen(
    params: &SharedParams,
    emb: &ExperientialWeights,
    k: usize,
    i: usize,
    obs_self: &Observation,
    same: &[Observation],
    cross: &[Observation],
) -> Result<(Vec<f64>, ForwardCache), KernelError> {
    let width = emb
        .tables
        .get(k)
        .ok_or(KernelError::OutOfRange {
            what: "scenario",
            index: k,
        })?
        .int
        .cols;
    if width != 1 + same.len() + cross.len() {
        return Err(KernelError::DimensionMismatch(format!(
            "intersection-wise table width {width} for {} same and {} cross neighbors",
            same.len(),
            cross.len()
        )));
    }
    let mut nbrs = Vec::with_capacity(same.len() + cross.len());
    nbrs.extend_from_slice(same);
    nbrs.extend_from_slice(cross);
    forward(params, emb, k, i, obs_self, &nbrs)
}
