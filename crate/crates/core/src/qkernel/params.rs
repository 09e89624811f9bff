use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Mat;

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Raw observation length F.
    pub obs: usize,
    /// Feature size D.
    pub feat: usize,
    /// Attention latent size D'.
    pub latent: usize,
    /// Number of phases p.
    pub phases: usize,
    /// Attention heads M.
    pub heads: usize,
    /// Aggregated neighbors per agent (excluding self).
    pub neighbors: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            obs: 16,
            feat: 16,
            latent: 32,
            phases: 8,
            heads: 1,
            neighbors: 4,
        }
    }
}

impl Dims {
    /// Width of an intersection-wise weight row: self plus neighbors.
    pub fn nodes(&self) -> usize {
        1 + self.neighbors
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

pub(crate) fn fresh_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Parameters of the feature extractor, attention block and Q head,
/// shared across agents and scenarios.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SharedParams {
    /// F × D
    pub w_feat: Mat,
    pub b_feat: Vec<f64>,
    /// Per head, D × D'.
    pub w_att: Vec<Mat>,
    /// Per head, D' × D.
    pub w_val: Vec<Mat>,
    /// 2D × p
    pub w_out: Mat,
    pub b_out: Vec<f64>,
    #[serde(skip, default = "fresh_generation")]
    generation: u64,
}

impl PartialEq for SharedParams {
    fn eq(&self, other: &Self) -> bool {
        self.w_feat == other.w_feat
            && self.b_feat == other.b_feat
            && self.w_att == other.w_att
            && self.w_val == other.w_val
            && self.w_out == other.w_out
            && self.b_out == other.b_out
    }
}

fn uniform_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = 1.0 / (rows as f64).sqrt();
    Mat {
        rows,
        cols,
        data: (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    }
}

fn uniform_vec(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-bound..bound)).collect()
}

impl SharedParams {
    pub fn zeros(d: &Dims) -> Self {
        SharedParams {
            w_feat: Mat::zeros(d.obs, d.feat),
            b_feat: vec![0.0; d.feat],
            w_att: (0..d.heads).map(|_| Mat::zeros(d.feat, d.latent)).collect(),
            w_val: (0..d.heads).map(|_| Mat::zeros(d.latent, d.feat)).collect(),
            w_out: Mat::zeros(2 * d.feat, d.phases),
            b_out: vec![0.0; d.phases],
            generation: fresh_generation(),
        }
    }

    /// Uniform on ±1/sqrt(fan_in) per matrix.
    pub fn random(d: &Dims, rng: &mut ChaCha8Rng) -> Self {
        let w_feat = uniform_mat(rng, d.obs, d.feat);
        let b_feat = uniform_vec(rng, d.obs, d.feat);
        let w_att = (0..d.heads).map(|_| uniform_mat(rng, d.feat, d.latent)).collect();
        let w_val = (0..d.heads).map(|_| uniform_mat(rng, d.latent, d.feat)).collect();
        let w_out = uniform_mat(rng, 2 * d.feat, d.phases);
        let b_out = uniform_vec(rng, 2 * d.feat, d.phases);
        SharedParams {
            w_feat,
            b_feat,
            w_att,
            w_val,
            w_out,
            b_out,
            generation: fresh_generation(),
        }
    }

    pub fn dims_match(&self, d: &Dims) -> bool {
        self.w_feat.rows == d.obs
            && self.w_feat.cols == d.feat
            && self.b_feat.len() == d.feat
            && self.w_att.len() == d.heads
            && self.w_val.len() == d.heads
            && self.w_att.iter().all(|m| m.rows == d.feat && m.cols == d.latent)
            && self.w_val.iter().all(|m| m.rows == d.latent && m.cols == d.feat)
            && self.w_out.rows == 2 * d.feat
            && self.w_out.cols == d.phases
            && self.b_out.len() == d.phases
    }

    /// Identifier that changes whenever the parameters are mutated through
    /// [`tensors_mut`](Self::tensors_mut), [`load`](Self::load) or
    /// [`touch`](Self::touch).
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Marks the parameters as modified. Call after writing fields directly.
    pub fn touch(&mut self) {
        self.generation = fresh_generation();
    }

    /// All tensors in a fixed order: W_f, b_f, Ŵ heads, W^m heads, W_o, b_o.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.w_feat.data, &self.b_feat];
        v.extend(self.w_att.iter().map(|m| m.data.as_slice()));
        v.extend(self.w_val.iter().map(|m| m.data.as_slice()));
        v.push(&self.w_out.data);
        v.push(&self.b_out);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.generation = fresh_generation();
        let mut v: Vec<&mut [f64]> = vec![&mut self.w_feat.data, &mut self.b_feat];
        v.extend(self.w_att.iter_mut().map(|m| m.data.as_mut_slice()));
        v.extend(self.w_val.iter_mut().map(|m| m.data.as_mut_slice()));
        v.push(&mut self.w_out.data);
        v.push(&mut self.b_out);
        v
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_all_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&x| x == 0.0))
    }

    /// Deep copy for target networks.
    pub fn snapshot(&self) -> SharedParams {
        self.clone()
    }

    /// Overwrites this storage with `src`.
    pub fn load(&mut self, src: &SharedParams) {
        *self = src.clone();
        self.generation = fresh_generation();
    }
}

/// Per-scenario experiential weight tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTables {
    /// N_k × (1 + neighbors); column 0 weights the agent itself.
    pub int: Mat,
    /// N_k × D
    pub fea: Mat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperientialWeights {
    pub tables: Vec<ScenarioTables>,
}

impl ExperientialWeights {
    /// All-ones tables, so the weighting starts as the identity.
    pub fn ones(d: &Dims, scenario_sizes: &[usize]) -> Self {
        ExperientialWeights {
            tables: scenario_sizes
                .iter()
                .map(|&n| ScenarioTables {
                    int: Mat::filled(n, d.nodes(), 1.0),
                    fea: Mat::filled(n, d.feat, 1.0),
                })
                .collect(),
        }
    }

    pub fn scenario_sizes(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.int.rows).collect()
    }
}

/// Seeded parameter initialization.
pub fn init_params(
    seed: u64,
    dims: &Dims,
    scenario_sizes: &[usize],
) -> (SharedParams, ExperientialWeights) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        SharedParams::random(dims, &mut rng),
        ExperientialWeights::ones(dims, scenario_sizes),
    )
}
