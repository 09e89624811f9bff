use serde::{Deserialize, Serialize};

use super::network::GradientSet;
use super::params::{ExperientialWeights, SharedParams};
use super::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    #[inline]
    fn update(&self, p: &mut f64, m: &mut f64, v: &mut f64, g: f64, t: u64) {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        let m_hat = *m / (1.0 - self.beta1.powi(t as i32));
        let v_hat = *v / (1.0 - self.beta2.powi(t as i32));
        *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
    }
}

/// Dense Adam moments for one set of shared parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &SharedParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One Adam step. A gradient set that is exactly zero everywhere leaves
    /// parameters and moments untouched.
    pub fn step(&mut self, cfg: &AdamConfig, params: &mut SharedParams, grads: &SharedParams) {
        if grads.is_all_zero() {
            return;
        }
        self.t += 1;
        let t = self.t;
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for idx in 0..p.len() {
                cfg.update(&mut p[idx], &mut m[idx], &mut v[idx], g[idx], t);
            }
        }
    }
}

/// Row-lazy Adam moments for one scenario's experiential tables. Each row
/// keeps its own step count, so rows that receive no gradient keep their
/// values and moments exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableAdam {
    pub int_m: Mat,
    pub int_v: Mat,
    pub int_t: Vec<u64>,
    pub fea_m: Mat,
    pub fea_v: Mat,
    pub fea_t: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAdam {
    pub tables: Vec<TableAdam>,
}

/// Which experiential tables may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMask {
    pub int: bool,
    pub fea: bool,
}

impl TableMask {
    pub const BOTH: TableMask = TableMask { int: true, fea: true };
}

impl EmbeddingAdam {
    pub fn new(emb: &ExperientialWeights) -> Self {
        EmbeddingAdam {
            tables: emb
                .tables
                .iter()
                .map(|t| TableAdam {
                    int_m: Mat::zeros(t.int.rows, t.int.cols),
                    int_v: Mat::zeros(t.int.rows, t.int.cols),
                    int_t: vec![0; t.int.rows],
                    fea_m: Mat::zeros(t.fea.rows, t.fea.cols),
                    fea_v: Mat::zeros(t.fea.rows, t.fea.cols),
                    fea_t: vec![0; t.fea.rows],
                })
                .collect(),
        }
    }

    /// Applies the row gradients in `grads` whose scenario passes `only`
    /// (all scenarios when `None`).
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        emb: &mut ExperientialWeights,
        grads: &GradientSet,
        only: Option<usize>,
        mask: TableMask,
    ) {
        for (&(k, i), g) in &grads.rows {
            if only.is_some_and(|s| s != k) {
                continue;
            }
            let (table, state) = (&mut emb.tables[k], &mut self.tables[k]);
            if mask.int && g.int.iter().any(|&x| x != 0.0) {
                state.int_t[i] += 1;
                let t = state.int_t[i];
                let (p, m, v) = (
                    table.int.row_mut(i),
                    state.int_m.row_mut(i),
                    state.int_v.row_mut(i),
                );
                for c in 0..p.len() {
                    cfg.update(&mut p[c], &mut m[c], &mut v[c], g.int[c], t);
                }
            }
            if mask.fea && g.fea.iter().any(|&x| x != 0.0) {
                state.fea_t[i] += 1;
                let t = state.fea_t[i];
                let (p, m, v) = (
                    table.fea.row_mut(i),
                    state.fea_m.row_mut(i),
                    state.fea_v.row_mut(i),
                );
                for c in 0..p.len() {
                    cfg.update(&mut p[c], &mut m[c], &mut v[c], g.fea[c], t);
                }
            }
        }
    }
}

/// Adam state for shared parameters and experiential tables together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub shared: AdamState,
    pub emb: EmbeddingAdam,
}

impl OptimizerState {
    pub fn new(params: &SharedParams, emb: &ExperientialWeights) -> Self {
        OptimizerState {
            shared: AdamState::new(params),
            emb: EmbeddingAdam::new(emb),
        }
    }
}

/// Joint Adam step over shared parameters and every touched table row.
pub fn adam_step(
    cfg: &AdamConfig,
    params: &mut SharedParams,
    emb: &mut ExperientialWeights,
    grads: &GradientSet,
    state: &mut OptimizerState,
) {
    state.shared.step(cfg, params, &grads.shared);
    state.emb.step(cfg, emb, grads, None, TableMask::BOTH);
}
