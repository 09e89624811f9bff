use crate::qkernel::{
    backward_into, forward_rows, AdamConfig, AdamState, Checkpoint, Dims, EmbeddingAdam,
    ExperientialWeights, ForwardCache, GradTargets, GradientSet, SharedParams, TableMask,
};
use crate::simnet::Observation;

use super::replay::Transition;
use super::TrainError;

/// Online and target networks, experiential tables and optimizer state.
///
/// `online` holds one parameter set when scenarios are co-trained, or one
/// per scenario otherwise.
#[derive(Debug, Clone)]
pub struct Model {
    pub dims: Dims,
    pub online: Vec<SharedParams>,
    pub target: Vec<SharedParams>,
    pub emb: ExperientialWeights,
    pub shared_adam: Vec<AdamState>,
    pub emb_adam: EmbeddingAdam,
    pub adam: AdamConfig,
}

impl Model {
    pub fn new(
        dims: Dims,
        online: Vec<SharedParams>,
        emb: ExperientialWeights,
        adam: AdamConfig,
    ) -> Self {
        let target = online.clone();
        let shared_adam = online.iter().map(AdamState::new).collect();
        let emb_adam = EmbeddingAdam::new(&emb);
        Model {
            dims,
            online,
            target,
            emb,
            shared_adam,
            emb_adam,
            adam,
        }
    }

    /// Restores parameters, tables and optimizer moments. The Adam settings
    /// come from the recorded configuration when present.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Self {
        let adam = ckpt
            .meta
            .get("config")
            .and_then(|c| c.get("adam"))
            .and_then(|a| serde_json::from_value(a.clone()).ok())
            .unwrap_or_default();
        Model {
            dims: ckpt.dims,
            online: ckpt.online.clone(),
            target: ckpt.target.clone(),
            emb: ckpt.emb.clone(),
            shared_adam: ckpt.shared_adam.clone(),
            emb_adam: ckpt.emb_adam.clone(),
            adam,
        }
    }

    pub fn theta_index(&self, k: usize) -> usize {
        if self.online.len() == 1 {
            0
        } else {
            k
        }
    }

    pub fn online_for(&self, k: usize) -> &SharedParams {
        &self.online[self.theta_index(k)]
    }

    pub fn target_for(&self, k: usize) -> &SharedParams {
        &self.target[self.theta_index(k)]
    }

    fn run(
        &self,
        params: &SharedParams,
        k: usize,
        i: usize,
        obs: &[Observation],
    ) -> Result<(Vec<f64>, ForwardCache), TrainError> {
        let t = &self.emb.tables[k];
        Ok(forward_rows(
            params,
            k,
            i,
            t.int.row(i),
            t.fea.row(i),
            &obs[0],
            &obs[1..],
        )?)
    }

    /// Online Q-values; `obs` is self first, then neighbors.
    pub fn q_values(&self, k: usize, i: usize, obs: &[Observation]) -> Result<Vec<f64>, TrainError> {
        Ok(self.run(self.online_for(k), k, i, obs)?.0)
    }

    /// Online forward pass with its cache.
    pub fn forward_online(
        &self,
        k: usize,
        i: usize,
        obs: &[Observation],
    ) -> Result<ForwardCache, TrainError> {
        Ok(self.run(self.online_for(k), k, i, obs)?.1)
    }

    pub fn target_q_values(
        &self,
        k: usize,
        i: usize,
        obs: &[Observation],
    ) -> Result<Vec<f64>, TrainError> {
        Ok(self.run(self.target_for(k), k, i, obs)?.0)
    }
}

/// `y = r + γ · max over valid phases of Q_target(o')`.
pub fn td_targets(batch: &[&Transition], model: &Model, gamma: f64) -> Result<Vec<f64>, TrainError> {
    batch
        .iter()
        .map(|t| {
            let q = model.target_q_values(t.scenario, t.intersection, &t.next_obs)?;
            let best = q
                .iter()
                .zip(&t.next_valid)
                .filter(|(_, &ok)| ok)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            if !best.is_finite() {
                return Err(TrainError::Agent(crate::agent::AgentError::NoValidPhase));
            }
            Ok(t.reward + gamma * best)
        })
        .collect()
}

/// Mean of `½ (Q(o)[a] − y)²` over the batch and its gradient; targets are
/// constants.
pub fn loss_and_grads(
    batch: &[&Transition],
    model: &Model,
    gamma: f64,
    targets: GradTargets,
) -> Result<(f64, GradientSet), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBuffer);
    }
    let theta = model.theta_index(batch[0].scenario);
    if let Some(t) = batch.iter().find(|t| model.theta_index(t.scenario) != theta) {
        return Err(TrainError::MixedScenarioBatch {
            expected: batch[0].scenario,
            found: t.scenario,
        });
    }
    let params = &model.online[theta];
    let ys = td_targets(batch, model, gamma)?;
    let n = batch.len() as f64;
    let mut grads = GradientSet::zeros(&model.dims);
    let mut loss = 0.0;
    let mut dq = vec![0.0; model.dims.phases];
    for (t, y) in batch.iter().zip(ys) {
        let (q, cache) = model.run(params, t.scenario, t.intersection, &t.obs)?;
        let err = q[t.action] - y;
        loss += 0.5 * err * err / n;
        dq.fill(0.0);
        dq[t.action] = err / n;
        backward_into(params, &cache, &dq, targets, &mut grads)?;
    }
    Ok((loss, grads))
}

/// Adam step on scenario `k`'s experiential tables only. Returns the batch
/// loss, or `None` when both tables are frozen.
pub fn update_embeddings(
    model: &mut Model,
    k: usize,
    batch: &[&Transition],
    gamma: f64,
    mask: TableMask,
) -> Result<Option<f64>, TrainError> {
    if let Some(t) = batch.iter().find(|t| t.scenario != k) {
        return Err(TrainError::MixedScenarioBatch {
            expected: k,
            found: t.scenario,
        });
    }
    if !mask.int && !mask.fea {
        return Ok(None);
    }
    let (loss, grads) = loss_and_grads(batch, model, gamma, GradTargets::EMBEDDINGS)?;
    let adam = model.adam;
    model
        .emb_adam
        .step(&adam, &mut model.emb, &grads, Some(k), mask);
    Ok(Some(loss))
}

/// Adam step on the shared parameters the batch's scenarios map to.
pub fn update_shared(model: &mut Model, batch: &[&Transition], gamma: f64) -> Result<f64, TrainError> {
    let (loss, grads) = loss_and_grads(batch, model, gamma, GradTargets::SHARED)?;
    let theta = model.theta_index(batch[0].scenario);
    let adam = model.adam;
    model.shared_adam[theta].step(&adam, &mut model.online[theta], &grads.shared);
    Ok(loss)
}

/// Copies every online parameter set into its target.
pub fn sync_target(model: &mut Model) {
    for (t, o) in model.target.iter_mut().zip(&model.online) {
        t.load(o);
    }
}
