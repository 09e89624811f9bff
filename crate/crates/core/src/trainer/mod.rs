//! Experience replay and the co-training loop.
//!
//! Each decision step every agent of every scenario acts, the simulators
//! advance, transitions are stored, and each scenario's experiential tables
//! take one step on a batch drawn from that scenario alone. The shared
//! network is updated from batches that weight scenarios equally, by
//! default once per episode.

mod learner;
mod plan;
mod replay;
mod train;

pub use learner::{
    loss_and_grads, sync_target, td_targets, update_embeddings, update_shared, Model,
};
pub use plan::{NodePlan, NodeRef};
pub use replay::{ReplayBuffer, Transition};
pub use train::{train, EpisodeRecord, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, PolicyConfig};
use crate::qkernel::{AdamConfig, Dims, KernelError, TableMask};
use crate::simnet::{SimError, DEFAULT_NEIGHBORS};
use crate::xscen::CROSS_NEIGHBORS;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("batch mixes scenarios: expected {expected}, found {found}")]
    MixedScenarioBatch { expected: usize, found: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

/// When the shared network is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedCadence {
    /// Once at the end of every episode.
    EpisodeEnd,
    /// After every `n`-th decision step.
    EveryNSteps(u32),
}

/// Components switched off for ablation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Separate shared parameters per scenario.
    pub no_cotrain: bool,
    /// Freeze both experiential tables at ones.
    pub no_experiential: bool,
    pub no_intersection_wise: bool,
    pub no_feature_wise: bool,
}

impl Ablation {
    /// Which experiential tables receive updates.
    pub fn table_mask(&self) -> TableMask {
        TableMask {
            int: !(self.no_experiential || self.no_intersection_wise),
            fea: !(self.no_experiential || self.no_feature_wise),
        }
    }

    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.no_cotrain {
            parts.push("no-cotrain");
        }
        if self.no_experiential {
            parts.push("no-experiential");
        }
        if self.no_intersection_wise {
            parts.push("no-intersection-wise");
        }
        if self.no_feature_wise {
            parts.push("no-feature-wise");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Decision steps per episode.
    pub steps: usize,
    pub batch: usize,
    pub gamma: f64,
    /// Target network sync period, in episodes.
    pub target_sync: usize,
    /// Transitions kept per scenario.
    pub replay_capacity: usize,
    /// Embedding update every this many decision steps.
    pub embed_every: usize,
    pub shared_cadence: SharedCadence,
    pub policy: PolicyConfig,
    pub adam: AdamConfig,
    /// Network widths; the neighbor count is derived from `xscen`.
    pub feat: usize,
    pub latent: usize,
    pub heads: usize,
    pub ablation: Ablation,
    /// Append cross-scenario neighbors.
    pub xscen: bool,
    pub cross_neighbors: usize,
    /// Step scenarios on the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Greedy evaluation rollout after every episode.
    pub evaluate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 200,
            steps: 240,
            batch: 20,
            gamma: 0.95,
            target_sync: 5,
            replay_capacity: 10_000,
            embed_every: 1,
            shared_cadence: SharedCadence::EpisodeEnd,
            policy: PolicyConfig::default(),
            adam: AdamConfig::default(),
            feat: 16,
            latent: 32,
            heads: 1,
            ablation: Ablation::default(),
            xscen: false,
            cross_neighbors: CROSS_NEIGHBORS,
            parallel: false,
            evaluate: true,
        }
    }
}

impl TrainConfig {
    pub fn dims(&self) -> Dims {
        Dims {
            feat: self.feat,
            latent: self.latent,
            heads: self.heads,
            neighbors: DEFAULT_NEIGHBORS + if self.xscen { self.cross_neighbors } else { 0 },
            ..Dims::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.episodes == 0 || self.steps == 0 || self.batch == 0 {
            return bad("episodes, steps and batch must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.target_sync == 0 || self.replay_capacity == 0 || self.embed_every == 0 {
            return bad("target_sync, replay_capacity and embed_every must be positive");
        }
        if self.shared_cadence == SharedCadence::EveryNSteps(0) {
            return bad("shared update step interval must be positive");
        }
        if self.feat == 0 || self.latent == 0 || self.heads == 0 {
            return bad("network widths must be positive");
        }
        if !self.policy.is_valid() {
            return bad("epsilon schedule out of range");
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.xscen && self.cross_neighbors == 0 {
            return bad("cross_neighbors must be positive with xscen");
        }
        Ok(())
    }
}
