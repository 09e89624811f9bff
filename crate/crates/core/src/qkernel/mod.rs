//! The Q-network: shared parameters, experiential weight tables, the
//! forward/backward passes and Adam.

mod adam;
mod checkpoint;
mod network;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, EmbeddingAdam, OptimizerState, TableAdam, TableMask};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{
    backward, backward_into, forward, forward_rows, EmbRowGrad, ForwardCache, GradTargets,
    GradientSet,
};
pub use params::{init_params, Dims, ExperientialWeights, ScenarioTables, SharedParams};
pub use tensor::{dot, Mat};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} index {index} out of range")]
    OutOfRange { what: &'static str, index: usize },
    #[error("forward cache is stale: parameters changed since the forward pass")]
    StaleCache,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
