//! Multi-scenario traffic signal control with experiential weights.
//!
//! Modules:
//! - [`simnet`]: scenario files, a point-queue network simulator and the
//!   intersection standardization used for observations and actions.
//! - [`qkernel`]: the Q-network with hand-written backward pass, Adam and
//!   checkpoints.
//! - [`agent`]: phase masking and epsilon-greedy selection.
//! - [`trainer`]: replay buffer and the co-training loop.
//! - [`baselines`]: fixed-time control and MaxPressure.
//! - [`xscen`]: cross-scenario neighbor selection.
//! - [`evalkit`]: vehicle metrics, evaluation rollouts and embedding dumps.

pub mod agent;
pub mod baselines;
pub mod evalkit;
pub mod qkernel;
pub mod simnet;
pub mod trainer;
pub mod xscen;

pub use agent::{epsilon_at, select_action, AgentError, DecayUnit, PolicyConfig};
pub use evalkit::{compute_metrics, run_episode, EvalError, MetricsReport, Policy, VehicleLog};
pub use qkernel::{Checkpoint, Dims, ExperientialWeights, KernelError, SharedParams};
pub use simnet::{
    load_scenario, parse_scenario, Network, Observation, ScenarioSpec, SimError, SimState,
};
pub use trainer::{train, Ablation, SharedCadence, TrainConfig, TrainError, Trainer};
