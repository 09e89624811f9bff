//! Deterministic point-queue traffic simulator.
//!
//! Vehicles traverse links in fixed free-flow time, then wait in a FIFO
//! queue for their movement at the downstream intersection. A movement
//! discharges at its approach link's saturation rate while the active
//! phase serves it. Right turns are uncontrolled.

mod scenario;
mod sim;
mod standardize;
pub mod synth;

pub use scenario::{
    load_scenario, parse_scenario, ArmSpec, BoundarySpec, FlowSpec, IntersectionSpec, Link,
    Network, RouteMove, ScenarioSpec, DEFAULT_NEIGHBORS,
};
pub use sim::{Observation, SimOptions, SimState, VehicleCounts, REWARD_WEIGHT};
pub use standardize::{
    nearest_neighbors, standardize_intersection, Neighbor, StdIntersection, Turn, MOVEMENTS,
    NUM_PHASES, OBS_DIM, PHASE_TABLE,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown intersection {0}")]
    UnknownIntersection(u32),
    #[error("phase {phase} is not valid at intersection index {intersection}")]
    InvalidPhase { intersection: usize, phase: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}
