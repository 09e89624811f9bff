//! Fixed-time control and MaxPressure.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::{SimState, StdIntersection, NUM_PHASES, PHASE_TABLE};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BaselineError {
    #[error("phase {0} is not valid here")]
    InvalidPhase(usize),
    #[error("no valid phase")]
    NoValidPhase,
    #[error("empty fixed-time schedule")]
    EmptySchedule,
}

/// Default green time per phase for round-robin plans.
pub const DEFAULT_FTC_SECONDS: u32 = 30;

/// Cyclic `(phase, duration_s)` plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FtcSchedule {
    entries: Vec<(usize, u32)>,
    cycle: u32,
}

impl FtcSchedule {
    pub fn new(entries: Vec<(usize, u32)>) -> Result<Self, BaselineError> {
        if entries.is_empty() || entries.iter().any(|&(_, d)| d == 0) {
            return Err(BaselineError::EmptySchedule);
        }
        let cycle = entries.iter().map(|&(_, d)| d).sum();
        Ok(FtcSchedule { entries, cycle })
    }

    /// Round-robin over the intersection's valid phases.
    pub fn round_robin(std: &StdIntersection, seconds: u32) -> Result<Self, BaselineError> {
        Self::new(std.valid_phase_indices().map(|p| (p, seconds)).collect())
    }

    pub fn cycle_length(&self) -> u32 {
        self.cycle
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }
}

/// Phase whose interval contains `t mod cycle`.
pub fn ftc_policy(schedule: &FtcSchedule, t: u32) -> usize {
    let mut rem = t % schedule.cycle;
    for &(phase, d) in &schedule.entries {
        if rem < d {
            return phase;
        }
        rem -= d;
    }
    unreachable!("remainder is below the cycle length")
}

/// Schedules for every intersection: the scenario's `ftc` block when
/// present, round-robin otherwise.
pub fn ftc_schedules(state: &SimState) -> Result<Vec<FtcSchedule>, BaselineError> {
    let net = state.network();
    net.std
        .iter()
        .zip(&net.spec.intersections)
        .map(|(std, spec)| match &spec.ftc {
            Some(plan) => FtcSchedule::new(plan.clone()),
            None => FtcSchedule::round_robin(std, DEFAULT_FTC_SECONDS),
        })
        .collect()
}

/// Σ over the phase's present movements of upstream minus downstream queue.
pub fn pressure(state: &SimState, i: usize, phase: usize) -> Result<i64, BaselineError> {
    let std = &state.network().std[i];
    if phase >= NUM_PHASES || !std.valid_phases[phase] {
        return Err(BaselineError::InvalidPhase(phase));
    }
    Ok(PHASE_TABLE[phase]
        .iter()
        .filter(|&&m| std.movement_present(m))
        .map(|&m| state.queue_len(i, m) as i64 - state.downstream_queue(i, m) as i64)
        .sum())
}

/// Valid phase of maximum pressure, ties to the lowest index.
pub fn max_pressure_policy(state: &SimState, i: usize) -> Result<usize, BaselineError> {
    let mut best: Option<(usize, i64)> = None;
    for p in state.network().std[i].valid_phase_indices() {
        let v = pressure(state, i, p)?;
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((p, v));
        }
    }
    best.map(|(p, _)| p).ok_or(BaselineError::NoValidPhase)
}
