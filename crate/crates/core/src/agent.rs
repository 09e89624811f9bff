//! Action selection: phase masking and epsilon-greedy exploration.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("no valid phase to choose from")]
    NoValidPhase,
}

/// What one decay step of epsilon counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayUnit {
    #[default]
    DecisionStep,
    Episode,
}

/// Multiplicative epsilon decay with a floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    #[serde(default)]
    pub decay_unit: DecayUnit,
    pub greedy: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            epsilon_start: 0.8,
            epsilon_min: 0.1,
            epsilon_decay: 0.999,
            decay_unit: DecayUnit::DecisionStep,
            greedy: false,
        }
    }
}

impl PolicyConfig {
    pub fn is_valid(&self) -> bool {
        0.0 <= self.epsilon_min
            && self.epsilon_min <= self.epsilon_start
            && self.epsilon_start <= 1.0
            && 0.0 < self.epsilon_decay
            && self.epsilon_decay <= 1.0
    }
}

/// `max(ε_min, ε_start · decay^step)`, where `step` counts `cfg.decay_unit`.
pub fn epsilon_at(cfg: &PolicyConfig, global_step: u64) -> f64 {
    if cfg.greedy {
        return 0.0;
    }
    let exp = i32::try_from(global_step).unwrap_or(i32::MAX);
    (cfg.epsilon_start * cfg.epsilon_decay.powi(exp)).max(cfg.epsilon_min)
}

/// Highest-valued valid phase; ties go to the lowest index.
pub fn greedy_action(q: &[f64], valid: &[bool]) -> Result<usize, AgentError> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(valid).enumerate() {
        if ok && best.map_or(true, |b| v > q[b]) {
            best = Some(a);
        }
    }
    best.ok_or(AgentError::NoValidPhase)
}

/// Uniform over valid phases with probability `epsilon`, greedy otherwise.
pub fn select_action<R: Rng + ?Sized>(
    q: &[f64],
    valid: &[bool],
    epsilon: f64,
    rng: &mut R,
) -> Result<usize, AgentError> {
    let n_valid = valid.iter().filter(|&&v| v).count();
    if n_valid == 0 {
        return Err(AgentError::NoValidPhase);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let pick = rng.gen_range(0..n_valid);
        return Ok(valid
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .nth(pick)
            .map(|(a, _)| a)
            .unwrap());
    }
    greedy_action(q, valid)
}
