//! Vehicle metrics, evaluation rollouts and embedding dumps.
//!
//! Vehicles still on the network when an episode ends are scored as if
//! they finished at the episode end.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{greedy_action, AgentError};
use crate::baselines::{ftc_policy, ftc_schedules, max_pressure_policy, BaselineError, FtcSchedule};
use crate::qkernel::{Checkpoint, ForwardCache, KernelError};
use crate::simnet::{Network, Observation, SimError, SimOptions, SimState, DEFAULT_NEIGHBORS};
use crate::trainer::{Model, NodePlan, TrainError};
use crate::xscen::CrossNeighborMap;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("checkpoint does not match the scenarios: {0}")]
    CheckpointMismatch(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleLog {
    pub id: usize,
    pub spawn_s: u32,
    /// `None` while the vehicle is still on the network.
    pub finish_s: Option<u32>,
    /// Seconds spent in queues.
    pub wait_s: u32,
    /// Unimpeded travel time of the route.
    pub free_flow_s: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_delay: f64,
    pub avg_trip_time: f64,
    pub avg_wait: f64,
    pub finished: usize,
    pub unfinished: usize,
}

/// Averages over every vehicle, with unfinished ones closed at
/// `episode_end`. An empty log gives an all-zero report.
pub fn compute_metrics(logs: &[VehicleLog], episode_end: u32) -> MetricsReport {
    if logs.is_empty() {
        return MetricsReport::default();
    }
    let (mut trip, mut delay, mut wait) = (0.0, 0.0, 0.0);
    let mut finished = 0;
    for v in logs {
        let end = match v.finish_s {
            Some(f) => {
                finished += 1;
                f
            }
            None => episode_end.max(v.spawn_s),
        };
        let t = f64::from(end - v.spawn_s);
        trip += t;
        delay += t - f64::from(v.free_flow_s);
        wait += f64::from(v.wait_s);
    }
    let n = logs.len() as f64;
    MetricsReport {
        avg_delay: delay / n,
        avg_trip_time: trip / n,
        avg_wait: wait / n,
        finished,
        unfinished: logs.len() - finished,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        if xs.is_empty() {
            return Stat::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

/// Mean and spread of reports from repeated runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub avg_delay: Stat,
    pub avg_trip_time: Stat,
    pub avg_wait: Stat,
}

pub fn summarize(reports: &[MetricsReport]) -> MetricsSummary {
    let col = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(f).collect::<Vec<_>>());
    MetricsSummary {
        runs: reports.len(),
        avg_delay: col(|r| r.avg_delay),
        avg_trip_time: col(|r| r.avg_trip_time),
        avg_wait: col(|r| r.avg_wait),
    }
}

/// Plain-text table of summaries, one row per label.
pub fn format_table(rows: &[(String, MetricsSummary)]) -> String {
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:>18}  {:>18}  {:>18}\n",
        "policy", "delay (s)", "trip time (s)", "wait (s)"
    );
    for (label, s) in rows {
        let cell = |st: Stat| format!("{:.2} ± {:.2}", st.mean, st.std);
        out.push_str(&format!(
            "{:<width$}  {:>18}  {:>18}  {:>18}\n",
            label,
            cell(s.avg_delay),
            cell(s.avg_trip_time),
            cell(s.avg_wait)
        ));
    }
    out
}

/// Spawn-jitter seed for scenario `k` of a run seeded with `seed`.
pub fn sim_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// A trained model together with the neighbor plan it was trained with.
#[derive(Debug, Clone)]
pub struct DualightPolicy {
    pub model: Model,
    pub plan: NodePlan,
}

impl DualightPolicy {
    /// Checks the checkpoint against the scenarios and rebuilds the
    /// neighbor plan, including recorded cross-scenario neighbors.
    pub fn from_checkpoint(ckpt: &Checkpoint, nets: &[Arc<Network>]) -> Result<Self, EvalError> {
        let sizes: Vec<usize> = nets.iter().map(|n| n.num_intersections()).collect();
        if sizes != ckpt.scenario_sizes {
            return Err(EvalError::CheckpointMismatch(format!(
                "checkpoint has scenario sizes {:?}, scenarios have {:?}",
                ckpt.scenario_sizes, sizes
            )));
        }
        let plan = if ckpt.dims.neighbors == DEFAULT_NEIGHBORS {
            NodePlan::new(nets)
        } else {
            let map: CrossNeighborMap = ckpt
                .meta
                .get("cross_map")
                .filter(|v| !v.is_null())
                .and_then(|v| serde_json::from_value(v.clone()).ok())
                .ok_or_else(|| {
                    EvalError::CheckpointMismatch(format!(
                        "{} neighbors per agent but no cross-scenario map recorded",
                        ckpt.dims.neighbors
                    ))
                })?;
            let plan = NodePlan::with_cross(nets, &map);
            if plan.neighbors(0, 0).len() != ckpt.dims.neighbors {
                return Err(EvalError::CheckpointMismatch(
                    "cross-scenario map width differs from the network".into(),
                ));
            }
            plan
        };
        Ok(DualightPolicy {
            model: Model::from_checkpoint(ckpt),
            plan,
        })
    }
}

/// Controllers available to [`run_episode`].
#[derive(Debug, Clone)]
pub enum Policy {
    Dualight(Box<DualightPolicy>),
    Ftc,
    MaxPressure,
    Random,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Dualight(_) => "dualight",
            Policy::Ftc => "ftc",
            Policy::MaxPressure => "maxpressure",
            Policy::Random => "random",
        }
    }
}

fn fresh_sims(nets: &[Arc<Network>], seed: u64) -> Vec<SimState> {
    nets.iter()
        .enumerate()
        .map(|(k, n)| {
            SimState::with_options(
                n.clone(),
                &SimOptions {
                    spawn_jitter_seed: Some(sim_seed(seed, k)),
                },
            )
        })
        .collect()
}

fn reports(sims: &[SimState]) -> Vec<MetricsReport> {
    sims.iter()
        .map(|s| compute_metrics(&s.vehicle_logs(), s.clock()))
        .collect()
}

/// Greedy lockstep rollout of all scenarios for `steps` decisions with the
/// model frozen. `hook` sees every forward pass as `(step, cache)` before
/// the step's actions are applied.
pub fn greedy_rollout(
    model: &Model,
    plan: &NodePlan,
    nets: &[Arc<Network>],
    steps: usize,
    seed: u64,
    mut hook: Option<&mut dyn FnMut(usize, &ForwardCache)>,
) -> Result<Vec<MetricsReport>, EvalError> {
    let mut sims = fresh_sims(nets, seed);
    let mut obs: Vec<Vec<Observation>> = sims.iter().map(|s| s.observe_all()).collect();
    for t in 0..steps {
        let mut actions = Vec::with_capacity(sims.len());
        for (k, net) in nets.iter().enumerate() {
            let mut acts = Vec::with_capacity(net.num_intersections());
            for (i, std) in net.std.iter().enumerate() {
                let cache = model.forward_online(k, i, &plan.gather(k, i, &obs))?;
                if let Some(h) = hook.as_mut() {
                    h(t, &cache);
                }
                acts.push(greedy_action(&cache.q, &std.valid_phases)?);
            }
            actions.push(acts);
        }
        for (k, sim) in sims.iter_mut().enumerate() {
            obs[k] = sim.step(&actions[k])?.0;
        }
    }
    Ok(reports(&sims))
}

/// One full episode of every scenario under `policy`; one report per
/// scenario. Deterministic in `seed`.
pub fn run_episode(
    nets: &[Arc<Network>],
    policy: &Policy,
    seed: u64,
) -> Result<Vec<MetricsReport>, EvalError> {
    let steps = nets.iter().map(|n| n.decision_steps()).max().unwrap_or(0);
    if let Policy::Dualight(p) = policy {
        return greedy_rollout(&p.model, &p.plan, nets, steps, seed, None);
    }
    let mut sims = fresh_sims(nets, seed);
    let schedules: Vec<Vec<FtcSchedule>> = match policy {
        Policy::Ftc => sims.iter().map(ftc_schedules).collect::<Result<_, _>>()?,
        _ => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..steps {
        for (k, sim) in sims.iter_mut().enumerate() {
            let actions: Vec<usize> = (0..sim.num_intersections())
                .map(|i| match policy {
                    Policy::Ftc => Ok(ftc_policy(&schedules[k][i], sim.clock())),
                    Policy::MaxPressure => max_pressure_policy(sim, i),
                    Policy::Random => {
                        let valid: Vec<usize> =
                            sim.network().std[i].valid_phase_indices().collect();
                        Ok(valid[rng.gen_range(0..valid.len())])
                    }
                    Policy::Dualight(_) => unreachable!(),
                })
                .collect::<Result<_, _>>()?;
            sim.step(&actions)?;
        }
    }
    Ok(reports(&sims))
}

/// Default decision-step window for [`dump_embeddings`].
pub const DUMP_WINDOW: (usize, usize) = (100, 110);

/// Writes the pre-output concatenated vector `[w_g, w_f]` of every agent at
/// every decision step in the inclusive `window`, tab separated with a
/// header. Returns the number of data rows.
pub fn dump_embeddings(
    ckpt: &Checkpoint,
    nets: &[Arc<Network>],
    window: (usize, usize),
    seed: u64,
    out: &mut dyn Write,
) -> Result<usize, EvalError> {
    let policy = DualightPolicy::from_checkpoint(ckpt, nets)?;
    let d = ckpt.dims.feat;
    let mut header = vec!["scenario".to_string(), "intersection".into(), "step".into()];
    header.extend((0..d).map(|c| format!("g{c}")));
    header.extend((0..d).map(|c| format!("f{c}")));
    writeln!(out, "{}", header.join("\t"))?;

    let mut rows = 0;
    let mut io_err: Option<std::io::Error> = None;
    let mut hook = |t: usize, cache: &ForwardCache| {
        if t < window.0 || t > window.1 || io_err.is_some() {
            return;
        }
        let mut line = format!("{}\t{}\t{}", cache.scenario, cache.intersection, t);
        for x in &cache.concat {
            line.push('\t');
            line.push_str(&x.to_string());
        }
        match writeln!(out, "{line}") {
            Ok(()) => rows += 1,
            Err(e) => io_err = Some(e),
        }
    };
    greedy_rollout(&policy.model, &policy.plan, nets, window.1 + 1, seed, Some(&mut hook))?;
    match io_err {
        Some(e) => Err(e.into()),
        None => Ok(rows),
    }
}
