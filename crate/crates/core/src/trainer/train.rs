use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learner::{sync_target, update_embeddings, update_shared, Model};
use super::plan::NodePlan;
use super::replay::{ReplayBuffer, Transition};
use super::{SharedCadence, TrainConfig, TrainError};
use crate::agent::{epsilon_at, select_action, DecayUnit};
use crate::evalkit::{greedy_rollout, sim_seed, EvalError, MetricsReport};
use crate::qkernel::{Checkpoint, ExperientialWeights, RngState, SharedParams};
use crate::simnet::{Network, Observation, ScenarioSpec, SimError, SimOptions, SimState};
use crate::xscen::{build_cross_map, CrossNeighborMap};

/// Stream reserved for parameter initialization.
const INIT_STREAM: u64 = u64::MAX;
/// Offset mixed into the seed of greedy evaluation rollouts.
const EVAL_SALT: u64 = 0x5EED_E7A1;

/// One line of the metrics log: a scenario's results for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub scenario: usize,
    pub scenario_id: usize,
    pub mode: String,
    /// Exploration rate at the end of the episode.
    pub epsilon: f64,
    /// Mean training reward per agent and step.
    pub train_reward: f64,
    pub loss_mean: Option<f64>,
    pub embed_loss_mean: Option<f64>,
    pub shared_updates: usize,
    pub embed_updates: usize,
    pub target_synced: bool,
    /// Greedy evaluation with frozen parameters.
    pub eval: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub records: Vec<EpisodeRecord>,
}

/// Training state for a set of co-trained scenarios.
#[derive(Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    seed: u64,
    nets: Vec<Arc<Network>>,
    model: Model,
    buffer: ReplayBuffer,
    learner_rng: ChaCha8Rng,
    explore_rngs: Vec<ChaCha8Rng>,
    plan: NodePlan,
    cross: Option<CrossNeighborMap>,
    last_obs: Option<Vec<Vec<Observation>>>,
    episodes_done: usize,
    global_step: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn eval_err(e: EvalError) -> TrainError {
    match e {
        EvalError::Train(t) => t,
        EvalError::Sim(s) => TrainError::Sim(s),
        EvalError::Kernel(k) => TrainError::Kernel(k),
        EvalError::Agent(a) => TrainError::Agent(a),
        other => TrainError::Config(other.to_string()),
    }
}

impl Trainer {
    pub fn new(specs: &[ScenarioSpec], cfg: &TrainConfig, seed: u64) -> Result<Self, TrainError> {
        cfg.validate()?;
        if specs.is_empty() {
            return Err(TrainError::Config("at least one scenario is required".into()));
        }
        let nets: Vec<Arc<Network>> = specs
            .iter()
            .map(|s| Network::new(s.clone()).map(Arc::new))
            .collect::<Result<_, _>>()?;
        if cfg.xscen && nets.len() < 2 {
            return Err(TrainError::Config(
                "cross-scenario neighbors need at least two scenarios".into(),
            ));
        }
        let dims = cfg.dims();
        let sizes: Vec<usize> = nets.iter().map(|n| n.num_intersections()).collect();
        let mut init = stream_rng(seed, INIT_STREAM);
        let sets = if cfg.ablation.no_cotrain { nets.len() } else { 1 };
        let online: Vec<SharedParams> = (0..sets)
            .map(|_| SharedParams::random(&dims, &mut init))
            .collect();
        let model = Model::new(dims, online, ExperientialWeights::ones(&dims, &sizes), cfg.adam);
        Ok(Trainer {
            buffer: ReplayBuffer::new(nets.len(), cfg.replay_capacity),
            learner_rng: stream_rng(seed, 0),
            explore_rngs: (0..nets.len()).map(|k| stream_rng(seed, 1 + k as u64)).collect(),
            plan: NodePlan::new(&nets),
            cfg: cfg.clone(),
            seed,
            nets,
            model,
            cross: None,
            last_obs: None,
            episodes_done: 0,
            global_step: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn networks(&self) -> &[Arc<Network>] {
        &self.nets
    }

    pub fn plan(&self) -> &NodePlan {
        &self.plan
    }

    pub fn cross_map(&self) -> Option<&CrossNeighborMap> {
        self.cross.as_ref()
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn mode(&self) -> String {
        let mut m = self.cfg.ablation.tag();
        if self.cfg.xscen {
            m.push_str("+xscen");
        }
        m
    }

    fn epsilon(&self) -> f64 {
        let count = match self.cfg.policy.decay_unit {
            DecayUnit::DecisionStep => self.global_step,
            DecayUnit::Episode => self.episodes_done as u64,
        };
        epsilon_at(&self.cfg.policy, count)
    }

    fn refresh_cross(&mut self, snapshot: &[Vec<Observation>]) {
        let model = &self.model;
        let map = build_cross_map(
            |k| model.online_for(k).clone(),
            snapshot,
            self.cfg.cross_neighbors,
            self.episodes_done,
        );
        self.plan = NodePlan::with_cross(&self.nets, &map);
        self.cross = Some(map);
    }

    fn select_actions(
        &mut self,
        obs: &[Vec<Observation>],
        epsilon: f64,
    ) -> Result<Vec<Vec<usize>>, TrainError> {
        let (model, plan, nets) = (&self.model, &self.plan, &self.nets);
        let act = |k: usize, rng: &mut ChaCha8Rng| -> Result<Vec<usize>, TrainError> {
            nets[k]
                .std
                .iter()
                .enumerate()
                .map(|(i, std)| {
                    let q = model.q_values(k, i, &plan.gather(k, i, obs))?;
                    Ok(select_action(&q, &std.valid_phases, epsilon, rng)?)
                })
                .collect()
        };
        if self.cfg.parallel {
            self.explore_rngs
                .par_iter_mut()
                .enumerate()
                .map(|(k, rng)| act(k, rng))
                .collect()
        } else {
            self.explore_rngs
                .iter_mut()
                .enumerate()
                .map(|(k, rng)| act(k, rng))
                .collect()
        }
    }

    fn shared_step(&mut self) -> Result<Option<f64>, TrainError> {
        let b = self.cfg.batch;
        let gamma = self.cfg.gamma;
        if self.cfg.ablation.no_cotrain {
            let mut losses = Vec::new();
            for k in 0..self.nets.len() {
                if self.buffer.len(k) >= b {
                    let batch = self.buffer.sample_m1(k, b, &mut self.learner_rng)?;
                    losses.push(update_shared(&mut self.model, &batch, gamma)?);
                }
            }
            Ok((!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64))
        } else {
            let total: usize = (0..self.nets.len()).map(|k| self.buffer.len(k)).sum();
            if total < b {
                return Ok(None);
            }
            let batch = self.buffer.sample_m2(b, &mut self.learner_rng)?;
            Ok(Some(update_shared(&mut self.model, &batch, gamma)?))
        }
    }

    /// Runs one training episode followed by the greedy evaluation rollout.
    pub fn run_episode(&mut self) -> Result<Vec<EpisodeRecord>, TrainError> {
        let e = self.episodes_done;
        let k_count = self.nets.len();
        let episode_seed = self
            .seed
            .wrapping_add((e as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F));
        let mut sims: Vec<SimState> = self
            .nets
            .iter()
            .enumerate()
            .map(|(k, n)| {
                SimState::with_options(
                    n.clone(),
                    &SimOptions {
                        spawn_jitter_seed: Some(sim_seed(episode_seed, k)),
                    },
                )
            })
            .collect();
        let mut obs: Vec<Vec<Observation>> = sims.iter().map(|s| s.observe_all()).collect();
        if self.cfg.xscen {
            let snapshot = self.last_obs.take().unwrap_or_else(|| obs.clone());
            self.refresh_cross(&snapshot);
        }

        let mask = self.cfg.ablation.table_mask();
        let mut shared_losses = Vec::new();
        let mut embed_losses = vec![Vec::new(); k_count];
        let mut reward_sum = vec![0.0; k_count];
        let mut epsilon = self.epsilon();

        for t in 0..self.cfg.steps {
            epsilon = self.epsilon();
            let actions = self.select_actions(&obs, epsilon)?;
            let stepped: Vec<Result<(Vec<Observation>, Vec<f64>), SimError>> = if self.cfg.parallel {
                sims.par_iter_mut()
                    .zip(actions.par_iter())
                    .map(|(s, a)| s.step(a))
                    .collect()
            } else {
                sims.iter_mut().zip(&actions).map(|(s, a)| s.step(a)).collect()
            };
            let mut next_obs = Vec::with_capacity(k_count);
            let mut rewards = Vec::with_capacity(k_count);
            for r in stepped {
                let (o, rw) = r?;
                next_obs.push(o);
                rewards.push(rw);
            }
            for k in 0..k_count {
                for (i, std) in self.nets[k].std.iter().enumerate() {
                    reward_sum[k] += rewards[k][i];
                    self.buffer.push(Transition {
                        scenario: k,
                        intersection: i,
                        step: self.global_step,
                        obs: self.plan.gather(k, i, &obs),
                        action: actions[k][i],
                        reward: rewards[k][i],
                        next_obs: self.plan.gather(k, i, &next_obs),
                        next_valid: std.valid_phases,
                    });
                }
            }
            obs = next_obs;
            self.global_step += 1;

            if (t + 1) % self.cfg.embed_every == 0 && (mask.int || mask.fea) {
                for (k, losses) in embed_losses.iter_mut().enumerate() {
                    if self.buffer.len(k) >= self.cfg.batch {
                        let batch = self.buffer.sample_m1(k, self.cfg.batch, &mut self.learner_rng)?;
                        if let Some(l) =
                            update_embeddings(&mut self.model, k, &batch, self.cfg.gamma, mask)?
                        {
                            losses.push(l);
                        }
                    }
                }
            }
            if let SharedCadence::EveryNSteps(n) = self.cfg.shared_cadence {
                if (t + 1) % n as usize == 0 {
                    shared_losses.extend(self.shared_step()?);
                }
            }
        }
        if self.cfg.shared_cadence == SharedCadence::EpisodeEnd {
            shared_losses.extend(self.shared_step()?);
        }
        let synced = (e + 1) % self.cfg.target_sync == 0;
        if synced {
            sync_target(&mut self.model);
        }
        self.last_obs = Some(obs);
        self.episodes_done += 1;

        let eval = if self.cfg.evaluate {
            let reports = greedy_rollout(
                &self.model,
                &self.plan,
                &self.nets,
                self.cfg.steps,
                self.seed ^ EVAL_SALT,
                None,
            )
            .map_err(eval_err)?;
            reports.into_iter().map(Some).collect()
        } else {
            vec![None; k_count]
        };

        let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let mode = self.mode();
        Ok((0..k_count)
            .map(|k| EpisodeRecord {
                episode: e,
                scenario: k,
                scenario_id: self.nets[k].spec.scenario_id,
                mode: mode.clone(),
                epsilon,
                train_reward: reward_sum[k]
                    / (self.cfg.steps * self.nets[k].num_intersections()) as f64,
                loss_mean: mean(&shared_losses),
                embed_loss_mean: mean(&embed_losses[k]),
                shared_updates: shared_losses.len(),
                embed_updates: embed_losses[k].len(),
                target_synced: synced,
                eval: eval[k],
            })
            .collect())
    }

    /// Snapshot of parameters, optimizer state and RNG positions.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut rng = vec![RngState::capture(&self.learner_rng)];
        rng.extend(self.explore_rngs.iter().map(RngState::capture));
        let meta = serde_json::json!({
            "config": self.cfg,
            "seed": self.seed,
            "scenarios": self.nets.iter().map(|n| n.spec.scenario_id).collect::<Vec<_>>(),
            "cross_map": self.cross,
        });
        Checkpoint {
            dims: self.model.dims,
            scenario_sizes: self.model.emb.scenario_sizes(),
            online: self.model.online.clone(),
            target: self.model.target.clone(),
            emb: self.model.emb.clone(),
            shared_adam: self.model.shared_adam.clone(),
            emb_adam: self.model.emb_adam.clone(),
            rng,
            episodes_done: self.episodes_done,
            global_step: self.global_step,
            meta,
        }
    }
}

/// Trains for `cfg.episodes` episodes; `on_episode` receives each episode's
/// records as they are produced.
pub fn train(
    specs: &[ScenarioSpec],
    cfg: &TrainConfig,
    seed: u64,
    mut on_episode: impl FnMut(&[EpisodeRecord]),
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(specs, cfg, seed)?;
    let mut records = Vec::with_capacity(cfg.episodes * specs.len());
    for _ in 0..cfg.episodes {
        let recs = trainer.run_episode()?;
        on_episode(&recs);
        records.extend(recs);
    }
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        records,
    })
}
