//! Synchronous PPO training over parallel environments.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lightpath_core::exec::{self, Execution};
use lightpath_core::{Env, EpisodeConfig, PathTable, Termination};

use crate::checkpoint::Checkpoint;
use crate::error::{AgentError, Result};
use crate::gnn::{ActorCritic, GnnConfig};
use crate::observation::{encode_observation, GraphBatch, GraphObservation, ObservationSpec};
use crate::ppo::{ppo_update, sample_action, Adam, PpoConfig, Transition, TrajectoryBuffer, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub gnn: GnnConfig,
    /// Evaluation episode length; training episodes are `scale_factor` of it.
    pub eval_requests: usize,
    pub termination: Termination,
    pub request_gbps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            gnn: GnnConfig::default(),
            eval_requests: EpisodeConfig::EVAL_REQUESTS,
            termination: Termination::FixedLength,
            request_gbps: 100.0,
        }
    }
}

impl TrainConfig {
    pub fn episode(&self, seed: u64) -> EpisodeConfig {
        let mut ep = EpisodeConfig::scaled(self.eval_requests, self.ppo.scale_factor, seed);
        ep.termination = self.termination;
        ep.request_gbps = self.request_gbps;
        ep
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.gnn.validate().map_err(AgentError::Config)?;
        self.episode(0).validate()?;
        Ok(())
    }
}

/// Episode seed for environment `env`'s `episode`-th episode.
pub fn episode_seed(base: u64, env: usize, episode: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ env as u64) ^ episode)
}

/// Learning-curve sample for one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub update: usize,
    pub env_steps: u64,
    /// Episodes that ended during this update.
    pub episodes: usize,
    pub mean_accepted: Option<f64>,
    pub std_accepted: Option<f64>,
    pub stats: UpdateStats,
}

struct Worker {
    env: Env,
    rng: ChaCha8Rng,
    obs: GraphObservation,
    episodes: u64,
}

struct StepRecord {
    transition: Transition,
    finished: Option<usize>,
}

pub struct Trainer {
    table: Arc<PathTable>,
    config: TrainConfig,
    spec: ObservationSpec,
    model: ActorCritic,
    adam: Adam,
    workers: Vec<Worker>,
    learner_rng: ChaCha8Rng,
    execution: Execution,
    update: usize,
    env_steps: u64,
    curve: Vec<CurvePoint>,
}

impl Trainer {
    pub fn new(table: Arc<PathTable>, config: TrainConfig, execution: Execution) -> Result<Self> {
        config.validate()?;
        let spec = ObservationSpec::for_table(&table, config.gnn.capacity_features);
        let seed = config.ppo.seed;
        let model = ActorCritic::new(config.gnn.clone(), spec, seed);
        let adam = Adam::new(model.params(), config.ppo.adam_eps);
        let workers = (0..config.ppo.num_envs)
            .map(|i| {
                let env = Env::new(table.clone(), config.episode(episode_seed(seed, i, 0)))?;
                let obs = encode_observation(&env, &spec, config.ppo.action_masking);
                Ok(Worker {
                    env,
                    rng: ChaCha8Rng::seed_from_u64(episode_seed(seed ^ 0xA5A5, i, u64::MAX)),
                    obs,
                    episodes: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            table,
            spec,
            model,
            adam,
            workers,
            learner_rng: ChaCha8Rng::seed_from_u64(episode_seed(seed, usize::MAX, 0)),
            execution,
            update: 0,
            env_steps: 0,
            curve: Vec::new(),
            config,
        })
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn curve(&self) -> &[CurvePoint] {
        &self.curve
    }

    pub fn updates_done(&self) -> usize {
        self.update
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.model,
            &self.config.ppo,
            &self.table,
            self.config.request_gbps,
            self.update,
            self.env_steps,
        )
    }

    /// Steps every environment `rollout_length` times with the current parameters.
    fn collect(&mut self) -> (TrajectoryBuffer, Vec<usize>) {
        let steps = self.config.ppo.rollout_length;
        let n = self.workers.len();
        let mut per_env: Vec<Vec<Transition>> = (0..n).map(|_| Vec::with_capacity(steps)).collect();
        let mut finished = Vec::new();
        let seed = self.config.ppo.seed;
        let masking = self.config.ppo.action_masking;
        for _ in 0..steps {
            let (lp, values) = {
                let obs: Vec<&GraphObservation> = self.workers.iter().map(|w| &w.obs).collect();
                let batch = GraphBatch::from_observations(&obs, &self.table);
                self.model.evaluate(&batch)
            };
            let rows: Vec<(&[f64], f64)> = (0..n).map(|i| (lp.row(i), values[i])).collect();
            let spec = self.spec;
            let config = &self.config;
            let records = exec::zip_map(self.execution, &mut self.workers, &rows, |i, w, &(row, value)| {
                let action = sample_action(row, &w.obs.mask, &mut w.rng);
                let result = match action {
                    Some(flat) => {
                        let a = lightpath_core::Action::new(flat / spec.channels, flat % spec.channels);
                        w.env.step(a)
                    }
                    None => w.env.block(),
                };
                let log_prob = action.map_or(0.0, |a| row[a]);
                let mut done_count = None;
                if result.done {
                    done_count = Some(w.env.state().accepted());
                    w.episodes += 1;
                    let next = config.episode(episode_seed(seed, i, w.episodes));
                    w.env.reset(next.seed);
                }
                let next_obs = encode_observation(&w.env, &spec, masking);
                let obs = std::mem::replace(&mut w.obs, next_obs);
                StepRecord {
                    transition: Transition {
                        obs,
                        action,
                        log_prob,
                        reward: result.reward,
                        value,
                        done: result.done,
                    },
                    finished: done_count,
                }
            });
            for (i, r) in records.into_iter().enumerate() {
                finished.extend(r.finished);
                per_env[i].push(r.transition);
            }
        }
        let last_values = {
            let obs: Vec<&GraphObservation> = self.workers.iter().map(|w| &w.obs).collect();
            let batch = GraphBatch::from_observations(&obs, &self.table);
            self.model.evaluate(&batch).1
        };
        self.env_steps += (steps * n) as u64;
        let buffer = TrajectoryBuffer {
            envs: n,
            steps,
            transitions: per_env.into_iter().flatten().collect(),
            last_values,
        };
        (buffer, finished)
    }

    /// One rollout plus one PPO update; returns the new curve point.
    pub fn step(&mut self) -> Result<&CurvePoint> {
        let (buffer, finished) = self.collect();
        let stats = ppo_update(
            &mut self.model,
            &mut self.adam,
            &self.table,
            &buffer,
            &self.config.ppo,
            self.update,
            &mut self.learner_rng,
        )?;
        let (mean, std) = if finished.is_empty() {
            (None, None)
        } else {
            let xs: Vec<f64> = finished.iter().map(|&a| a as f64).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
            (Some(m), Some(v.sqrt()))
        };
        self.update += 1;
        self.curve.push(CurvePoint {
            update: self.update,
            env_steps: self.env_steps,
            episodes: finished.len(),
            mean_accepted: mean,
            std_accepted: std,
            stats,
        });
        Ok(self.curve.last().expect("just pushed"))
    }

    /// Runs every remaining update, calling `progress` after each.
    pub fn train(&mut self, mut progress: impl FnMut(&CurvePoint)) -> Result<()> {
        while self.update < self.config.ppo.num_updates() {
            let point = self.step()?;
            progress(point);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lightpath_core::{NsrModel, PathOrdering, Topology, TransmissionConfig};

    fn table() -> Arc<PathTable> {
        let topo = Topology::ring(4, 500.0).unwrap();
        Arc::new(
            PathTable::build(
                &topo,
                2,
                PathOrdering::Hops,
                &NsrModel::PerKm(2e-4),
                &TransmissionConfig::with_channels(3),
            )
            .unwrap(),
        )
    }

    fn config() -> TrainConfig {
        TrainConfig {
            ppo: PpoConfig {
                num_envs: 3,
                rollout_length: 8,
                update_epochs: 2,
                minibatches: 2,
                total_timesteps: 3 * 8 * 4,
                lr: 1e-3,
                seed: 17,
                ..PpoConfig::default()
            },
            gnn: GnnConfig {
                latent: 8,
                rounds: 1,
                ..GnnConfig::default()
            },
            eval_requests: 50,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = |exec| {
            let mut t = Trainer::new(table(), config(), exec).unwrap();
            t.train(|_| {}).unwrap();
            (t.model().params().clone(), t.curve().to_vec())
        };
        let (pa, ca) = run(Execution::Sequential);
        let (pb, cb) = run(Execution::Sequential);
        let (pc, cc) = run(Execution::Parallel);
        assert_eq!(ca.len(), 4);
        assert_eq!(pa, pb);
        assert_eq!(ca, cb);
        assert_eq!(pa, pc);
        assert_eq!(ca, cc);
        assert_ne!(pa, ActorCritic::new(config().gnn, ObservationSpec::for_table(&table(), true), 17).params().clone());
    }

    #[test]
    fn episodes_are_counted() {
        let mut cfg = config();
        cfg.eval_requests = 25;
        cfg.ppo.scale_factor = 0.2;
        let mut t = Trainer::new(table(), cfg, Execution::Sequential).unwrap();
        let p = t.step().unwrap().clone();
        // 5-request episodes, 8 steps per env: one finished episode per env
        assert_eq!(p.episodes, 3);
        assert_eq!(p.env_steps, 24);
        assert!(p.mean_accepted.unwrap() <= 5.0);
    }

    #[test]
    fn seeds_differ_across_envs_and_episodes() {
        let mut seen = std::collections::HashSet::new();
        for e in 0..50 {
            for j in 0..50 {
                assert!(seen.insert(episode_seed(7, e, j)));
            }
        }
    }
}
