//! Proximal policy optimization: advantages, the clipped loss, Adam and the
//! learning-rate schedule.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};
use crate::gnn::{ActorCritic, Params};
use crate::observation::{GraphBatch, GraphObservation};
use crate::tape::{Gradients, Matrix, Tape, Var};

use lightpath_core::PathTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub lr: f64,
    pub update_epochs: usize,
    pub rollout_length: usize,
    pub num_envs: usize,
    pub total_timesteps: u64,
    pub minibatches: usize,
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    pub warmup_fraction: f64,
    pub peak_multiplier: f64,
    pub end_fraction: f64,
    pub normalize_advantages: bool,
    pub action_masking: bool,
    /// Training episode length relative to the evaluation length.
    pub scale_factor: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.919,
            gae_lambda: 0.984,
            lr: 1.943e-5,
            update_epochs: 10,
            rollout_length: 150,
            num_envs: 100,
            total_timesteps: 200_000_000,
            minibatches: 4,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            warmup_fraction: 0.1,
            peak_multiplier: 2.0,
            end_fraction: 0.1,
            normalize_advantages: true,
            action_masking: true,
            scale_factor: 0.2,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn steps_per_update(&self) -> u64 {
        (self.rollout_length * self.num_envs) as u64
    }

    pub fn num_updates(&self) -> usize {
        (self.total_timesteps / self.steps_per_update().max(1)).max(1) as usize
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) || !unit(self.gae_lambda) {
            return Err(AgentError::Config("gamma and lambda must lie in (0, 1]".into()));
        }
        if self.update_epochs == 0
            || self.rollout_length == 0
            || self.num_envs == 0
            || self.minibatches == 0
            || self.total_timesteps == 0
        {
            return Err(AgentError::Config("counts must be at least 1".into()));
        }
        if self.minibatches > self.rollout_length * self.num_envs {
            return Err(AgentError::Config("more minibatches than samples".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.clip_eps > 0.0) {
            return Err(AgentError::Config("learning rate and clip ratio must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) || !(self.scale_factor > 0.0) {
            return Err(AgentError::Config("warmup fraction in [0, 1), scale factor > 0".into()));
        }
        Ok(())
    }
}

/// Linear warmup from the base rate to `peak_multiplier` times it over the
/// first `warmup_fraction` of updates, then cosine decay to `end_fraction`
/// times the base rate at the final update.
pub fn lr_schedule(update: usize, cfg: &PpoConfig) -> f64 {
    let total = cfg.num_updates() as f64;
    let warmup = (cfg.warmup_fraction * total).round();
    let peak = cfg.lr * cfg.peak_multiplier;
    let end = cfg.lr * cfg.end_fraction;
    let t = update as f64;
    if t < warmup {
        return cfg.lr + (peak - cfg.lr) * t / warmup;
    }
    let span = (total - warmup).max(1.0);
    let progress = ((t - warmup) / span).clamp(0.0, 1.0);
    end + (peak - end) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Generalized advantage estimates and return targets for one trajectory.
///
/// `dones[t]` marks that the episode ended with step `t`; `last_value` is the
/// value of the state following the final step.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "sequence lengths differ");
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { last_value } else { values[t + 1] };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// One environment step as seen by the learner.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: GraphObservation,
    /// Flat action index; `None` when no action was available.
    pub action: Option<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Rollout storage, environment-major.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    pub envs: usize,
    pub steps: usize,
    pub transitions: Vec<Transition>,
    pub last_values: Vec<f64>,
}

impl TrajectoryBuffer {
    pub fn is_full(&self) -> bool {
        self.transitions.len() == self.envs * self.steps && self.last_values.len() == self.envs
    }

    /// Advantages and returns in storage order.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        assert!(self.is_full(), "advantages need a full buffer");
        let mut adv = Vec::with_capacity(self.transitions.len());
        let mut ret = Vec::with_capacity(self.transitions.len());
        for (e, chunk) in self.transitions.chunks(self.steps).enumerate() {
            let r: Vec<f64> = chunk.iter().map(|t| t.reward).collect();
            let v: Vec<f64> = chunk.iter().map(|t| t.value).collect();
            let d: Vec<bool> = chunk.iter().map(|t| t.done).collect();
            let (a, g) = gae(&r, &v, &d, self.last_values[e], gamma, lambda);
            adv.extend(a);
            ret.extend(g);
        }
        (adv, ret)
    }
}

/// Samples a cell from a masked log-probability row; `None` if nothing is valid.
pub fn sample_action(log_probs: &[f64], mask: &[bool], rng: &mut ChaCha8Rng) -> Option<usize> {
    let last = mask.iter().rposition(|&m| m)?;
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, (&lp, &m)) in log_probs.iter().zip(mask).enumerate() {
        if m {
            cumulative += lp.exp();
            if u < cumulative {
                return Some(i);
            }
        }
    }
    Some(last)
}

/// Most probable valid cell, lowest index on ties.
pub fn greedy_action(log_probs: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&lp, &m)) in log_probs.iter().zip(mask).enumerate() {
        if m && best.is_none_or(|b| lp > log_probs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Minibatch inputs to the PPO objective.
#[derive(Debug, Clone)]
pub struct LossBatch<'o> {
    pub observations: Vec<&'o GraphObservation>,
    pub actions: Vec<Option<usize>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

/// Records the PPO objective; returns the scalar loss variable and statistics.
pub fn record_loss<'a>(
    model: &'a ActorCritic,
    tape: &mut Tape<'a>,
    params: &[Var],
    table: &PathTable,
    batch: &LossBatch<'_>,
    cfg: &PpoConfig,
) -> (Var, LossStats) {
    let n = batch.observations.len();
    let graphs = GraphBatch::from_observations(&batch.observations, table);
    let cells = graphs.k * graphs.channels;
    let f = model.forward(tape, params, &graphs);

    let acting: Vec<f64> = batch
        .actions
        .iter()
        .map(|a| if a.is_some() { 1.0 } else { 0.0 })
        .collect();
    let n_act = acting.iter().sum::<f64>().max(1.0);
    let index: Vec<usize> = batch.actions.iter().map(|a| a.unwrap_or(0)).collect();

    let logp = tape.pick(f.log_probs, Rc::new(index));
    let old = tape.leaf(Matrix::column(batch.old_log_probs.clone()));
    let diff = tape.sub(logp, old);
    let ratio = tape.exp(diff);
    let adv = Rc::new(Matrix::column(batch.advantages.clone()));
    let surr1 = tape.mul_const(ratio, adv.clone());
    let clipped = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    let surr2 = tape.mul_const(clipped, adv);
    let objective = tape.minimum(surr1, surr2);
    let weighted = tape.mul_const(objective, Rc::new(Matrix::column(acting.clone())));
    let summed = tape.sum(weighted);
    let policy_loss = tape.scale(summed, -1.0 / n_act);

    let mask = Rc::new(Matrix::from_vec(
        n,
        cells,
        graphs.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    ));
    let probs = tape.exp(f.log_probs);
    let probs = tape.mul_const(probs, mask);
    let plogp = tape.mul(probs, f.log_probs);
    let neg_entropy = tape.sum(plogp);
    let entropy = tape.scale(neg_entropy, -1.0 / n_act);

    let targets = tape.leaf(Matrix::column(batch.returns.clone()));
    let err = tape.sub(f.value, targets);
    let sq = tape.square(err);
    let mse = tape.mean(sq);
    let value_loss = tape.scale(mse, 0.5);

    let vterm = tape.scale(value_loss, cfg.vf_coef);
    let eterm = tape.scale(entropy, -cfg.ent_coef);
    let partial = tape.add(policy_loss, vterm);
    let total = tape.add(partial, eterm);

    let ratios = &tape.value(ratio).data;
    let diffs = &tape.value(diff).data;
    let (mut clipped_count, mut kl) = (0.0, 0.0);
    for ((r, d), w) in ratios.iter().zip(diffs).zip(&acting) {
        if *w > 0.0 {
            if (r - 1.0).abs() > cfg.clip_eps {
                clipped_count += 1.0;
            }
            kl += (r - 1.0) - d;
        }
    }
    let stats = LossStats {
        total: tape.value(total).data[0],
        policy: tape.value(policy_loss).data[0],
        value: tape.value(value_loss).data[0],
        entropy: tape.value(entropy).data[0],
        clip_fraction: clipped_count / n_act,
        approx_kl: kl / n_act,
    };
    (total, stats)
}

/// Loss value and parameter gradients for one minibatch.
pub fn loss_and_gradients(
    model: &ActorCritic,
    table: &PathTable,
    batch: &LossBatch<'_>,
    cfg: &PpoConfig,
) -> (LossStats, Vec<Matrix>) {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let (loss, stats) = record_loss(model, &mut tape, &params, table, batch, cfg);
    let grads = tape.backward(loss);
    (stats, collect_grads(&grads, &params, model.params()))
}

fn collect_grads(grads: &Gradients, vars: &[Var], params: &Params) -> Vec<Matrix> {
    vars.iter()
        .zip(&params.values)
        .map(|(v, p)| grads.get(*v).cloned().unwrap_or_else(|| Matrix::zeros(p.rows, p.cols)))
        .collect()
}

/// Scales gradients in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads
            .iter_mut()
            .for_each(|g| g.data.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &Params, eps: f64) -> Self {
        let zeros: Vec<Matrix> = params
            .values
            .iter()
            .map(|p| Matrix::zeros(p.rows, p.cols))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &[Matrix], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .values
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Averages of the per-minibatch statistics of one update.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub lr: f64,
    pub loss: LossStats,
    pub grad_norm: f64,
}

/// Runs `update_epochs` passes of shuffled minibatch gradient steps.
pub fn ppo_update(
    model: &mut ActorCritic,
    adam: &mut Adam,
    table: &PathTable,
    buffer: &TrajectoryBuffer,
    cfg: &PpoConfig,
    update: usize,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let (mut adv, returns) = buffer.advantages(cfg.gamma, cfg.gae_lambda);
    if cfg.normalize_advantages {
        let acting: Vec<f64> = buffer
            .transitions
            .iter()
            .zip(&adv)
            .filter(|(t, _)| t.action.is_some())
            .map(|(_, a)| *a)
            .collect();
        if acting.len() > 1 {
            let mean = acting.iter().sum::<f64>() / acting.len() as f64;
            let var = acting.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / acting.len() as f64;
            let std = var.sqrt() + 1e-8;
            adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
        }
    }

    let lr = lr_schedule(update, cfg);
    let n = buffer.transitions.len();
    let size = n.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..n).collect();
    let mut sum = UpdateStats {
        lr,
        ..UpdateStats::default()
    };
    let mut count = 0.0;
    for _ in 0..cfg.update_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(size) {
            let batch = LossBatch {
                observations: chunk.iter().map(|&i| &buffer.transitions[i].obs).collect(),
                actions: chunk.iter().map(|&i| buffer.transitions[i].action).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.transitions[i].log_prob).collect(),
                advantages: chunk.iter().map(|&i| adv[i]).collect(),
                returns: chunk.iter().map(|&i| returns[i]).collect(),
            };
            let (stats, mut grads) = loss_and_gradients(model, table, &batch, cfg);
            if !stats.total.is_finite() {
                return Err(AgentError::NonFinite {
                    update,
                    detail: format!("{stats:?}"),
                });
            }
            let norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            adam.step(model.params_mut(), &grads, lr);
            let l = &mut sum.loss;
            l.total += stats.total;
            l.policy += stats.policy;
            l.value += stats.value;
            l.entropy += stats.entropy;
            l.clip_fraction += stats.clip_fraction;
            l.approx_kl += stats.approx_kl;
            sum.grad_norm += norm;
            count += 1.0;
        }
    }
    let l = &mut sum.loss;
    for x in [
        &mut l.total,
        &mut l.policy,
        &mut l.value,
        &mut l.entropy,
        &mut l.clip_fraction,
        &mut l.approx_kl,
        &mut sum.grad_norm,
    ] {
        *x /= count;
    }
    Ok(sum)
}
