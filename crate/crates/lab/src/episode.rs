//! Running single episodes with any policy.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use lightpath_core::{Env, EpisodeConfig, Outcome, PathTable, Policy, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    pub policy: String,
    pub accepted: usize,
    pub blocked: usize,
    pub first_block_step: Option<usize>,
    pub request_gbps: f64,
}

impl EpisodeResult {
    pub fn processed(&self) -> usize {
        self.accepted + self.blocked
    }

    pub fn throughput_gbps(&self) -> f64 {
        self.accepted as f64 * self.request_gbps
    }
}

/// One row of a per-step episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub source: usize,
    pub destination: usize,
    pub path: Option<usize>,
    pub channel: Option<usize>,
    pub outcome: String,
    pub accepted_total: usize,
}

/// Policy randomness is drawn from a stream separate from the traffic.
pub fn policy_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0FC0_FFEE)
}

fn drive(
    policy: &dyn Policy,
    table: &Arc<PathTable>,
    config: &EpisodeConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<EpisodeResult> {
    let mut env = Env::new(table.clone(), *config)?;
    let mut rng = policy_rng(config.seed);
    while !env.is_terminated() {
        let request = env.request();
        let mask = env.action_mask();
        let action = policy.select(&env, &mask, &mut rng);
        let result = match action {
            Some(a) => env.step(a),
            None => env.block(),
        };
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                step: rows.len(),
                source: request.source,
                destination: request.destination,
                path: action.map(|a| a.path),
                channel: action.map(|a| a.channel),
                outcome: match result.outcome {
                    Outcome::New => "new",
                    Outcome::Reuse => "reuse",
                    Outcome::Blocked => "blocked",
                }
                .to_string(),
                accepted_total: env.state().accepted(),
            });
        }
    }
    let state = env.state();
    Ok(EpisodeResult {
        seed: config.seed,
        policy: policy.name(),
        accepted: state.accepted(),
        blocked: state.blocked(),
        first_block_step: state.first_block(),
        request_gbps: config.request_gbps,
    })
}

/// Steps a fresh environment to termination; deterministic in (seed, policy).
pub fn run_episode(policy: &dyn Policy, table: &Arc<PathTable>, config: &EpisodeConfig) -> Result<EpisodeResult> {
    drive(policy, table, config, None)
}

pub fn run_episode_traced(
    policy: &dyn Policy,
    table: &Arc<PathTable>,
    config: &EpisodeConfig,
) -> Result<(EpisodeResult, Vec<TraceRow>)> {
    let mut rows = Vec::new();
    let result = drive(policy, table, config, Some(&mut rows))?;
    Ok((result, rows))
}

/// Accepted counts after each of `checkpoints` requests (ascending) in one
/// fixed-length run, plus the first-blocking step within that run.
///
/// The request stream does not depend on the actions taken, so the count at
/// step `L` equals the result of an `L`-request episode with the same seed.
pub fn accepted_at(
    policy: &dyn Policy,
    table: &Arc<PathTable>,
    seed: u64,
    request_gbps: f64,
    checkpoints: &[usize],
) -> Result<(Vec<usize>, Option<usize>)> {
    let horizon = checkpoints.iter().copied().max().unwrap_or(0);
    let mut config = EpisodeConfig::fixed(horizon.max(1), seed);
    config.request_gbps = request_gbps;
    let mut env = Env::new(table.clone(), config)?;
    let mut rng = policy_rng(seed);
    let mut out = vec![0; checkpoints.len()];
    while !env.is_terminated() {
        let mask = env.action_mask();
        match policy.select(&env, &mask, &mut rng) {
            Some(a) => env.step(a),
            None => env.block(),
        };
        let processed = env.state().processed();
        for (i, &c) in checkpoints.iter().enumerate() {
            if c == processed {
                out[i] = env.state().accepted();
            }
        }
    }
    Ok((out, env.state().first_block()))
}
