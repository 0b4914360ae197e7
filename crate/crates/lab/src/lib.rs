//! Evaluation campaigns for the lightpath simulator: heuristic sweeps,
//! paired policy comparisons, learning curves, statistics and figures.

pub mod curve;
pub mod episode;
pub mod paired;
pub mod plots;
pub mod stats;
pub mod sweep;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;

use lightpath_agent::{AgentPolicy, Checkpoint, Selection};
use lightpath_core::{Heuristic, NsrModel, PathTable, Policy, RandomValid, Topology};

pub use episode::{run_episode, run_episode_traced, EpisodeResult, TraceRow};
pub use paired::{paired_eval, PairedResult, PairedSummary};
pub use stats::{summarize, Summary};
pub use sweep::{sweep, EpisodeLength, Network, SweepRow, SweepSpec};

pub const SEED_BASE_VAR: &str = "LIGHTPATH_LAB_SEED_BASE";

/// Campaign seed offset from the environment (0 when unset).
pub fn seed_base() -> anyhow::Result<u64> {
    match std::env::var(SEED_BASE_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_BASE_VAR}={v:?} is not an unsigned integer")),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(e) => Err(e.into()),
    }
}

/// `count` consecutive seeds starting at the campaign base.
pub fn campaign_seeds(count: usize) -> anyhow::Result<Vec<u64>> {
    let base = seed_base()?;
    Ok((0..count as u64).map(|i| base + i).collect())
}

/// Directory holding the bundled topologies and NSR files.
pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load_network(topology: &Path, nsr: &Path) -> anyhow::Result<(Topology, NsrModel)> {
    let topo = Topology::load(topology).with_context(|| format!("loading {}", topology.display()))?;
    let model = NsrModel::load(nsr, &topo).with_context(|| format!("loading {}", nsr.display()))?;
    Ok((topo, model))
}

/// Resolves a policy name (`ksp_ff`, `ff_ksp`, `random`) or a checkpoint path.
pub fn resolve_policy(
    spec: &str,
    table: &Arc<PathTable>,
    request_gbps: f64,
    selection: Selection,
) -> anyhow::Result<Box<dyn Policy>> {
    if let Ok(h) = spec.parse::<Heuristic>() {
        return Ok(Box::new(h));
    }
    if spec == "random" {
        return Ok(Box::new(RandomValid));
    }
    let ck = Checkpoint::load(spec).with_context(|| format!("{spec:?} is neither a heuristic nor a checkpoint"))?;
    let model = ck.into_model(table, request_gbps)?;
    Ok(Box::new(AgentPolicy::new(model, selection)))
}
