//! Versioned JSON checkpoints bound to one path-table configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use lightpath_core::PathTable;

use crate::error::{AgentError, Result};
use crate::gnn::{ActorCritic, GnnConfig, Params};
use crate::observation::ObservationSpec;
use crate::ppo::PpoConfig;

pub const FORMAT: &str = "lightpath-agent-checkpoint";
pub const VERSION: u32 = 1;

/// Environment facts a checkpoint is only valid for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvBinding {
    pub table_fingerprint: String,
    pub nodes: usize,
    pub links: usize,
    pub channels: usize,
    pub k: usize,
    pub ordering: String,
    pub request_gbps: f64,
}

impl EnvBinding {
    pub fn of(table: &PathTable, request_gbps: f64) -> Self {
        Self {
            table_fingerprint: table.fingerprint().to_string(),
            nodes: table.topology().node_count(),
            links: table.topology().link_count(),
            channels: table.channels(),
            k: table.k(),
            ordering: table.ordering().to_string(),
            request_gbps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub gnn: GnnConfig,
    pub ppo: PpoConfig,
    pub binding: EnvBinding,
    pub update: usize,
    pub env_steps: u64,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(
        model: &ActorCritic,
        ppo: &PpoConfig,
        table: &PathTable,
        request_gbps: f64,
        update: usize,
        env_steps: u64,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            gnn: model.config().clone(),
            ppo: ppo.clone(),
            binding: EnvBinding::of(table, request_gbps),
            update,
            env_steps,
            params: model.params().clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(AgentError::Mismatch(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck
            .params
            .values
            .iter()
            .any(|m| m.data.len() != m.rows * m.cols || m.data.iter().any(|x| !x.is_finite()))
        {
            return Err(AgentError::Mismatch("corrupt parameter matrix".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AgentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn verify(&self, table: &PathTable, request_gbps: f64) -> Result<()> {
        let expected = EnvBinding::of(table, request_gbps);
        if self.binding != expected {
            return Err(AgentError::Mismatch(format!(
                "trained for {:?}, environment is {:?}",
                self.binding, expected
            )));
        }
        Ok(())
    }

    /// Rebuilds the networks after checking the environment binding.
    pub fn into_model(self, table: &PathTable, request_gbps: f64) -> Result<ActorCritic> {
        self.verify(table, request_gbps)?;
        let spec = ObservationSpec::for_table(table, self.gnn.capacity_features);
        let mut model = ActorCritic::new(self.gnn, spec, 0);
        model.load_params(self.params).map_err(AgentError::Mismatch)?;
        Ok(model)
    }
}
