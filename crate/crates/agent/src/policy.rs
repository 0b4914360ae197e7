//! Trained networks as an environment [`Policy`].

use rand_chacha::ChaCha8Rng;

use lightpath_core::{Action, ActionMask, Env, Policy};

use crate::gnn::ActorCritic;
use crate::observation::{encode_observation, GraphBatch};
use crate::ppo::{greedy_action, sample_action};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Most probable valid action.
    #[default]
    Greedy,
    /// Draw from the masked distribution.
    Sample,
}

#[derive(Debug, Clone)]
pub struct AgentPolicy {
    model: ActorCritic,
    selection: Selection,
    name: String,
}

impl AgentPolicy {
    pub fn new(model: ActorCritic, selection: Selection) -> Self {
        Self {
            model,
            selection,
            name: "ppo_gat".to_string(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn model(&self) -> &ActorCritic {
        &self.model
    }

    /// Masked log-probabilities and value estimate for the current state.
    pub fn distribution(&self, env: &Env) -> (Vec<f64>, f64) {
        let obs = encode_observation(env, self.model.spec(), true);
        let batch = GraphBatch::from_observations(&[&obs], env.table());
        let (lp, values) = self.model.evaluate(&batch);
        (lp.data, values[0])
    }
}

impl Policy for AgentPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn select(&self, env: &Env, mask: &ActionMask, rng: &mut ChaCha8Rng) -> Option<Action> {
        if !mask.any() {
            return None;
        }
        let (lp, _) = self.distribution(env);
        let flat = match self.selection {
            Selection::Greedy => greedy_action(&lp, mask.cells()),
            Selection::Sample => sample_action(&lp, mask.cells(), rng),
        }?;
        Some(mask.action(flat))
    }
}
