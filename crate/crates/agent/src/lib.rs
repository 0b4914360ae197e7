//! Graph-attention actor-critic trained with PPO for lightpath allocation.
//!
//! - [`tape`]: reverse-mode differentiation over dense matrices.
//! - [`observation`]: network state as graph features, and batching.
//! - [`gnn`]: policy and value graph attention networks.
//! - [`ppo`]: advantages, the clipped objective, Adam, LR schedule.
//! - [`train`]: parallel rollouts and the update loop.
//! - [`checkpoint`], [`policy`]: persistence and evaluation.

pub mod checkpoint;
pub mod error;
pub mod gnn;
pub mod observation;
pub mod policy;
pub mod ppo;
pub mod tape;
pub mod train;

pub use checkpoint::Checkpoint;
pub use error::{AgentError, Result};
pub use gnn::{Activation, ActorCritic, GnnConfig};
pub use observation::{encode_observation, GraphBatch, GraphObservation, ObservationSpec};
pub use policy::{AgentPolicy, Selection};
pub use ppo::{gae, lr_schedule, PpoConfig};
pub use train::{CurvePoint, TrainConfig, Trainer};
