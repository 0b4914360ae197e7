//! Fixed-grid optical network simulation for routing and wavelength
//! assignment with lightpath reuse under incremental loading.
//!
//! - [`topology`]: validated undirected fiber topologies.
//! - [`physical`]: per-link NSR models and Shannon path capacity.
//! - [`paths`]: loopless k-shortest candidate paths and the [`PathTable`].
//! - [`env`]: the allocation state machine with masks and rewards.
//! - [`heuristics`]: KSP-FF / FF-KSP baselines and the [`Policy`] trait.
//! - [`exec`]: rayon-backed data parallelism with a sequential fallback.

pub mod env;
pub mod error;
pub mod exec;
pub mod heuristics;
pub mod paths;
pub mod physical;
pub mod topology;

pub use env::{
    Action, ActionClass, ActionMask, Env, EpisodeConfig, Lightpath, LightpathId, NetworkState,
    Outcome, ServiceRequest, StepResult, Termination,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use heuristics::{Heuristic, Policy, RandomValid};
pub use paths::{k_shortest_paths, CandidatePath, PathOrdering, PathTable};
pub use physical::{max_services, path_capacity, GnParams, LinkNsr, NsrModel, TransmissionConfig};
pub use topology::{Link, Topology};
