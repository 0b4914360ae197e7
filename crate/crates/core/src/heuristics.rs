//! First-fit baselines over the action mask.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionMask, Env};
use crate::error::Error;

/// Chooses an action for the environment's current request, or `None` to block.
pub trait Policy: Send + Sync {
    fn name(&self) -> String;

    /// `rng` is a per-episode stream independent of the traffic generator.
    fn select(&self, env: &Env, mask: &ActionMask, rng: &mut ChaCha8Rng) -> Option<Action>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Heuristic {
    /// Lowest-ranked path with any valid channel, then its lowest channel.
    KspFf,
    /// Lowest channel valid on any path, then the lowest-ranked such path.
    FfKsp,
}

impl Heuristic {
    pub fn choose(self, mask: &ActionMask) -> Option<Action> {
        match self {
            Heuristic::KspFf => ksp_ff(mask),
            Heuristic::FfKsp => ff_ksp(mask),
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Heuristic::KspFf => "ksp_ff",
            Heuristic::FfKsp => "ff_ksp",
        })
    }
}

impl FromStr for Heuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ksp_ff" => Ok(Heuristic::KspFf),
            "ff_ksp" => Ok(Heuristic::FfKsp),
            other => Err(Error::Config(format!("unknown heuristic '{other}'"))),
        }
    }
}

impl Policy for Heuristic {
    fn name(&self) -> String {
        self.to_string()
    }

    fn select(&self, _env: &Env, mask: &ActionMask, _rng: &mut ChaCha8Rng) -> Option<Action> {
        self.choose(mask)
    }
}

pub fn ksp_ff(mask: &ActionMask) -> Option<Action> {
    (0..mask.paths()).find_map(|k| {
        (0..mask.channels())
            .find(|&s| mask.get(k, s))
            .map(|s| Action::new(k, s))
    })
}

pub fn ff_ksp(mask: &ActionMask) -> Option<Action> {
    (0..mask.channels()).find_map(|s| {
        (0..mask.paths())
            .find(|&k| mask.get(k, s))
            .map(|k| Action::new(k, s))
    })
}

/// Uniform choice among valid actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomValid;

impl Policy for RandomValid {
    fn name(&self) -> String {
        "random".into()
    }

    fn select(&self, _env: &Env, mask: &ActionMask, rng: &mut ChaCha8Rng) -> Option<Action> {
        let count = mask.count();
        if count == 0 {
            return None;
        }
        let pick = rng.gen_range(0..count);
        let flat = mask
            .cells()
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .nth(pick)
            .map(|(i, _)| i)?;
        Some(mask.action(flat))
    }
}
