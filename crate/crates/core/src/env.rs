//! The RWA-LR environment: incremental traffic, lightpath bookkeeping,
//! action validation and masking.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathTable;
use crate::physical::max_services;
use crate::topology::pair_from_index;

/// Lightpath identifier; 0 marks a free cell.
pub type LightpathId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub source: usize,
    pub destination: usize,
    pub size_gbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    FixedLength,
    FirstBlocking,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub requests: usize,
    pub termination: Termination,
    pub request_gbps: f64,
    pub seed: u64,
}

impl EpisodeConfig {
    pub const EVAL_REQUESTS: usize = 10_000;

    pub fn fixed(requests: usize, seed: u64) -> Self {
        Self {
            requests,
            termination: Termination::FixedLength,
            request_gbps: 100.0,
            seed,
        }
    }

    /// Training-length episode: `scale` times the evaluation length, at least one request.
    pub fn scaled(eval_requests: usize, scale: f64, seed: u64) -> Self {
        let requests = ((eval_requests as f64 * scale).round() as usize).max(1);
        Self::fixed(requests, seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.requests == 0 {
            return Err(Error::Config("episode needs at least one request".into()));
        }
        if !(self.request_gbps.is_finite() && self.request_gbps > 0.0) {
            return Err(Error::Config("request size must be positive".into()));
        }
        Ok(())
    }
}

/// Path rank and channel index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub path: usize,
    pub channel: usize,
}

impl Action {
    pub fn new(path: usize, channel: usize) -> Self {
        Self { path, channel }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionClass {
    NewLightpath,
    Reuse(LightpathId),
    Invalid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    New,
    Reuse,
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lightpath {
    pub id: LightpathId,
    pub links: Vec<usize>,
    pub channel: usize,
    /// Slots left after carrying the service that created it.
    pub initial_slots: u32,
    pub remaining_slots: u32,
}

/// K x S validity grid, row-major by path rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMask {
    paths: usize,
    channels: usize,
    cells: Vec<bool>,
}

impl ActionMask {
    pub fn new(paths: usize, channels: usize) -> Self {
        Self {
            paths,
            channels,
            cells: vec![false; paths * channels],
        }
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, path: usize, channel: usize) -> bool {
        self.cells[path * self.channels + channel]
    }

    pub fn set(&mut self, path: usize, channel: usize, value: bool) {
        self.cells[path * self.channels + channel] = value;
    }

    /// Flattened cells, index `path * channels + channel`.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn any(&self) -> bool {
        self.cells.iter().any(|&c| c)
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn action(&self, flat: usize) -> Action {
        Action::new(flat / self.channels, flat % self.channels)
    }

    pub fn flat(&self, action: Action) -> usize {
        action.path * self.channels + action.channel
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub outcome: Outcome,
    pub lightpath: Option<LightpathId>,
    pub accepted: bool,
    pub done: bool,
}

/// Complete mutable state of one environment.
#[derive(Debug, Clone)]
pub struct NetworkState {
    channels: usize,
    /// `link * channels + channel` -> lightpath id
    occupancy: Vec<LightpathId>,
    lightpaths: Vec<Lightpath>,
    processed: usize,
    accepted: usize,
    blocked: usize,
    first_block: Option<usize>,
    request: ServiceRequest,
    rng: ChaCha8Rng,
}

impl NetworkState {
    pub fn occupancy(&self) -> &[LightpathId] {
        &self.occupancy
    }

    pub fn cell(&self, link: usize, channel: usize) -> LightpathId {
        self.occupancy[link * self.channels + channel]
    }

    pub fn lightpaths(&self) -> &[Lightpath] {
        &self.lightpaths
    }

    pub fn lightpath(&self, id: LightpathId) -> Option<&Lightpath> {
        (id as usize).checked_sub(1).and_then(|i| self.lightpaths.get(i))
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn accepted(&self) -> usize {
        self.accepted
    }

    pub fn blocked(&self) -> usize {
        self.blocked
    }

    /// Zero-based index of the first blocked request.
    pub fn first_block(&self) -> Option<usize> {
        self.first_block
    }

    pub fn request(&self) -> ServiceRequest {
        self.request
    }
}

/// One RWA-LR environment over a shared, immutable path table.
#[derive(Debug, Clone)]
pub struct Env {
    table: Arc<PathTable>,
    config: EpisodeConfig,
    /// Per pair, per rank: service slots of a fresh lightpath.
    slots: Arc<Vec<Vec<u32>>>,
    state: NetworkState,
}

impl Env {
    pub fn new(table: Arc<PathTable>, config: EpisodeConfig) -> Result<Self> {
        config.validate()?;
        let slots = (0..table.pair_count())
            .map(|pair| {
                table
                    .paths_by_index(pair)
                    .iter()
                    .map(|p| max_services(p.capacity_gbps, config.request_gbps))
                    .collect()
            })
            .collect();
        let state = Self::fresh_state(&table, &config);
        Ok(Self {
            table,
            config,
            slots: Arc::new(slots),
            state,
        })
    }

    fn fresh_state(table: &PathTable, config: &EpisodeConfig) -> NetworkState {
        let channels = table.channels();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let request = draw_request(table, config, &mut rng);
        NetworkState {
            channels,
            occupancy: vec![0; table.topology().link_count() * channels],
            lightpaths: Vec::new(),
            processed: 0,
            accepted: 0,
            blocked: 0,
            first_block: None,
            request,
            rng,
        }
    }

    /// Clears the network and restarts the request stream from `seed`.
    pub fn reset(&mut self, seed: u64) -> ServiceRequest {
        self.config.seed = seed;
        self.state = Self::fresh_state(&self.table, &self.config);
        self.state.request
    }

    pub fn table(&self) -> &PathTable {
        &self.table
    }

    pub fn table_arc(&self) -> &Arc<PathTable> {
        &self.table
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.config
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn request(&self) -> ServiceRequest {
        self.state.request
    }

    /// Grid width: declared K by channel count.
    pub fn action_shape(&self) -> (usize, usize) {
        (self.table.k(), self.table.channels())
    }

    /// Service slots a new lightpath on rank `path` of the current pair would get.
    pub fn fresh_slots(&self, path: usize) -> u32 {
        let r = self.state.request;
        let pair = crate::topology::pair_index(self.table.topology().node_count(), r.source, r.destination);
        self.slots[pair].get(path).copied().unwrap_or(0)
    }

    pub fn classify(&self, action: Action) -> ActionClass {
        let r = self.state.request;
        let paths = self.table.paths(r.source, r.destination);
        let Some(path) = paths.get(action.path) else {
            return ActionClass::Invalid;
        };
        if action.channel >= self.table.channels() {
            return ActionClass::Invalid;
        }
        let first = self.state.cell(path.links[0], action.channel);
        if path.links[1..]
            .iter()
            .any(|&l| self.state.cell(l, action.channel) != first)
        {
            return ActionClass::Invalid;
        }
        if first == 0 {
            return if self.fresh_slots(action.path) >= 1 {
                ActionClass::NewLightpath
            } else {
                ActionClass::Invalid
            };
        }
        match self.state.lightpath(first) {
            Some(lp) if lp.links.len() == path.links.len() && lp.remaining_slots >= 1 => {
                ActionClass::Reuse(first)
            }
            _ => ActionClass::Invalid,
        }
    }

    /// Row-wise evaluation of [`Env::classify`] over the whole K x S grid.
    pub fn action_mask(&self) -> ActionMask {
        let (k, channels) = self.action_shape();
        let mut mask = ActionMask::new(k, channels);
        let r = self.state.request;
        let pair = crate::topology::pair_index(
            self.table.topology().node_count(),
            r.source,
            r.destination,
        );
        let paths = self.table.paths_by_index(pair);
        for (rank, path) in paths.iter().enumerate().take(k) {
            let fresh = self.slots[pair][rank] >= 1;
            let head = &self.state.occupancy[path.links[0] * channels..][..channels];
            let row = &mut mask.cells[rank * channels..][..channels];
            for (s, cell) in row.iter_mut().enumerate() {
                let id = head[s];
                if path.links[1..]
                    .iter()
                    .any(|&l| self.state.occupancy[l * channels + s] != id)
                {
                    continue;
                }
                *cell = if id == 0 {
                    fresh
                } else {
                    let lp = &self.state.lightpaths[id as usize - 1];
                    lp.links.len() == path.links.len() && lp.remaining_slots >= 1
                };
            }
        }
        mask
    }

    /// Applies `action` to the current request. Invalid actions block it.
    pub fn step(&mut self, action: Action) -> StepResult {
        let class = self.classify(action);
        let (outcome, lightpath) = match class {
            ActionClass::Invalid => (Outcome::Blocked, None),
            ActionClass::NewLightpath => {
                let r = self.state.request;
                let path = &self.table.paths(r.source, r.destination)[action.path];
                let id = self.state.lightpaths.len() as LightpathId + 1;
                let slots = self.fresh_slots(action.path) - 1;
                for &link in &path.links {
                    self.state.occupancy[link * self.state.channels + action.channel] = id;
                }
                self.state.lightpaths.push(Lightpath {
                    id,
                    links: path.links.clone(),
                    channel: action.channel,
                    initial_slots: slots,
                    remaining_slots: slots,
                });
                (Outcome::New, Some(id))
            }
            ActionClass::Reuse(id) => {
                self.state.lightpaths[id as usize - 1].remaining_slots -= 1;
                (Outcome::Reuse, Some(id))
            }
        };
        self.finish(outcome, lightpath)
    }

    /// Rejects the current request without attempting an allocation.
    pub fn block(&mut self) -> StepResult {
        self.finish(Outcome::Blocked, None)
    }

    fn finish(&mut self, outcome: Outcome, lightpath: Option<LightpathId>) -> StepResult {
        let accepted = outcome != Outcome::Blocked;
        if accepted {
            self.state.accepted += 1;
        } else {
            self.state.blocked += 1;
            self.state.first_block.get_or_insert(self.state.processed);
        }
        self.state.processed += 1;
        let done = self.is_terminated();
        if !done {
            self.state.request = draw_request(&self.table, &self.config, &mut self.state.rng);
        }
        StepResult {
            reward: if accepted { 1.0 } else { -1.0 },
            outcome,
            lightpath,
            accepted,
            done,
        }
    }

    pub fn is_terminated(&self) -> bool {
        let s = &self.state;
        match self.config.termination {
            Termination::FixedLength => s.processed >= self.config.requests,
            Termination::FirstBlocking => s.blocked >= 1 || s.processed >= self.config.requests,
        }
    }

    /// Checks occupancy/registry consistency and counter conservation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let s = &self.state;
        if s.accepted + s.blocked != s.processed {
            return Err(format!(
                "accepted {} + blocked {} != processed {}",
                s.accepted, s.blocked, s.processed
            ));
        }
        let mut footprint = 0;
        let mut carried = 0usize;
        for (i, lp) in s.lightpaths.iter().enumerate() {
            if lp.id as usize != i + 1 {
                return Err(format!("lightpath at slot {i} has id {}", lp.id));
            }
            for &link in &lp.links {
                if s.cell(link, lp.channel) != lp.id {
                    return Err(format!("lightpath {} missing on link {link}", lp.id));
                }
            }
            if lp.remaining_slots > lp.initial_slots {
                return Err(format!("lightpath {} gained slots", lp.id));
            }
            footprint += lp.links.len();
            carried += (lp.initial_slots - lp.remaining_slots) as usize + 1;
        }
        let stamped = s.occupancy.iter().filter(|&&c| c != 0).count();
        if stamped != footprint {
            return Err(format!(
                "{stamped} occupied cells but lightpaths cover {footprint}"
            ));
        }
        if s.occupancy.iter().any(|&c| c as usize > s.lightpaths.len()) {
            return Err("occupancy references unknown lightpath".into());
        }
        if carried != s.accepted {
            return Err(format!("lightpaths carry {carried} services, accepted {}", s.accepted));
        }
        Ok(())
    }
}

fn draw_request(table: &PathTable, config: &EpisodeConfig, rng: &mut ChaCha8Rng) -> ServiceRequest {
    let n = table.topology().node_count();
    let (source, destination) = pair_from_index(n, rng.gen_range(0..table.pair_count()));
    ServiceRequest {
        source,
        destination,
        size_gbps: config.request_gbps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paths::PathOrdering;
    use crate::physical::{NsrModel, TransmissionConfig};
    use crate::topology::Topology;

    fn table(topology: &Topology, k: usize, channels: usize, nsr: NsrModel) -> Arc<PathTable> {
        Arc::new(
            PathTable::build(
                topology,
                k,
                PathOrdering::Hops,
                &nsr,
                &TransmissionConfig::with_channels(channels),
            )
            .unwrap(),
        )
    }

    fn triangle() -> Topology {
        Topology::new(
            &["A", "B", "C"],
            &[("A", "B", 1.0), ("B", "C", 1.0), ("A", "C", 1.0)],
        )
        .unwrap()
    }

    /// Forces the current request, bypassing the sampler.
    fn set_request(env: &mut Env, source: usize, destination: usize) {
        env.state.request.source = source;
        env.state.request.destination = destination;
    }

    #[test]
    fn reset_is_empty_and_deterministic() {
        let t = table(&triangle(), 2, 4, NsrModel::PerKm(0.5));
        let a = Env::new(t.clone(), EpisodeConfig::fixed(10, 7)).unwrap();
        let b = Env::new(t.clone(), EpisodeConfig::fixed(10, 7)).unwrap();
        assert!(a.state().occupancy().iter().all(|&c| c == 0));
        assert_eq!(a.request(), b.request());
        assert_eq!(a.state().processed(), 0);
    }

    #[test]
    fn neighbouring_seeds_diverge() {
        let topo = Topology::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/topologies/nsfnet.json")).unwrap();
        let t = table(&topo, 1, 2, NsrModel::PerKm(1e-5));
        let trace = |seed| {
            let mut env = Env::new(t.clone(), EpisodeConfig::fixed(100, seed)).unwrap();
            let mut out = Vec::new();
            while !env.is_terminated() {
                out.push(env.request());
                env.block();
            }
            out
        };
        assert_eq!(trace(11), trace(11));
        assert_ne!(trace(11), trace(12));
    }

    #[test]
    fn two_node_requests() {
        let topo = Topology::new(&["A", "B"], &[("A", "B", 1.0)]).unwrap();
        let t = table(&topo, 1, 1, NsrModel::PerKm(0.5));
        let mut env = Env::new(t, EpisodeConfig::fixed(50, 3)).unwrap();
        while !env.is_terminated() {
            let r = env.request();
            assert_eq!((r.source, r.destination), (0, 1));
            assert_eq!(r.size_gbps, 100.0);
            env.block();
        }
    }

    #[test]
    fn new_then_reuse_then_exhausted() {
        // NSR 0.5 per link -> 1-hop capacity 200*log2(3) = 317 Gbps -> 3 slots
        // NSR 1.0 per link -> 200 Gbps -> 2 slots
        let t = table(&triangle(), 2, 4, NsrModel::PerKm(0.5));
        let mut env = Env::new(t, EpisodeConfig::fixed(100, 1)).unwrap();
        set_request(&mut env, 0, 1);
        assert_eq!(env.classify(Action::new(0, 0)), ActionClass::NewLightpath);
        assert!(env.action_mask().cells().iter().all(|&c| c));

        let t2 = table(&triangle(), 2, 4, NsrModel::PerKm(1.0));
        let mut env = Env::new(t2, EpisodeConfig::fixed(100, 1)).unwrap();
        set_request(&mut env, 0, 1);
        let r = env.step(Action::new(0, 0));
        assert_eq!((r.reward, r.outcome, r.lightpath), (1.0, Outcome::New, Some(1)));
        assert_eq!(env.state().lightpath(1).unwrap().remaining_slots, 1);

        set_request(&mut env, 0, 1);
        assert_eq!(env.classify(Action::new(0, 0)), ActionClass::Reuse(1));
        let r = env.step(Action::new(0, 0));
        assert_eq!((r.reward, r.outcome), (1.0, Outcome::Reuse));
        assert_eq!(env.state().lightpath(1).unwrap().remaining_slots, 0);

        set_request(&mut env, 0, 1);
        assert_eq!(env.classify(Action::new(0, 0)), ActionClass::Invalid);
        let before = env.state().occupancy().to_vec();
        let r = env.step(Action::new(0, 0));
        assert_eq!((r.reward, r.outcome, r.accepted), (-1.0, Outcome::Blocked, false));
        assert_eq!(env.state().occupancy(), &before[..]);
        assert_eq!(env.state().blocked(), 1);
        assert_eq!(env.state().first_block(), Some(2));
        env.check_invariants().unwrap();
    }

    #[test]
    fn foreign_lightpath_blocks_shorter_path() {
        // line A-B-C-D; lightpath on A-B-C channel 0; A->B direct on channel 0 is invalid
        let topo = Topology::new(
            &["A", "B", "C", "D"],
            &[("A", "B", 1.0), ("B", "C", 1.0), ("C", "D", 1.0)],
        )
        .unwrap();
        let t = table(&topo, 1, 2, NsrModel::PerKm(0.01));
        let mut env = Env::new(t, EpisodeConfig::fixed(100, 1)).unwrap();
        set_request(&mut env, 0, 2);
        assert_eq!(env.step(Action::new(0, 0)).outcome, Outcome::New);
        set_request(&mut env, 0, 1);
        assert_eq!(env.classify(Action::new(0, 0)), ActionClass::Invalid);
        assert_eq!(env.classify(Action::new(0, 1)), ActionClass::NewLightpath);
        // partial overlap with a free cell elsewhere is also invalid
        set_request(&mut env, 1, 3);
        assert_eq!(env.classify(Action::new(0, 0)), ActionClass::Invalid);
        // out-of-range indices are invalid, not panics
        assert_eq!(env.classify(Action::new(5, 0)), ActionClass::Invalid);
        assert_eq!(env.classify(Action::new(0, 9)), ActionClass::Invalid);
    }

    #[test]
    fn zero_capacity_paths_are_masked() {
        let t = table(&triangle(), 2, 2, NsrModel::PerKm(1e6));
        let env = Env::new(t, EpisodeConfig::fixed(10, 0)).unwrap();
        assert!(!env.action_mask().any());
    }

    #[test]
    fn termination_modes() {
        let t = table(&triangle(), 1, 1, NsrModel::PerKm(1.0));
        let mut env = Env::new(t.clone(), EpisodeConfig::fixed(3, 0)).unwrap();
        env.block();
        env.block();
        assert!(!env.is_terminated());
        assert!(env.block().done);

        let mut cfg = EpisodeConfig::fixed(5, 0);
        cfg.termination = Termination::FirstBlocking;
        let mut env = Env::new(t.clone(), cfg).unwrap();
        assert!(!env.is_terminated());
        let r = env.block();
        assert!(r.done && env.is_terminated());

        // never blocking: runs to the request count
        let big = table(&triangle(), 1, 4, NsrModel::PerKm(1e-3));
        let mut env = Env::new(big, cfg).unwrap();
        let mut steps = 0;
        while !env.is_terminated() {
            let mask = env.action_mask();
            let flat = mask.cells().iter().position(|&c| c).unwrap();
            env.step(mask.action(flat));
            steps += 1;
        }
        assert_eq!(steps, 5);
        assert_eq!(env.state().blocked(), 0);
    }

    #[test]
    fn config_validation() {
        assert!(EpisodeConfig::fixed(0, 0).validate().is_err());
        assert_eq!(EpisodeConfig::scaled(10_000, 0.2, 0).requests, 2_000);
        let mut c = EpisodeConfig::fixed(1, 0);
        c.request_gbps = 0.0;
        assert!(c.validate().is_err());
    }
}
