//! Loopless k-shortest candidate paths and the precomputed path table.

use std::cmp::Ordering as CmpOrdering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::physical::{path_capacity, NsrModel, TransmissionConfig};
use crate::topology::{pair_from_index, pair_index, Topology};

/// Criterion used to rank candidate paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathOrdering {
    Hops,
    Length,
}

impl fmt::Display for PathOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathOrdering::Hops => "hops",
            PathOrdering::Length => "length",
        })
    }
}

impl FromStr for PathOrdering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hops" => Ok(PathOrdering::Hops),
            "length" => Ok(PathOrdering::Length),
            other => Err(Error::Config(format!("unknown ordering '{other}'"))),
        }
    }
}

/// Additive path cost: hop count and length.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cost {
    hops: u32,
    length: f64,
}

impl Cost {
    const ZERO: Cost = Cost {
        hops: 0,
        length: 0.0,
    };

    fn add(self, length: f64) -> Cost {
        Cost {
            hops: self.hops + 1,
            length: self.length + length,
        }
    }

    fn cmp(&self, other: &Cost, ordering: PathOrdering) -> CmpOrdering {
        match ordering {
            PathOrdering::Hops => self
                .hops
                .cmp(&other.hops)
                .then(self.length.total_cmp(&other.length)),
            PathOrdering::Length => self
                .length
                .total_cmp(&other.length)
                .then(self.hops.cmp(&other.hops)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePath {
    pub nodes: Vec<usize>,
    pub links: Vec<usize>,
    pub hops: usize,
    pub length_km: f64,
    /// Filled in by [`PathTable::build`]; zero for bare enumeration results.
    pub capacity_gbps: f64,
}

impl CandidatePath {
    fn cost(&self) -> Cost {
        Cost {
            hops: self.hops as u32,
            length: self.length_km,
        }
    }

    /// Full ranking key: declared criterion, then the other, then node sequence.
    pub fn rank_cmp(&self, other: &Self, ordering: PathOrdering) -> CmpOrdering {
        self.cost()
            .cmp(&other.cost(), ordering)
            .then_with(|| self.nodes.cmp(&other.nodes))
    }
}

struct HeapEntry {
    cost: Cost,
    node: usize,
    ordering: PathOrdering,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == CmpOrdering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<CmpOrdering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> CmpOrdering {
        other
            .cost
            .cmp(&self.cost, self.ordering)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Dijkstra under the lexicographic cost, skipping banned nodes and links.
fn shortest_path(
    topology: &Topology,
    src: usize,
    dst: usize,
    ordering: PathOrdering,
    banned_nodes: &[bool],
    banned_links: &HashSet<usize>,
) -> Option<CandidatePath> {
    let n = topology.node_count();
    let mut best: Vec<Option<Cost>> = vec![None; n];
    let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[src] = Some(Cost::ZERO);
    heap.push(HeapEntry {
        cost: Cost::ZERO,
        node: src,
        ordering,
    });
    while let Some(HeapEntry { cost, node, .. }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        if node == dst {
            break;
        }
        for &(next, link) in topology.neighbors(node) {
            if done[next] || banned_nodes[next] || banned_links.contains(&link) {
                continue;
            }
            let candidate = cost.add(topology.link(link).length_km);
            let better = match best[next] {
                None => true,
                Some(existing) => candidate.cmp(&existing, ordering) == CmpOrdering::Less,
            };
            if better {
                best[next] = Some(candidate);
                prev[next] = Some((node, link));
                heap.push(HeapEntry {
                    cost: candidate,
                    node: next,
                    ordering,
                });
            }
        }
    }
    best[dst]?;
    let mut nodes = vec![dst];
    let mut links = Vec::new();
    let mut cur = dst;
    while let Some((p, l)) = prev[cur] {
        nodes.push(p);
        links.push(l);
        cur = p;
    }
    nodes.reverse();
    links.reverse();
    Some(make_path(topology, nodes, links))
}

fn make_path(topology: &Topology, nodes: Vec<usize>, links: Vec<usize>) -> CandidatePath {
    let length_km = links.iter().map(|&l| topology.link(l).length_km).sum();
    CandidatePath {
        hops: links.len(),
        nodes,
        links,
        length_km,
        capacity_gbps: 0.0,
    }
}

fn concat(topology: &Topology, root: &CandidatePath, upto: usize, spur: &CandidatePath) -> CandidatePath {
    let mut nodes = root.nodes[..upto].to_vec();
    nodes.extend_from_slice(&spur.nodes);
    let mut links = root.links[..upto].to_vec();
    links.extend_from_slice(&spur.links);
    make_path(topology, nodes, links)
}

/// The `k` best loopless paths from `src` to `dst` under `ordering`.
///
/// Yen's algorithm enumerates paths in non-decreasing (primary, secondary)
/// cost; enumeration continues past the k-th path while costs tie so that the
/// node-sequence tie-break selects among all tied paths.
pub fn k_shortest_paths(
    topology: &Topology,
    src: usize,
    dst: usize,
    k: usize,
    ordering: PathOrdering,
) -> Vec<CandidatePath> {
    assert!(src != dst, "source and destination must differ");
    assert!(k >= 1, "k must be positive");
    let n = topology.node_count();
    let no_nodes = vec![false; n];
    let Some(first) = shortest_path(topology, src, dst, ordering, &no_nodes, &HashSet::new())
    else {
        return Vec::new();
    };

    let mut accepted: Vec<CandidatePath> = vec![first];
    let mut seen: HashSet<Vec<usize>> = HashSet::from([accepted[0].nodes.clone()]);
    let mut candidates: Vec<CandidatePath> = Vec::new();

    loop {
        let last = accepted.last().expect("nonempty").clone();
        for spur_idx in 0..last.nodes.len() - 1 {
            let spur_node = last.nodes[spur_idx];
            let root = &last.nodes[..=spur_idx];
            let mut banned_links = HashSet::new();
            for p in &accepted {
                if p.nodes.len() > spur_idx + 1 && &p.nodes[..=spur_idx] == root {
                    banned_links.insert(p.links[spur_idx]);
                }
            }
            let mut banned_nodes = vec![false; n];
            for &node in &root[..spur_idx] {
                banned_nodes[node] = true;
            }
            if let Some(spur) =
                shortest_path(topology, spur_node, dst, ordering, &banned_nodes, &banned_links)
            {
                let total = concat(topology, &last, spur_idx, &spur);
                if seen.insert(total.nodes.clone()) {
                    candidates.push(total);
                }
            }
        }
        let best = candidates
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.rank_cmp(b.1, ordering))
            .map(|(i, _)| i);
        let Some(best) = best else { break };
        if accepted.len() >= k {
            let kth = accepted[k - 1].cost();
            if candidates[best].cost().cmp(&kth, ordering) != CmpOrdering::Equal {
                break;
            }
        }
        accepted.push(candidates.swap_remove(best));
    }

    accepted.sort_by(|a, b| a.rank_cmp(b, ordering));
    accepted.truncate(k);
    accepted
}

/// Candidate paths for every unordered node pair, with capacities.
#[derive(Debug, Clone)]
pub struct PathTable {
    topology: Topology,
    transmission: TransmissionConfig,
    k: usize,
    ordering: PathOrdering,
    /// Indexed by [`pair_index`]; paths run from the lower to the higher node index.
    paths: Vec<Vec<CandidatePath>>,
    fingerprint: String,
}

impl PathTable {
    pub fn build(
        topology: &Topology,
        k: usize,
        ordering: PathOrdering,
        nsr_model: &NsrModel,
        transmission: &TransmissionConfig,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        transmission.validate()?;
        let nsr = nsr_model.link_nsrs(topology, transmission)?;
        let n = topology.node_count();
        let mut paths = Vec::with_capacity(topology.pair_count());
        for idx in 0..topology.pair_count() {
            let (a, b) = pair_from_index(n, idx);
            let mut list = k_shortest_paths(topology, a, b, k, ordering);
            for p in &mut list {
                p.capacity_gbps = path_capacity(&p.links, &nsr, transmission)?;
            }
            paths.push(list);
        }

        let mut hasher = Sha256::new();
        hasher.update(topology.to_json().as_bytes());
        hasher.update(format!("k={k};ordering={ordering};").as_bytes());
        hasher.update(serde_json::to_string(transmission).expect("serializes").as_bytes());
        for v in nsr.values() {
            hasher.update(v.to_bits().to_le_bytes());
        }
        let fingerprint = hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();

        Ok(Self {
            topology: topology.clone(),
            transmission: *transmission,
            k,
            ordering,
            paths,
            fingerprint,
        })
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn transmission(&self) -> &TransmissionConfig {
        &self.transmission
    }

    pub fn channels(&self) -> usize {
        self.transmission.channel_count
    }

    /// Declared K; individual pairs may hold fewer paths.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ordering(&self) -> PathOrdering {
        self.ordering
    }

    /// Candidate paths for the unordered pair `{a, b}` in rank order.
    pub fn paths(&self, a: usize, b: usize) -> &[CandidatePath] {
        &self.paths[pair_index(self.topology.node_count(), a, b)]
    }

    pub fn paths_by_index(&self, pair: usize) -> &[CandidatePath] {
        &self.paths[pair]
    }

    pub fn pair_count(&self) -> usize {
        self.paths.len()
    }

    /// Stable hash of topology, K, ordering, grid and per-link NSR.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }
}
