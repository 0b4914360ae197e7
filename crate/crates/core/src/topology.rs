//! Network topologies: nodes joined by bi-directional fiber links.

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};

/// A bi-directional fiber link between two nodes (stored as indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub length_km: f64,
}

impl Link {
    /// The endpoint opposite to `node`, if `node` is an endpoint.
    pub fn other(&self, node: usize) -> Option<usize> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }
}

/// Validated, connected, undirected topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: Vec<String>,
    links: Vec<Link>,
    /// For each node: (neighbor, link index), sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    nodes: Vec<String>,
    links: Vec<LinkRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LinkRecord {
    a: String,
    b: String,
    length_km: f64,
}

impl Topology {
    /// Builds a topology from node names and `(a, b, length_km)` triples.
    pub fn new<S: AsRef<str>>(nodes: &[S], links: &[(S, S, f64)]) -> Result<Self> {
        let nodes: Vec<String> = nodes.iter().map(|n| n.as_ref().to_string()).collect();
        let mut index = HashMap::new();
        for (i, name) in nodes.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Topology(format!("duplicate node '{name}'")));
            }
        }
        let lookup = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Topology(format!("unknown node '{name}'")))
        };
        let mut resolved = Vec::with_capacity(links.len());
        for (a, b, length_km) in links {
            resolved.push(Link {
                a: lookup(a.as_ref())?,
                b: lookup(b.as_ref())?,
                length_km: *length_km,
            });
        }
        Self::from_indexed(nodes, resolved)
    }

    /// Builds a topology from already-resolved link indices.
    pub fn from_indexed(nodes: Vec<String>, links: Vec<Link>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::Topology("need at least two nodes".into()));
        }
        let mut seen = HashSet::new();
        let mut adjacency = vec![Vec::new(); nodes.len()];
        for (idx, link) in links.iter().enumerate() {
            if link.a >= nodes.len() || link.b >= nodes.len() {
                return Err(Error::Topology(format!("link {idx} references a missing node")));
            }
            if link.a == link.b {
                return Err(Error::Topology(format!(
                    "self-loop at node '{}'",
                    nodes[link.a]
                )));
            }
            if !(link.length_km.is_finite() && link.length_km > 0.0) {
                return Err(Error::Topology(format!(
                    "link {}-{} has non-positive or non-finite length {}",
                    nodes[link.a], nodes[link.b], link.length_km
                )));
            }
            let key = (link.a.min(link.b), link.a.max(link.b));
            if !seen.insert(key) {
                return Err(Error::Topology(format!(
                    "duplicate link {}-{}",
                    nodes[link.a], nodes[link.b]
                )));
            }
            adjacency[link.a].push((link.b, idx));
            adjacency[link.b].push((link.a, idx));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        let topology = Self {
            nodes,
            links,
            adjacency,
        };
        if !topology.is_connected() {
            return Err(Error::Topology("graph is disconnected".into()));
        }
        Ok(topology)
    }

    /// Parses the JSON topology format:
    /// `{"nodes": [..], "links": [{"a": .., "b": .., "length_km": ..}]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: TopologyFile = serde_json::from_str(text)?;
        let links: Vec<(String, String, f64)> = file
            .links
            .into_iter()
            .map(|l| (l.a, l.b, l.length_km))
            .collect();
        Self::new(&file.nodes, &links)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&read_file(path.as_ref())?)
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            nodes: self.nodes.clone(),
            links: self
                .links
                .iter()
                .map(|l| LinkRecord {
                    a: self.nodes[l.a].clone(),
                    b: self.nodes[l.b].clone(),
                    length_km: l.length_km,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("topology serializes")
    }

    /// A ring of `n` nodes named `0..n`, every link `length_km` long.
    pub fn ring(n: usize, length_km: f64) -> Result<Self> {
        let nodes: Vec<String> = (0..n).map(|i| i.to_string()).collect();
        let links = (0..n)
            .map(|i| Link {
                a: i,
                b: (i + 1) % n,
                length_km,
            })
            .collect();
        Self::from_indexed(nodes, links)
    }

    fn is_connected(&self) -> bool {
        let mut visited = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.adjacency[u] {
                if !visited[v] {
                    visited[v] = true;
                    queue.push_back(v);
                }
            }
        }
        visited.into_iter().all(|v| v)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn node_name(&self, idx: usize) -> &str {
        &self.nodes[idx]
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    /// Neighbors of `node` with the connecting link index, sorted by neighbor.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    /// Link index joining `a` and `b`, if any.
    pub fn link_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(n, _)| n)
            .ok()
            .map(|pos| self.adjacency[a][pos].1)
    }

    /// Number of unordered node pairs.
    pub fn pair_count(&self) -> usize {
        let n = self.nodes.len();
        n * (n - 1) / 2
    }
}

/// Dense index of the unordered pair `{a, b}` among `n` nodes, `a != b`.
pub fn pair_index(n: usize, a: usize, b: usize) -> usize {
    debug_assert!(a != b && a < n && b < n);
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    lo * (2 * n - lo - 1) / 2 + (hi - lo - 1)
}

/// Inverse of [`pair_index`]: returns `(lo, hi)` with `lo < hi`.
pub fn pair_from_index(n: usize, mut idx: usize) -> (usize, usize) {
    for lo in 0..n {
        let row = n - lo - 1;
        if idx < row {
            return (lo, lo + 1 + idx);
        }
        idx -= row;
    }
    panic!("pair index out of range for {n} nodes");
}
