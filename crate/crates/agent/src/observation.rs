//! Graph-structured observations and their batching into one disjoint graph.

use std::rc::Rc;

use lightpath_core::topology::pair_index;
use lightpath_core::{Env, PathTable};

use crate::tape::{Matrix, RowMap};

/// Node features: normalized degree, is-source, is-destination.
pub const NODE_FEATURES: usize = 3;

/// Encoded state of one environment.
///
/// Edge rows hold per-channel occupancy (1 where a lightpath is present)
/// followed, when enabled, by the fraction of that lightpath's service slots
/// still free.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphObservation {
    pub pair: usize,
    pub node: Vec<f32>,
    pub edge: Vec<f32>,
    pub global: Vec<f32>,
    /// Flattened K x S validity mask.
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationSpec {
    pub nodes: usize,
    pub links: usize,
    pub channels: usize,
    pub k: usize,
    pub capacity_features: bool,
}

impl ObservationSpec {
    pub fn for_table(table: &PathTable, capacity_features: bool) -> Self {
        Self {
            nodes: table.topology().node_count(),
            links: table.topology().link_count(),
            channels: table.channels(),
            k: table.k(),
            capacity_features,
        }
    }

    pub fn edge_features(&self) -> usize {
        if self.capacity_features {
            2 * self.channels
        } else {
            self.channels
        }
    }

    /// One-hot source, one-hot destination, request size in units of 100 Gbps.
    pub fn global_features(&self) -> usize {
        2 * self.nodes + 1
    }

    pub fn actions(&self) -> usize {
        self.k * self.channels
    }
}

pub fn encode_observation(env: &Env, spec: &ObservationSpec, masking: bool) -> GraphObservation {
    let table = env.table();
    let topology = table.topology();
    let state = env.state();
    let request = env.request();
    let s = spec.channels;
    let n = spec.nodes;

    let max_degree = (0..n).map(|v| topology.degree(v)).max().unwrap_or(1) as f32;
    let mut node = vec![0.0f32; n * NODE_FEATURES];
    for v in 0..n {
        node[v * NODE_FEATURES] = topology.degree(v) as f32 / max_degree;
    }
    node[request.source * NODE_FEATURES + 1] = 1.0;
    node[request.destination * NODE_FEATURES + 2] = 1.0;

    let width = spec.edge_features();
    let mut edge = vec![0.0f32; spec.links * width];
    for link in 0..spec.links {
        for ch in 0..s {
            let id = state.cell(link, ch);
            if id == 0 {
                continue;
            }
            edge[link * width + ch] = 1.0;
            if spec.capacity_features {
                let lp = state.lightpath(id).expect("stamped lightpath exists");
                edge[link * width + s + ch] =
                    lp.remaining_slots as f32 / (lp.initial_slots + 1) as f32;
            }
        }
    }

    let mut global = vec![0.0f32; spec.global_features()];
    global[request.source] = 1.0;
    global[n + request.destination] = 1.0;
    global[2 * n] = (request.size_gbps / 100.0) as f32;

    let mask = if masking {
        env.action_mask().cells().to_vec()
    } else {
        vec![true; spec.actions()]
    };

    GraphObservation {
        pair: pair_index(n, request.source, request.destination),
        node,
        edge,
        global,
        mask,
    }
}

/// One graph in raw form; used directly by tests and by [`GraphBatch::from_observations`].
#[derive(Debug, Clone)]
pub struct GraphInput<'a> {
    pub nodes: usize,
    pub endpoints: &'a [(usize, usize)],
    pub node: &'a [f32],
    pub edge: &'a [f32],
    pub global: &'a [f32],
    /// Link lists of the candidate paths, by rank (at most K).
    pub paths: Vec<&'a [usize]>,
    pub mask: &'a [bool],
}

/// Disjoint union of graphs with the index maps the networks need.
///
/// Every undirected link `e` yields two directed messages: `2e` delivered to
/// its first endpoint and `2e + 1` to its second.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graphs: usize,
    pub nodes: usize,
    pub edges: usize,
    pub k: usize,
    pub channels: usize,
    pub node_features: Matrix,
    pub edge_features: Matrix,
    pub global_features: Matrix,
    pub msg_edge: RowMap,
    pub msg_sender: RowMap,
    pub msg_receiver: RowMap,
    pub msg_graph: RowMap,
    pub receiver_segment: Rc<Vec<usize>>,
    pub aggregate: RowMap,
    pub edge_from_msgs: RowMap,
    pub node_graph: RowMap,
    pub node_pool: RowMap,
    pub path_readout: RowMap,
    pub mask: Rc<Vec<bool>>,
}

impl GraphBatch {
    pub fn new(graphs: &[GraphInput<'_>], k: usize, channels: usize) -> Self {
        let b = graphs.len();
        let node_dim = graphs[0].node.len() / graphs[0].nodes;
        let edge_dim = graphs[0].edge.len() / graphs[0].endpoints.len().max(1);
        let global_dim = graphs[0].global.len();

        let total_nodes: usize = graphs.iter().map(|g| g.nodes).sum();
        let total_edges: usize = graphs.iter().map(|g| g.endpoints.len()).sum();

        let mut node_features = Vec::with_capacity(total_nodes * node_dim);
        let mut edge_features = Vec::with_capacity(total_edges * edge_dim);
        let mut global_features = Vec::with_capacity(b * global_dim);
        let mut msg_edge = Vec::with_capacity(2 * total_edges);
        let mut msg_sender = Vec::with_capacity(2 * total_edges);
        let mut msg_receiver = Vec::with_capacity(2 * total_edges);
        let mut msg_graph = Vec::with_capacity(2 * total_edges);
        let mut receiver_segment = Vec::with_capacity(2 * total_edges);
        let mut aggregate = Vec::with_capacity(2 * total_edges);
        let mut edge_from_msgs = Vec::with_capacity(2 * total_edges);
        let mut node_graph = Vec::with_capacity(total_nodes);
        let mut node_pool = Vec::with_capacity(total_nodes);
        let mut path_readout = Vec::new();
        let mut mask = Vec::with_capacity(b * k * channels);

        let (mut node_off, mut edge_off) = (0, 0);
        for (gi, g) in graphs.iter().enumerate() {
            let n = g.nodes;
            assert_eq!(g.node.len(), n * node_dim, "node feature shape");
            node_features.extend(g.node.iter().map(|&v| v as f64));
            edge_features.extend(g.edge.iter().map(|&v| v as f64));
            global_features.extend(g.global.iter().map(|&v| v as f64));
            for v in 0..n {
                node_graph.push((node_off + v, gi, 1.0));
                node_pool.push((gi, node_off + v, 1.0 / n as f64));
            }
            for (e, &(a, bnode)) in g.endpoints.iter().enumerate() {
                let ge = edge_off + e;
                for (dir, (recv, send)) in [(a, bnode), (bnode, a)].into_iter().enumerate() {
                    let m = 2 * ge + dir;
                    msg_edge.push((m, ge, 1.0));
                    msg_sender.push((m, node_off + send, 1.0));
                    msg_receiver.push((m, node_off + recv, 1.0));
                    msg_graph.push((m, gi, 1.0));
                    receiver_segment.push(node_off + recv);
                    aggregate.push((node_off + recv, m, 1.0));
                    edge_from_msgs.push((ge, m, 0.5));
                }
            }
            for (rank, links) in g.paths.iter().enumerate().take(k) {
                let w = 1.0 / links.len() as f64;
                for &l in links.iter() {
                    path_readout.push((gi * k + rank, edge_off + l, w));
                }
            }
            assert_eq!(g.mask.len(), k * channels, "mask shape");
            mask.extend_from_slice(g.mask);
            node_off += n;
            edge_off += g.endpoints.len();
        }

        Self {
            graphs: b,
            nodes: total_nodes,
            edges: total_edges,
            k,
            channels,
            node_features: Matrix::from_vec(total_nodes, node_dim, node_features),
            edge_features: Matrix::from_vec(total_edges, edge_dim, edge_features),
            global_features: Matrix::from_vec(b, global_dim, global_features),
            msg_edge: Rc::new(msg_edge),
            msg_sender: Rc::new(msg_sender),
            msg_receiver: Rc::new(msg_receiver),
            msg_graph: Rc::new(msg_graph),
            receiver_segment: Rc::new(receiver_segment),
            aggregate: Rc::new(aggregate),
            edge_from_msgs: Rc::new(edge_from_msgs),
            node_graph: Rc::new(node_graph),
            node_pool: Rc::new(node_pool),
            path_readout: Rc::new(path_readout),
            mask: Rc::new(mask),
        }
    }

    /// Batches observations taken on `table`'s topology.
    pub fn from_observations(observations: &[&GraphObservation], table: &PathTable) -> Self {
        let endpoints: Vec<(usize, usize)> = table
            .topology()
            .links()
            .iter()
            .map(|l| (l.a, l.b))
            .collect();
        let inputs: Vec<GraphInput<'_>> = observations
            .iter()
            .map(|o| GraphInput {
                nodes: table.topology().node_count(),
                endpoints: &endpoints,
                node: &o.node,
                edge: &o.edge,
                global: &o.global,
                paths: table
                    .paths_by_index(o.pair)
                    .iter()
                    .map(|p| p.links.as_slice())
                    .collect(),
                mask: &o.mask,
            })
            .collect();
        Self::new(&inputs, table.k(), table.channels())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lightpath_core::{Action, EpisodeConfig, NsrModel, PathOrdering, Topology, TransmissionConfig};
    use std::sync::Arc;

    fn env() -> Env {
        let topo = Topology::ring(5, 100.0).unwrap();
        let table = PathTable::build(
            &topo,
            2,
            PathOrdering::Hops,
            &NsrModel::PerKm(1e-4),
            &TransmissionConfig::with_channels(4),
        )
        .unwrap();
        Env::new(Arc::new(table), EpisodeConfig::fixed(50, 3)).unwrap()
    }

    #[test]
    fn empty_network_has_zero_occupancy() {
        let e = env();
        let spec = ObservationSpec::for_table(e.table(), true);
        let obs = encode_observation(&e, &spec, true);
        assert!(obs.edge.iter().all(|&v| v == 0.0));
        assert_eq!(obs.edge.len(), 5 * 8);
        assert_eq!(obs.global.iter().filter(|&&v| v == 1.0).count(), 3);
        assert!(obs.mask.iter().all(|&m| m));
    }

    #[test]
    fn occupancy_rows_follow_state() {
        let mut e = env();
        let spec = ObservationSpec::for_table(e.table(), true);
        // allocate until some two-hop lightpath exists on channel 3
        loop {
            let r = e.request();
            let path = &e.table().paths(r.source, r.destination)[0];
            if path.hops == 2 {
                let links = path.links.clone();
                e.step(Action::new(0, 3));
                let obs = encode_observation(&e, &spec, true);
                for l in 0..5 {
                    let row = &obs.edge[l * 8..l * 8 + 4];
                    if links.contains(&l) {
                        assert_eq!(row, &[0.0, 0.0, 0.0, 1.0]);
                        assert!(obs.edge[l * 8 + 7] > 0.0 && obs.edge[l * 8 + 7] <= 1.0);
                    } else {
                        assert!(row.iter().all(|&v| v == 0.0));
                    }
                }
                break;
            }
            e.block();
        }
        // cross-check every cell after a longer run
        while !e.is_terminated() {
            let m = e.action_mask();
            match lightpath_core::heuristics::ksp_ff(&m) {
                Some(a) => e.step(a),
                None => e.block(),
            };
            if e.is_terminated() {
                break;
            }
            let obs = encode_observation(&e, &spec, true);
            for l in 0..5 {
                for ch in 0..4 {
                    let occupied = e.state().cell(l, ch) != 0;
                    assert_eq!(obs.edge[l * 8 + ch] == 1.0, occupied);
                }
            }
            assert_eq!(obs.mask, e.action_mask().cells());
        }
    }

    #[test]
    fn batch_shapes() {
        let e = env();
        let spec = ObservationSpec::for_table(e.table(), false);
        let obs = encode_observation(&e, &spec, true);
        let batch = GraphBatch::from_observations(&[&obs, &obs, &obs], e.table());
        assert_eq!(batch.nodes, 15);
        assert_eq!(batch.edges, 15);
        assert_eq!(batch.edge_features.cols, 4);
        assert_eq!(batch.msg_edge.len(), 30);
        assert_eq!(batch.mask.len(), 3 * 8);
        // every path readout row sums its weights to one
        let mut sums = vec![0.0; 6];
        for &(o, _, w) in batch.path_readout.iter() {
            sums[o] += w;
        }
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-12));
    }
}
