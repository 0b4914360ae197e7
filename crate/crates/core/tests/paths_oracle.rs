//! K-shortest paths checked against exhaustive simple-path enumeration.

use std::cmp::Ordering;

use lightpath_core::{k_shortest_paths, NsrModel, PathOrdering, PathTable, Topology, TransmissionConfig};
use proptest::prelude::*;

fn nsfnet() -> Topology {
    Topology::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/topologies/nsfnet.json")).unwrap()
}

/// Every simple path from `src` to `dst` as (hops, length, nodes, links).
fn all_simple_paths(t: &Topology, src: usize, dst: usize) -> Vec<(usize, f64, Vec<usize>, Vec<usize>)> {
    fn dfs(
        t: &Topology,
        dst: usize,
        nodes: &mut Vec<usize>,
        links: &mut Vec<usize>,
        on_path: &mut Vec<bool>,
        out: &mut Vec<(usize, f64, Vec<usize>, Vec<usize>)>,
    ) {
        let u = *nodes.last().unwrap();
        if u == dst {
            let length = links.iter().map(|&l| t.link(l).length_km).sum();
            out.push((links.len(), length, nodes.clone(), links.clone()));
            return;
        }
        for &(v, l) in t.neighbors(u) {
            if on_path[v] {
                continue;
            }
            on_path[v] = true;
            nodes.push(v);
            links.push(l);
            dfs(t, dst, nodes, links, on_path, out);
            nodes.pop();
            links.pop();
            on_path[v] = false;
        }
    }
    let mut on_path = vec![false; t.node_count()];
    on_path[src] = true;
    let mut out = Vec::new();
    dfs(t, dst, &mut vec![src], &mut Vec::new(), &mut on_path, &mut out);
    out
}

fn oracle(t: &Topology, src: usize, dst: usize, k: usize, ordering: PathOrdering) -> Vec<Vec<usize>> {
    let mut paths = all_simple_paths(t, src, dst);
    paths.sort_by(|a, b| {
        let primary = match ordering {
            PathOrdering::Hops => a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)),
            PathOrdering::Length => a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)),
        };
        if primary != Ordering::Equal {
            primary
        } else {
            a.2.cmp(&b.2)
        }
    });
    paths.into_iter().take(k).map(|p| p.2).collect()
}

#[test]
fn nsfnet_k5_matches_enumeration_for_every_pair() {
    let t = nsfnet();
    for ordering in [PathOrdering::Hops, PathOrdering::Length] {
        for a in 0..t.node_count() {
            for b in (a + 1)..t.node_count() {
                let got: Vec<Vec<usize>> = k_shortest_paths(&t, a, b, 5, ordering)
                    .into_iter()
                    .map(|p| p.nodes)
                    .collect();
                assert_eq!(got, oracle(&t, a, b, 5, ordering), "pair {a}-{b} {ordering}");
            }
        }
    }
}

#[test]
fn nsfnet_table_spot_checks() {
    let t = nsfnet();
    let table = PathTable::build(
        &t,
        5,
        PathOrdering::Hops,
        &NsrModel::PerKm(1e-5),
        &TransmissionConfig::default(),
    )
    .unwrap();
    assert_eq!(table.pair_count(), 91);
    assert!((0..91).all(|p| table.paths_by_index(p).len() == 5));
    for (a, b) in [(0, 13), (2, 9), (6, 10)] {
        let got: Vec<Vec<usize>> = table.paths(a, b).iter().map(|p| p.nodes.clone()).collect();
        assert_eq!(got, oracle(&t, a, b, 5, PathOrdering::Hops));
        for p in table.paths(a, b) {
            assert_eq!(p.hops, p.links.len());
            let len: f64 = p.links.iter().map(|&l| t.link(l).length_km).sum();
            assert_eq!(p.length_km, len);
            assert!(p.capacity_gbps > 0.0);
        }
    }
}

#[test]
fn large_k_returns_every_simple_path() {
    let t = Topology::new(
        &["A", "B", "C", "D"],
        &[("A", "B", 1.0), ("B", "C", 2.0), ("C", "D", 1.0), ("A", "D", 5.0), ("A", "C", 2.5)],
    )
    .unwrap();
    for (a, b) in [(0, 3), (1, 3), (0, 2)] {
        let all = all_simple_paths(&t, a, b).len();
        assert_eq!(k_shortest_paths(&t, a, b, 50, PathOrdering::Length).len(), all);
    }
}

fn random_graph() -> impl Strategy<Value = Topology> {
    (4usize..8).prop_flat_map(|n| {
        let extra = prop::collection::vec((0..n, 0..n, 1u32..6), 0..10);
        let spine = prop::collection::vec(1u32..6, n - 1);
        (Just(n), spine, extra).prop_map(|(n, spine, extra)| {
            let nodes: Vec<String> = (0..n).map(|i| i.to_string()).collect();
            let mut links: Vec<(String, String, f64)> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (i, w) in spine.into_iter().enumerate() {
                seen.insert((i, i + 1));
                links.push((i.to_string(), (i + 1).to_string(), w as f64 * 100.0));
            }
            for (a, b, w) in extra {
                let key = (a.min(b), a.max(b));
                if a != b && seen.insert(key) {
                    links.push((a.to_string(), b.to_string(), w as f64 * 100.0));
                }
            }
            Topology::new(&nodes, &links).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn yen_agrees_with_enumeration(t in random_graph(), k in 1usize..7, hops in any::<bool>()) {
        let ordering = if hops { PathOrdering::Hops } else { PathOrdering::Length };
        let n = t.node_count();
        for a in 0..n {
            for b in (a + 1)..n {
                let got: Vec<Vec<usize>> = k_shortest_paths(&t, a, b, k, ordering)
                    .into_iter()
                    .map(|p| p.nodes)
                    .collect();
                prop_assert_eq!(&got, &oracle(&t, a, b, k, ordering));
                // byte-for-byte repeatable
                let again: Vec<Vec<usize>> = k_shortest_paths(&t, a, b, k, ordering)
                    .into_iter()
                    .map(|p| p.nodes)
                    .collect();
                prop_assert_eq!(got, again);
            }
        }
    }
}
