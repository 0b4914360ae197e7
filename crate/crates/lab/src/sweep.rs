//! Cross-product heuristic evaluation over K, path ordering and episode length.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lightpath_core::exec::{self, Execution};
use lightpath_core::{EpisodeConfig, Heuristic, NsrModel, PathOrdering, PathTable, Topology, TransmissionConfig};

use crate::episode::accepted_at;
use crate::stats::{summarize, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EpisodeLength {
    /// Ends at the first blocked request.
    FirstBlocking,
    Requests(usize),
}

impl fmt::Display for EpisodeLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EpisodeLength::FirstBlocking => f.write_str("first_blocking"),
            EpisodeLength::Requests(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for EpisodeLength {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "first_blocking" | "fb" => Ok(EpisodeLength::FirstBlocking),
            other => other
                .replace('_', "")
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .map(EpisodeLength::Requests)
                .ok_or_else(|| format!("bad episode length {s:?}")),
        }
    }
}

/// The network every sweep cell shares.
#[derive(Debug, Clone)]
pub struct Network {
    pub topology: Topology,
    pub nsr: NsrModel,
    pub transmission: TransmissionConfig,
}

impl Network {
    pub fn table(&self, k: usize, ordering: PathOrdering) -> lightpath_core::Result<PathTable> {
        PathTable::build(&self.topology, k, ordering, &self.nsr, &self.transmission)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub methods: Vec<Heuristic>,
    pub ks: Vec<usize>,
    pub orderings: Vec<PathOrdering>,
    pub lengths: Vec<EpisodeLength>,
    pub seeds: Vec<u64>,
    pub request_gbps: f64,
    /// Longest first-blocking episode when no request is ever blocked.
    pub first_blocking_cap: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.methods.is_empty()
            || self.ks.is_empty()
            || self.orderings.is_empty()
            || self.lengths.is_empty()
            || self.seeds.is_empty()
        {
            return Err("every sweep dimension needs at least one value".into());
        }
        if self.ks.contains(&0) {
            return Err("K must be at least 1".into());
        }
        Ok(())
    }

    fn horizon(&self) -> usize {
        let fixed = self
            .lengths
            .iter()
            .filter_map(|l| match l {
                EpisodeLength::Requests(n) => Some(*n),
                EpisodeLength::FirstBlocking => None,
            })
            .max()
            .unwrap_or(0);
        if self.lengths.contains(&EpisodeLength::FirstBlocking) {
            fixed.max(self.first_blocking_cap)
        } else {
            fixed
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub ordering: String,
    pub k: usize,
    pub episode_length: String,
    pub seed: u64,
    pub accepted: usize,
    pub blocked: usize,
    pub first_block_step: Option<usize>,
}

/// Runs every (method, ordering, K, seed) once to the longest horizon and
/// reads all episode lengths off that run. Rows come out ordered by
/// ordering, K, method, length, seed regardless of scheduling.
pub fn sweep(net: &Network, spec: &SweepSpec, execution: Execution) -> anyhow::Result<Vec<SweepRow>> {
    spec.validate().map_err(anyhow::Error::msg)?;
    let horizon = spec.horizon();
    let mut checkpoints: Vec<usize> = spec
        .lengths
        .iter()
        .filter_map(|l| match l {
            EpisodeLength::Requests(n) => Some(*n),
            EpisodeLength::FirstBlocking => None,
        })
        .collect();
    checkpoints.push(horizon);

    let mut cells = Vec::new();
    for &ordering in &spec.orderings {
        for &k in &spec.ks {
            let table = Arc::new(net.table(k, ordering)?);
            for &method in &spec.methods {
                cells.push((table.clone(), ordering, k, method));
            }
        }
    }
    let seeds = spec.seeds.len();
    let runs = exec::map_indexed(execution, cells.len() * seeds, |i| {
        let (table, _, _, method) = &cells[i / seeds];
        accepted_at(method, table, spec.seeds[i % seeds], spec.request_gbps, &checkpoints)
    });

    let mut rows = Vec::with_capacity(runs.len() * spec.lengths.len());
    let mut runs = runs.into_iter();
    for (_, ordering, k, method) in &cells {
        let cell_runs: Vec<_> = runs.by_ref().take(seeds).collect::<Result<_, _>>()?;
        for &length in &spec.lengths {
            for (seed, (counts, first)) in spec.seeds.iter().zip(&cell_runs) {
                let (accepted, blocked, first_block_step) = match length {
                    EpisodeLength::Requests(n) => {
                        let idx = checkpoints.iter().position(|&c| c == n).expect("checkpoint");
                        let fb = first.filter(|&f| f < n);
                        (counts[idx], n - counts[idx], fb)
                    }
                    EpisodeLength::FirstBlocking => match first {
                        Some(f) => (*f, 1, Some(*f)),
                        None => (horizon, 0, None),
                    },
                };
                rows.push(SweepRow {
                    method: method.to_string(),
                    ordering: ordering.to_string(),
                    k: *k,
                    episode_length: length.to_string(),
                    seed: *seed,
                    accepted,
                    blocked,
                    first_block_step,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub ordering: String,
    pub k: usize,
    pub episode_length: String,
    pub summary: Summary,
}

/// Per-cell statistics of accepted services, in first-appearance order.
pub fn summarize_rows(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.ordering.clone(), r.k, r.episode_length.clone());
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r.accepted as f64);
    }
    order
        .into_iter()
        .map(|key| {
            let summary = summarize(&groups[&key]).expect("nonempty group");
            CellSummary {
                method: key.0,
                ordering: key.1,
                k: key.2,
                episode_length: key.3,
                summary,
            }
        })
        .collect()
}

/// Mean accepted services for one cell, if present.
pub fn cell_mean(cells: &[CellSummary], method: Heuristic, ordering: PathOrdering, k: usize, length: EpisodeLength) -> Option<f64> {
    let (m, o, l) = (method.to_string(), ordering.to_string(), length.to_string());
    cells
        .iter()
        .find(|c| c.method == m && c.ordering == o && c.k == k && c.episode_length == l)
        .map(|c| c.summary.mean)
}

/// Table of means: one line per (method, ordering, K), one column per length.
pub fn format_table(cells: &[CellSummary], lengths: &[EpisodeLength]) -> String {
    let mut out = format!("{:<8} {:<8} {:>3}", "method", "ordering", "K");
    for l in lengths {
        out.push_str(&format!(" {:>14}", l.to_string()));
    }
    out.push('\n');
    let mut seen = Vec::new();
    for c in cells {
        let key = (c.method.clone(), c.ordering.clone(), c.k);
        if seen.contains(&key) {
            continue;
        }
        seen.push(key.clone());
        out.push_str(&format!("{:<8} {:<8} {:>3}", key.0, key.1, key.2));
        for l in lengths {
            let ls = l.to_string();
            match cells
                .iter()
                .find(|x| x.method == key.0 && x.ordering == key.1 && x.k == key.2 && x.episode_length == ls)
            {
                Some(x) => out.push_str(&format!(" {:>14.1}", x.summary.mean)),
                None => out.push_str(&format!(" {:>14}", "-")),
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_rows<W: Write>(writer: W, rows: &[SweepRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> csv::Result<Vec<SweepRow>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Plain episode config for one sweep cell, for cross-checks.
pub fn episode_config(length: EpisodeLength, seed: u64, cap: usize, request_gbps: f64) -> EpisodeConfig {
    let mut cfg = match length {
        EpisodeLength::Requests(n) => EpisodeConfig::fixed(n, seed),
        EpisodeLength::FirstBlocking => {
            let mut c = EpisodeConfig::fixed(cap, seed);
            c.termination = lightpath_core::Termination::FirstBlocking;
            c
        }
    };
    cfg.request_gbps = request_gbps;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::run_episode;

    fn network() -> Network {
        Network {
            topology: Topology::new(
                &["a", "b", "c", "d", "e"],
                &[
                    ("a", "b", 300.0),
                    ("b", "c", 500.0),
                    ("c", "d", 200.0),
                    ("d", "e", 600.0),
                    ("e", "a", 400.0),
                    ("b", "d", 900.0),
                ],
            )
            .unwrap(),
            nsr: NsrModel::PerKm(4e-4),
            transmission: TransmissionConfig::with_channels(3),
        }
    }

    fn spec() -> SweepSpec {
        SweepSpec {
            methods: vec![Heuristic::KspFf, Heuristic::FfKsp],
            ks: vec![1, 2, 3],
            orderings: vec![PathOrdering::Hops, PathOrdering::Length],
            lengths: vec![
                EpisodeLength::FirstBlocking,
                EpisodeLength::Requests(30),
                EpisodeLength::Requests(60),
            ],
            seeds: (10..16).collect(),
            request_gbps: 100.0,
            first_blocking_cap: 60,
        }
    }

    #[test]
    fn rows_match_direct_episodes() {
        let net = network();
        let spec = spec();
        let rows = sweep(&net, &spec, Execution::Sequential).unwrap();
        assert_eq!(rows.len(), 2 * 3 * 2 * 3 * 6);
        for r in rows.iter().step_by(5) {
            let ordering: PathOrdering = r.ordering.parse().unwrap();
            let method: Heuristic = r.method.parse().unwrap();
            let length: EpisodeLength = r.episode_length.parse().unwrap();
            let table = Arc::new(net.table(r.k, ordering).unwrap());
            let direct = run_episode(&method, &table, &episode_config(length, r.seed, 60, 100.0)).unwrap();
            assert_eq!((r.accepted, r.blocked, r.first_block_step), (direct.accepted, direct.blocked, direct.first_block_step));
        }
    }

    #[test]
    fn parallel_equals_sequential_and_k1_methods_agree() {
        let net = network();
        let spec = spec();
        let a = sweep(&net, &spec, Execution::Sequential).unwrap();
        let b = sweep(&net, &spec, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let k1: Vec<&SweepRow> = a.iter().filter(|r| r.k == 1).collect();
        let ksp: Vec<_> = k1.iter().filter(|r| r.method == "ksp_ff").map(|r| (&r.ordering, &r.episode_length, r.seed, r.accepted)).collect();
        let ff: Vec<_> = k1.iter().filter(|r| r.method == "ff_ksp").map(|r| (&r.ordering, &r.episode_length, r.seed, r.accepted)).collect();
        assert_eq!(ksp, ff);
    }

    #[test]
    fn csv_round_trip() {
        let rows = sweep(&network(), &spec(), Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        let header = String::from_utf8(buf.clone()).unwrap();
        assert!(header.starts_with("method,ordering,k,episode_length,seed,accepted,blocked,first_block_step\n"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn summaries_and_table() {
        let rows = sweep(&network(), &spec(), Execution::Sequential).unwrap();
        let cells = summarize_rows(&rows);
        assert_eq!(cells.len(), 2 * 3 * 2 * 3);
        assert!(cells.iter().all(|c| c.summary.n == 6));
        let m = cell_mean(&cells, Heuristic::KspFf, PathOrdering::Hops, 2, EpisodeLength::Requests(30)).unwrap();
        let direct: f64 = rows
            .iter()
            .filter(|r| r.method == "ksp_ff" && r.ordering == "hops" && r.k == 2 && r.episode_length == "30")
            .map(|r| r.accepted as f64)
            .sum::<f64>()
            / 6.0;
        assert_eq!(m, direct);
        let table = format_table(&cells, &spec().lengths);
        assert_eq!(table.lines().count(), 1 + 12);
    }

    #[test]
    fn length_parsing() {
        assert_eq!("10_000".parse::<EpisodeLength>().unwrap(), EpisodeLength::Requests(10_000));
        assert_eq!("first_blocking".parse::<EpisodeLength>().unwrap(), EpisodeLength::FirstBlocking);
        assert!("0".parse::<EpisodeLength>().is_err());
    }
}
