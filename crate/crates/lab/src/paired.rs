//! Paired comparison of two policies on identical request sequences.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use lightpath_core::exec::{self, Execution};
use lightpath_core::{Env, EpisodeConfig, PathTable, Policy};

use crate::episode::run_episode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedResult {
    pub seed: u64,
    pub accepted_a: usize,
    pub accepted_b: usize,
    pub delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub policy_a: String,
    pub policy_b: String,
    pub episodes: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub mean_delta: f64,
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// Mean extra throughput of A over B.
    pub mean_gain_tbps: f64,
}

/// Runs A and B on every seed; both consume the same request stream.
pub fn paired_eval(
    a: &dyn Policy,
    b: &dyn Policy,
    table: &Arc<PathTable>,
    seeds: &[u64],
    template: &EpisodeConfig,
    execution: Execution,
) -> anyhow::Result<(Vec<PairedResult>, PairedSummary)> {
    anyhow::ensure!(!seeds.is_empty(), "no seeds to evaluate");
    let results = exec::map_indexed(execution, seeds.len(), |i| -> anyhow::Result<PairedResult> {
        let cfg = (*template).with_seed(seeds[i]);
        let ra = run_episode(a, table, &cfg)?;
        let rb = run_episode(b, table, &cfg)?;
        Ok(PairedResult {
            seed: seeds[i],
            accepted_a: ra.accepted,
            accepted_b: rb.accepted,
            delta: ra.accepted as i64 - rb.accepted as i64,
        })
    });
    let rows: Vec<PairedResult> = results.into_iter().collect::<anyhow::Result<_>>()?;
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&PairedResult) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean_delta = mean(&|r| r.delta as f64);
    let summary = PairedSummary {
        policy_a: a.name(),
        policy_b: b.name(),
        episodes: rows.len(),
        mean_a: mean(&|r| r.accepted_a as f64),
        mean_b: mean(&|r| r.accepted_b as f64),
        mean_delta,
        wins: rows.iter().filter(|r| r.delta > 0).count(),
        losses: rows.iter().filter(|r| r.delta < 0).count(),
        ties: rows.iter().filter(|r| r.delta == 0).count(),
        mean_gain_tbps: mean_delta * template.request_gbps / 1000.0,
    };
    Ok((rows, summary))
}

/// The (source, destination) sequence an episode with `config` presents,
/// independent of any policy.
pub fn request_sequence(table: &Arc<PathTable>, config: &EpisodeConfig) -> lightpath_core::Result<Vec<(usize, usize)>> {
    let mut env = Env::new(table.clone(), *config)?;
    let mut out = Vec::with_capacity(config.requests);
    while !env.is_terminated() {
        let r = env.request();
        out.push((r.source, r.destination));
        env.block();
    }
    Ok(out)
}

pub fn write_rows<W: Write>(writer: W, rows: &[PairedResult]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(reader: R) -> csv::Result<Vec<PairedResult>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::run_episode_traced;
    use lightpath_core::{Heuristic, NsrModel, PathOrdering, RandomValid, Topology, TransmissionConfig};

    fn table() -> Arc<PathTable> {
        let topo = Topology::ring(6, 300.0).unwrap();
        Arc::new(
            PathTable::build(
                &topo,
                2,
                PathOrdering::Hops,
                &NsrModel::PerKm(5e-4),
                &TransmissionConfig::with_channels(3),
            )
            .unwrap(),
        )
    }

    #[test]
    fn identical_policies_tie_everywhere() {
        let seeds: Vec<u64> = (0..8).collect();
        let (rows, s) = paired_eval(
            &Heuristic::KspFf,
            &Heuristic::KspFf,
            &table(),
            &seeds,
            &EpisodeConfig::fixed(60, 0),
            Execution::Parallel,
        )
        .unwrap();
        assert!(rows.iter().all(|r| r.delta == 0));
        assert_eq!((s.ties, s.wins, s.mean_delta), (8, 0, 0.0));
    }

    #[test]
    fn both_sides_see_the_same_requests() {
        let t = table();
        for seed in 0..5 {
            let cfg = EpisodeConfig::fixed(80, seed);
            let (_, ta) = run_episode_traced(&Heuristic::KspFf, &t, &cfg).unwrap();
            let (_, tb) = run_episode_traced(&RandomValid, &t, &cfg).unwrap();
            let pa: Vec<_> = ta.iter().map(|r| (r.source, r.destination)).collect();
            let pb: Vec<_> = tb.iter().map(|r| (r.source, r.destination)).collect();
            assert_eq!(pa, pb);
            assert_eq!(pa, request_sequence(&t, &cfg).unwrap());
        }
    }

    #[test]
    fn summary_reconciles_with_rows() {
        let seeds: Vec<u64> = (0..10).collect();
        let (rows, s) = paired_eval(
            &Heuristic::KspFf,
            &RandomValid,
            &table(),
            &seeds,
            &EpisodeConfig::fixed(80, 0),
            Execution::Sequential,
        )
        .unwrap();
        let total: i64 = rows.iter().map(|r| r.delta).sum();
        assert!((s.mean_delta - total as f64 / 10.0).abs() < 1e-12);
        assert!((s.mean_gain_tbps - s.mean_delta * 0.1).abs() < 1e-12);
        assert_eq!(s.wins + s.losses + s.ties, 10);
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"seed,accepted_a,accepted_b,delta\n"));
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }
}
