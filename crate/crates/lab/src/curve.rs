//! Learning-curve logs written during training.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use lightpath_agent::CurvePoint;

pub const CURVE_FILE: &str = "curve.csv";

/// Flat CSV form of a [`CurvePoint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub update: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_accepted: Option<f64>,
    pub std_accepted: Option<f64>,
    pub lr: f64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub grad_norm: f64,
}

impl From<&CurvePoint> for CurveRow {
    fn from(p: &CurvePoint) -> Self {
        let l = &p.stats.loss;
        Self {
            update: p.update,
            env_steps: p.env_steps,
            episodes: p.episodes,
            mean_accepted: p.mean_accepted,
            std_accepted: p.std_accepted,
            lr: p.stats.lr,
            loss: l.total,
            policy_loss: l.policy,
            value_loss: l.value,
            entropy: l.entropy,
            clip_fraction: l.clip_fraction,
            approx_kl: l.approx_kl,
            grad_norm: p.stats.grad_norm,
        }
    }
}

/// Appends rows to a CSV stream; the header is written with the first row.
pub struct CurveWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> CurveWriter<W> {
    pub fn new(writer: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(writer),
        }
    }

    pub fn push(&mut self, point: &CurvePoint) -> csv::Result<()> {
        self.inner.serialize(CurveRow::from(point))?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_curve<R: Read>(reader: R) -> csv::Result<Vec<CurveRow>> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

/// Loads `curve.csv` from a training run directory.
pub fn training_curve(run_dir: &Path) -> anyhow::Result<Vec<CurveRow>> {
    let path = run_dir.join(CURVE_FILE);
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let rows = read_curve(file).with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(!rows.is_empty(), "{} has no rows", path.display());
    for pair in rows.windows(2) {
        anyhow::ensure!(
            pair[1].update > pair[0].update && pair[1].env_steps >= pair[0].env_steps,
            "{} is not ordered by update",
            path.display()
        );
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use lightpath_agent::ppo::UpdateStats;

    fn point(update: usize, mean: Option<f64>) -> CurvePoint {
        CurvePoint {
            update,
            env_steps: update as u64 * 100,
            episodes: usize::from(mean.is_some()),
            mean_accepted: mean,
            std_accepted: mean.map(|_| 1.5),
            stats: UpdateStats {
                lr: 1e-4,
                ..UpdateStats::default()
            },
        }
    }

    #[test]
    fn round_trip_through_run_directory() {
        let dir = tempfile::tempdir().unwrap();
        let file = std::fs::File::create(dir.path().join(CURVE_FILE)).unwrap();
        let mut w = CurveWriter::new(file);
        let points = [point(1, None), point(2, Some(10.25)), point(3, Some(11.0))];
        for p in &points {
            w.push(p).unwrap();
        }
        drop(w);
        let rows = training_curve(dir.path()).unwrap();
        let expected: Vec<CurveRow> = points.iter().map(CurveRow::from).collect();
        assert_eq!(rows, expected);
    }

    #[test]
    fn missing_or_corrupt_logs_fail() {
        let dir = tempfile::tempdir().unwrap();
        assert!(training_curve(dir.path()).is_err());
        std::fs::write(dir.path().join(CURVE_FILE), "update,env_steps\nx,y\n").unwrap();
        assert!(training_curve(dir.path()).is_err());
    }
}
