//! Static SVG figures: learning curve, boxplots, paired deltas.

use std::path::Path;

use plotters::prelude::*;

use crate::curve::CurveRow;
use crate::paired::PairedResult;
use crate::stats::Summary;

fn err<E: std::fmt::Display>(e: E) -> anyhow::Error {
    anyhow::anyhow!("plot: {e}")
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let span = (hi - lo).abs().max(1.0);
    (lo - 0.05 * span, hi + 0.05 * span)
}

/// Mean accepted services per update with a one-std band and optional baseline.
pub fn learning_curve(rows: &[CurveRow], baseline: Option<(&str, f64)>, path: &Path) -> anyhow::Result<()> {
    let pts: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.env_steps as f64, r.mean_accepted?, r.std_accepted.unwrap_or(0.0))))
        .collect();
    anyhow::ensure!(!pts.is_empty(), "no finished episodes to plot");
    let x_max = pts.iter().map(|p| p.0).fold(1.0, f64::max);
    let mut lo = pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let mut hi = pts.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    if let Some((_, b)) = baseline {
        lo = lo.min(b);
        hi = hi.max(b);
    }
    let (lo, hi) = padded(lo, hi);

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x_max, lo..hi)
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("environment steps")
        .y_desc("accepted services")
        .draw()
        .map_err(err)?;
    let band: Vec<(f64, f64)> = pts
        .iter()
        .map(|p| (p.0, p.1 + p.2))
        .chain(pts.iter().rev().map(|p| (p.0, p.1 - p.2)))
        .collect();
    chart
        .draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2))))
        .map_err(err)?;
    chart
        .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), &BLUE))
        .map_err(err)?
        .label("agent")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    if let Some((name, b)) = baseline {
        chart
            .draw_series(LineSeries::new(vec![(0.0, b), (x_max, b)], RED.stroke_width(2)))
            .map_err(err)?
            .label(name)
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Box-and-whisker plot, one box per labelled summary.
pub fn boxplots(cells: &[(String, Summary)], y_desc: &str, path: &Path) -> anyhow::Result<()> {
    anyhow::ensure!(!cells.is_empty(), "nothing to plot");
    let lo = cells.iter().map(|c| c.1.min).fold(f64::INFINITY, f64::min);
    let hi = cells.iter().map(|c| c.1.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = padded(lo, hi);
    let n = cells.len();
    let root = SVGBackend::new(path, (120 + 90 * n as u32, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(60)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5..(n as f64 - 0.5), lo..hi)
        .map_err(err)?;
    let labels: Vec<String> = cells.iter().map(|c| c.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 && (i as usize) < labels.len() {
                labels[i as usize].clone()
            } else {
                String::new()
            }
        })
        .y_desc(y_desc)
        .draw()
        .map_err(err)?;
    for (i, (_, s)) in cells.iter().enumerate() {
        let x = i as f64;
        let w = 0.3;
        chart
            .draw_series(std::iter::once(Rectangle::new([(x - w, s.q1), (x + w, s.q3)], BLUE.mix(0.3).filled())))
            .map_err(err)?;
        chart
            .draw_series(std::iter::once(Rectangle::new([(x - w, s.q1), (x + w, s.q3)], BLUE)))
            .map_err(err)?;
        let lines = [
            vec![(x - w, s.median), (x + w, s.median)],
            vec![(x, s.q3), (x, s.whisker_high)],
            vec![(x, s.q1), (x, s.whisker_low)],
            vec![(x - w / 2.0, s.whisker_high), (x + w / 2.0, s.whisker_high)],
            vec![(x - w / 2.0, s.whisker_low), (x + w / 2.0, s.whisker_low)],
        ];
        for l in lines {
            chart.draw_series(LineSeries::new(l, &BLACK)).map_err(err)?;
        }
        chart
            .draw_series(std::iter::once(Circle::new((x, s.mean), 3, RED.filled())))
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Per-seed bars of `accepted_a - accepted_b`.
pub fn paired_deltas(rows: &[PairedResult], path: &Path) -> anyhow::Result<()> {
    anyhow::ensure!(!rows.is_empty(), "nothing to plot");
    let lo = rows.iter().map(|r| r.delta).min().unwrap_or(0).min(0) as f64;
    let hi = rows.iter().map(|r| r.delta).max().unwrap_or(0).max(0) as f64;
    let (lo, hi) = padded(lo, hi);
    let root = SVGBackend::new(path, (900, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5..(rows.len() as f64 - 0.5), lo..hi)
        .map_err(err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_desc("episode")
        .y_desc("difference in accepted services")
        .draw()
        .map_err(err)?;
    chart
        .draw_series(rows.iter().enumerate().map(|(i, r)| {
            let color = if r.delta >= 0 { GREEN.mix(0.8) } else { RED.mix(0.8) };
            Rectangle::new([(i as f64 - 0.4, 0.0), (i as f64 + 0.4, r.delta as f64)], color.filled())
        }))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::summarize;

    #[test]
    fn figures_render() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<CurveRow> = (1..20)
            .map(|u| CurveRow {
                update: u,
                env_steps: u as u64 * 1000,
                episodes: 4,
                mean_accepted: Some(20.0 + u as f64 * 0.5),
                std_accepted: Some(2.0),
                lr: 1e-3,
                loss: 0.0,
                policy_loss: 0.0,
                value_loss: 0.0,
                entropy: 0.0,
                clip_fraction: 0.0,
                approx_kl: 0.0,
                grad_norm: 0.0,
            })
            .collect();
        let curve = dir.path().join("curve.svg");
        learning_curve(&rows, Some(("ksp_ff", 25.0)), &curve).unwrap();
        let svg = std::fs::read_to_string(&curve).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("ksp_ff"));

        let a: Vec<f64> = (0..50).map(|i| (i * 7 % 13) as f64).collect();
        let cells = vec![
            ("a".to_string(), summarize(&a).unwrap()),
            ("b".to_string(), summarize(&[3.0, 4.0, 5.0]).unwrap()),
        ];
        boxplots(&cells, "accepted", &dir.path().join("box.svg")).unwrap();

        let pr: Vec<PairedResult> = (0..10)
            .map(|i| PairedResult {
                seed: i,
                accepted_a: 10,
                accepted_b: i as usize,
                delta: 10 - i as i64,
            })
            .collect();
        paired_deltas(&pr, &dir.path().join("paired.svg")).unwrap();
    }
}
