//! SVG figures: metric-vs-communication curves with ±1 std bands and horizon weight-mass bars.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::Result;
use plotters::prelude::*;

use crate::runner::{read_metrics_dir, summarize, MeanStd, MethodSummary, RoundSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TestAccuracy,
    TrainGap,
    TrainObjective,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::TestAccuracy, Metric::TrainGap, Metric::TrainObjective];

    fn pick(self, r: &RoundSummary) -> MeanStd {
        match self {
            Metric::TestAccuracy => r.test_accuracy,
            Metric::TrainGap => r.train_gap,
            Metric::TrainObjective => r.train_objective,
        }
    }

    fn file(self) -> &'static str {
        match self {
            Metric::TestAccuracy => "accuracy_vs_comm.svg",
            Metric::TrainGap => "train_gap_vs_comm.svg",
            Metric::TrainObjective => "train_objective_vs_comm.svg",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::TestAccuracy => "test accuracy",
            Metric::TrainGap => "training gap",
            Metric::TrainObjective => "training objective",
        }
    }
}

/// `(comm, mean - std, mean, mean + std)` per aggregated round.
pub fn band(summary: &MethodSummary, metric: Metric) -> Vec<(f64, f64, f64, f64)> {
    summary
        .rounds
        .iter()
        .map(|r| {
            let m = metric.pick(r);
            (r.comm_cumulative as f64, m.mean - m.std, m.mean, m.mean + m.std)
        })
        .collect()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn curve_chart(path: &Path, title: &str, summaries: &[MethodSummary], metric: Metric) -> Result<()> {
    let bands: Vec<_> = summaries.iter().map(|s| band(s, metric)).collect();
    let pts = bands.iter().flatten();
    let (x0, x1) = pts.clone().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = pts.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.3)));
    let (x0, x1) = padded(x0, x1);
    let (y0, y1) = padded(y0, y1);
    let root = SVGBackend::new(path, (960, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(70)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart
        .configure_mesh()
        .x_desc("cumulative transmitted scalars")
        .y_desc(metric.label())
        .x_label_formatter(&|x| format!("{x:.2e}"))
        .draw()?;
    for (k, (s, b)) in summaries.iter().zip(&bands).enumerate() {
        let color = Palette99::pick(k).to_rgba();
        let mut poly: Vec<(f64, f64)> = b.iter().map(|p| (p.0, p.3)).collect();
        poly.extend(b.iter().rev().map(|p| (p.0, p.1)));
        chart.draw_series(std::iter::once(Polygon::new(poly, color.mix(0.2).filled())))?;
        chart
            .draw_series(LineSeries::new(b.iter().map(|p| (p.0, p.2)), color.stroke_width(2)))?
            .label(s.method.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn weight_mass_chart(path: &Path, title: &str, summaries: &[&MethodSummary]) -> Result<()> {
    let hs: Vec<usize> = summaries
        .iter()
        .flat_map(|s| s.final_weight_mass_by_h.keys().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let names: Vec<String> = summaries.iter().map(|s| s.method.clone()).collect();
    let root = SVGBackend::new(path, (960, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let n = summaries.len() as f64;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(45)
        .y_label_area_size(60)
        .build_cartesian_2d(-0.5..n - 0.5, 0.0..1.05)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(summaries.len())
        .x_label_formatter(&|x| names.get(x.round() as usize).cloned().unwrap_or_default())
        .y_desc("final weight mass")
        .draw()?;
    let width = 0.8 / hs.len().max(1) as f64;
    for (j, h) in hs.iter().enumerate() {
        let color = Palette99::pick(j).to_rgba();
        let bars: Vec<Rectangle<(f64, f64)>> = summaries
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let left = k as f64 - 0.4 + j as f64 * width;
                let m = s.final_weight_mass_by_h.get(h).copied().unwrap_or(0.0);
                Rectangle::new([(left, 0.0), (left + width, m)], color.filled())
            })
            .collect();
        chart
            .draw_series(bars)?
            .label(format!("H = {h}"))
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

/// Render every figure for the metrics found in `dir`. Empty input is a warning, not an error.
pub fn emit_plots(dir: &Path) -> Result<Vec<PathBuf>> {
    let records = read_metrics_dir(dir)?;
    let summaries: Vec<MethodSummary> = summarize(&records).into_iter().filter(|s| !s.rounds.is_empty()).collect();
    if summaries.is_empty() {
        log::warn!("no metrics found in {}; nothing to plot", dir.display());
        return Ok(vec![]);
    }
    let title = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut out = Vec::new();
    for metric in Metric::ALL {
        let p = dir.join(metric.file());
        curve_chart(&p, &format!("{title}: {}", metric.label()), &summaries, metric)?;
        out.push(p);
    }
    let with_mass: Vec<&MethodSummary> = summaries.iter().filter(|s| !s.final_weight_mass_by_h.is_empty()).collect();
    if !with_mass.is_empty() {
        let p = dir.join("weight_mass_by_H.svg");
        weight_mass_chart(&p, &format!("{title}: weight mass by horizon"), &with_mass)?;
        out.push(p);
    }
    Ok(out)
}
