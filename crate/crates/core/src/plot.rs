//! Static SVG figures: training curves, Bland-Altman and HR scatter plots.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::train::LogRow;

fn draw_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// Loss terms and monitor IPR against optimizer step.
pub fn training_curves(rows: &[LogRow], out: &Path) -> Result<()> {
    let root = SVGBackend::new(out, (900, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (top, bottom) = root.split_vertically(350);
    let steps = rows.iter().map(|r| r.step).max().unwrap_or(1).max(1) as f64;

    let losses: Vec<_> = rows.iter().filter_map(|r| r.loss.map(|l| (r.step as f64, l))).collect();
    let (lo, hi) = bounds(losses.iter().flat_map(|(_, l)| [l.total, l.positive, l.negative]));
    let mut chart = ChartBuilder::on(&top)
        .caption("Contrastive loss", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..steps, lo..hi)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("step").draw().map_err(draw_err)?;
    let series: [(&str, RGBColor, fn(&crate::losses::LossBreakdown) -> f64); 3] =
        [("L", BLACK, |l| l.total), ("Lp", BLUE, |l| l.positive), ("Ln", RED, |l| l.negative)];
    for (name, color, f) in series {
        chart
            .draw_series(LineSeries::new(losses.iter().map(|(s, l)| (*s, f(l))), color))
            .map_err(draw_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(draw_err)?;

    let ipr: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.ipr.map(|v| (r.step as f64, v))).collect();
    let mut chart = ChartBuilder::on(&bottom)
        .caption("Monitor IPR", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..steps, 0.0..1.0)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("step").y_desc("IPR").draw().map_err(draw_err)?;
    chart.draw_series(LineSeries::new(ipr.iter().cloned(), BLUE)).map_err(draw_err)?;
    chart.draw_series(ipr.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}

fn valid_pairs(report: &EvalReport) -> Vec<(f64, f64)> {
    report
        .rows
        .iter()
        .filter(|r| !r.degenerate)
        .filter_map(|r| Some((r.hr_pred?, r.hr_true?)))
        .collect()
}

/// Difference against mean, with the bias and 95 % limits of agreement.
pub fn bland_altman(report: &EvalReport, out: &Path) -> Result<()> {
    let pts: Vec<(f64, f64)> = valid_pairs(report).iter().map(|(p, t)| ((p + t) / 2.0, p - t)).collect();
    if pts.is_empty() {
        return Err(Error::NoGroundTruth("report has no scored windows".into()));
    }
    let n = pts.len() as f64;
    let bias = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sd = (pts.iter().map(|p| (p.1 - bias).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1).chain([bias - 2.0 * sd, bias + 2.0 * sd]));
    let root = SVGBackend::new(out, (700, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Bland-Altman", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("mean HR (bpm)").y_desc("predicted - reference (bpm)").draw().map_err(draw_err)?;
    chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(draw_err)?;
    for (y, style) in [(bias, BLACK), (bias + 1.96 * sd, RED), (bias - 1.96 * sd, RED)] {
        chart.draw_series(LineSeries::new([(x0, y), (x1, y)], style)).map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Predicted against reference HR with the identity line.
pub fn hr_scatter(report: &EvalReport, out: &Path) -> Result<()> {
    let pts = valid_pairs(report);
    if pts.is_empty() {
        return Err(Error::NoGroundTruth("report has no scored windows".into()));
    }
    let (lo, hi) = bounds(pts.iter().flat_map(|&(p, t)| [p, t]));
    let root = SVGBackend::new(out, (600, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Heart rate", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(55)
        .build_cartesian_2d(lo..hi, lo..hi)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("reference (bpm)").y_desc("predicted (bpm)").draw().map_err(draw_err)?;
    chart.draw_series(LineSeries::new([(lo, lo), (hi, hi)], BLACK)).map_err(draw_err)?;
    chart.draw_series(pts.iter().map(|&(p, t)| Circle::new((t, p), 3, BLUE.filled()))).map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
