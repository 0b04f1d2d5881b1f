use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

/// Line chart of mean accuracy against the number of global nodes.
pub fn sweep_chart(path: &Path, points: &[(usize, f64)], dataset: &str) -> Result<()> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("plot: {e}"))?;
    let x_lo = points.iter().map(|p| p.0).min().unwrap_or(0) as f64;
    let x_hi = points.iter().map(|p| p.0).max().unwrap_or(0) as f64;
    let y_lo = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_hi = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (y_lo, y_hi) = if y_lo.is_finite() { (y_lo, y_hi) } else { (0.0, 100.0) };
    let pad = ((y_hi - y_lo) * 0.1).max(0.5);
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{dataset}: accuracy vs global nodes"), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(48)
        .build_cartesian_2d((x_lo - 0.5)..(x_hi + 0.5), (y_lo - pad)..(y_hi + pad))
        .map_err(|e| anyhow!("plot: {e}"))?;
    chart
        .configure_mesh()
        .x_desc("n_g")
        .y_desc("accuracy (%)")
        .x_labels(points.len().clamp(2, 12))
        .draw()
        .map_err(|e| anyhow!("plot: {e}"))?;
    let series: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x as f64, y)).collect();
    chart
        .draw_series(LineSeries::new(series.clone(), &BLUE))
        .map_err(|e| anyhow!("plot: {e}"))?;
    chart
        .draw_series(series.into_iter().map(|p| Circle::new(p, 4, BLUE.filled())))
        .map_err(|e| anyhow!("plot: {e}"))?;
    root.present().map_err(|e| anyhow!("plot: {e}"))?;
    Ok(())
}
