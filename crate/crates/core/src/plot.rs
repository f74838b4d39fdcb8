//! SVG plots of CMC curves and training losses.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::identification::RetrievalReport;
use crate::train::EpochRecord;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

const PALETTE: [RGBColor; 6] = [RED, BLUE, GREEN, MAGENTA, CYAN, BLACK];

/// One CMC curve (Rank-1..Rank-k) per scoring in `report.breakdown`.
pub fn cmc_plot(path: &Path, report: &RetrievalReport) -> Result<()> {
    let depth = report.cmc.len().max(1);
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("CMC {}", report.protocol), ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(40)
        .build_cartesian_2d(1f64..depth as f64, 0f64..1.0)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("rank").y_desc("accuracy").draw().map_err(plot_err)?;
    let curve = |cmc: &[f64]| cmc.iter().enumerate().map(|(k, &v)| ((k + 1) as f64, v)).collect::<Vec<_>>();
    chart
        .draw_series(LineSeries::new(curve(&report.cmc), PALETTE[0].stroke_width(2)))
        .map_err(plot_err)?
        .label(report.scoring.clone())
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], PALETTE[0]));
    for (i, (name, summary)) in report.breakdown.iter().enumerate() {
        let color = PALETTE[(i + 1) % PALETTE.len()];
        let points = vec![(1.0, summary.rank1), (5f64.min(depth as f64), summary.rank5), (10f64.min(depth as f64), summary.rank10)];
        chart
            .draw_series(LineSeries::new(points, color))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).position(SeriesLabelPosition::LowerRight).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Per-epoch loss components on a log scale.
pub fn loss_plot(path: &Path, records: &[EpochRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Empty("no epochs to plot".into()));
    }
    type Series = (&'static str, fn(&EpochRecord) -> f64);
    let series: [Series; 6] = [
        ("identity", |r| r.identity),
        ("triplet", |r| r.triplet),
        ("orthogonality", |r| r.orthogonality),
        ("action", |r| r.action),
        ("verification", |r| r.verification),
        ("total", |r| r.total),
    ];
    let floor = 1e-6;
    let max = records.iter().flat_map(|r| series.iter().map(move |(_, f)| f(r))).fold(floor, f64::max);
    let last = records.last().map_or(1, |r| r.epoch) as f64;
    let first = records[0].epoch as f64;
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training losses", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(first..last.max(first + 1.0), (floor..max * 1.5).log_scale())
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("epoch").y_desc("loss").draw().map_err(plot_err)?;
    for (i, (name, f)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<(f64, f64)> = records.iter().map(|r| (r.epoch as f64, f(r).max(floor))).collect();
        chart
            .draw_series(LineSeries::new(points, color))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
