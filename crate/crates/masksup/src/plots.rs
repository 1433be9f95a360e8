//! Static SVG figures.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::records::CurveRow;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(v), b.max(v)));
    if lo > hi {
        (0.0, 1.0)
    } else if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline per named series.
pub fn line_plot(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let (x0, x1) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let pad = 0.05 * (y1 - y0);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).y_desc(y_desc).draw().map_err(plot_err)?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// mIoU against corruption coverage, one line per model.
pub fn robustness_plot(path: &Path, curves: &[(String, Vec<CurveRow>)]) -> Result<()> {
    let series: Vec<_> =
        curves.iter().map(|(n, rows)| (n.clone(), rows.iter().map(|r| (r.coverage, r.miou)).collect())).collect();
    line_plot(path, "mIoU under masked corruption", "masked fraction", "mIoU", &series)
}

/// Grouped bars: one group per `groups` entry, one bar per (label, value).
pub fn grouped_bars(path: &Path, title: &str, groups: &[(String, Vec<(String, f64)>)]) -> Result<()> {
    let mut labels: Vec<String> = Vec::new();
    for (_, bars) in groups {
        for (l, _) in bars {
            if !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    let per_group = labels.len().max(1) as f64;
    let y_max = groups.iter().flat_map(|(_, b)| b.iter().map(|v| v.1)).fold(0.0f64, f64::max).max(1e-3) * 1.15;
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..groups.len().max(1) as f64, 0.0..y_max)
        .map_err(plot_err)?;
    let names: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups.len().max(1) * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - i as f64 - 0.5).abs() < 1e-6 { names.get(i).cloned().unwrap_or_default() } else { String::new() }
        })
        .y_desc("mIoU")
        .draw()
        .map_err(plot_err)?;
    for (li, label) in labels.iter().enumerate() {
        let color = PALETTE[li % PALETTE.len()];
        let rects: Vec<_> = groups
            .iter()
            .enumerate()
            .filter_map(|(gi, (_, bars))| {
                let value = bars.iter().find(|b| &b.0 == label)?.1;
                let x0 = gi as f64 + 0.1 + 0.8 * li as f64 / per_group;
                let x1 = x0 + 0.8 / per_group;
                Some(Rectangle::new([(x0, 0.0), (x1, value)], color.filled()))
            })
            .collect();
        chart
            .draw_series(rects)
            .map_err(plot_err)?
            .label(label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figures_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let lines = dir.path().join("l.svg");
        line_plot(&lines, "t", "x", "y", &[("a".into(), vec![(0.0, 1.0), (1.0, 0.5)])]).unwrap();
        let bars = dir.path().join("b.svg");
        grouped_bars(&bars, "t", &[("d".into(), vec![("baseline".into(), 0.4), ("masksup".into(), 0.5)])]).unwrap();
        for p in [lines, bars] {
            let text = std::fs::read_to_string(p).unwrap();
            assert!(text.starts_with("<svg"));
        }
    }

    #[test]
    fn empty_series_still_render() {
        let dir = tempfile::tempdir().unwrap();
        line_plot(&dir.path().join("e.svg"), "t", "x", "y", &[]).unwrap();
    }
}
