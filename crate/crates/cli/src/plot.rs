//! Loss curves from a training log.

use std::path::Path;

use hairgan::train::LossLogLine;
use plotters::prelude::*;

type Series = (&'static str, fn(&LossLogLine) -> f64, RGBColor);

const SERIES: [Series; 6] = [
    ("pixel", |l| l.pixel, RGBColor(31, 119, 180)),
    ("perceptual", |l| l.perceptual, RGBColor(255, 127, 14)),
    ("style", |l| l.style, RGBColor(44, 160, 44)),
    ("adv_g", |l| l.adv_g, RGBColor(214, 39, 40)),
    ("adv_d", |l| l.adv_d, RGBColor(148, 103, 189)),
    ("total_g", |l| l.total_g, RGBColor(0, 0, 0)),
];

/// Writes one SVG with every loss term against the step.
pub fn loss_curves(lines: &[LossLogLine], path: &Path) -> Result<(), Box<dyn std::error::Error>> {
    if lines.is_empty() {
        return Err("loss log is empty".into());
    }
    let x_max = lines.iter().map(|l| l.step).max().unwrap_or(0).max(1) as f64;
    let y_max = lines
        .iter()
        .flat_map(|l| SERIES.iter().map(move |(_, f, _)| f(l)))
        .filter(|v| v.is_finite())
        .fold(0f64, f64::max)
        .max(1e-3)
        * 1.05;

    let root = SVGBackend::new(path, (960, 540)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("training losses", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0f64..x_max, 0f64..y_max)?;
    chart.configure_mesh().x_desc("step").y_desc("loss").draw()?;
    for (name, f, color) in SERIES {
        chart
            .draw_series(LineSeries::new(lines.iter().map(|l| (l.step as f64, f(l))), color))?
            .label(name)
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
