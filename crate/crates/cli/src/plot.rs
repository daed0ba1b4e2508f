//! SVG rendering of per-frame score curves and F-vs-budget bars. Only
//! draws numbers already present in the inputs.

use std::path::Path;

use plotters::prelude::*;

use vsumm::summarizer::SummaryRecord;

use crate::commands::ReportFile;
use crate::CliError;

const KEY_SHOT: RGBColor = RGBColor(200, 230, 201);
const SELECTED: RGBColor = RGBColor(255, 167, 38);
const SERIES: [RGBColor; 4] = [
    RGBColor(30, 136, 229),
    RGBColor(67, 160, 71),
    RGBColor(229, 57, 53),
    RGBColor(142, 36, 170),
];

fn draw_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("cannot draw {}: {e}", path.display()))
}

/// Frame scores over time, with ground-truth key shots shaded and the
/// selected shots marked along the top edge.
pub fn score_curve(rec: &SummaryRecord, path: &Path) -> Result<(), CliError> {
    let err = draw_err(path);
    let n = rec.frame_scores.len().max(1);
    let root = SVGBackend::new(path, (960, 320)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(
            format!("{} (budget {:.0}%)", rec.video_id, rec.budget * 100.0),
            ("sans-serif", 18),
        )
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(40)
        .build_cartesian_2d(0f64..n as f64, 0f64..1.05f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc("frame")
        .y_desc("score")
        .disable_mesh()
        .draw()
        .map_err(&err)?;

    for &(s, e) in rec.key_shots.iter().flatten() {
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(s as f64, 0.0), (e as f64, 1.0)],
                KEY_SHOT.filled(),
            )))
            .map_err(&err)?;
    }
    for &(s, e) in &rec.shots {
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(s as f64, 1.01), (e as f64, 1.05)],
                SELECTED.filled(),
            )))
            .map_err(&err)?;
    }
    chart
        .draw_series(LineSeries::new(
            rec.frame_scores.iter().enumerate().map(|(t, &p)| (t as f64, p)),
            SERIES[0].stroke_width(1),
        ))
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}

/// Mean F per budget, one bar per report within each budget group.
pub fn budget_bars(reports: &[ReportFile], path: &Path) -> Result<(), CliError> {
    let err = draw_err(path);
    let mut budgets: Vec<f64> = reports.iter().flat_map(|r| r.stats.budgets.iter().copied()).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    let groups = budgets.len().max(1);
    let width = 0.8 / reports.len().max(1) as f64;

    let root = SVGBackend::new(path, (720, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let labels = budgets.clone();
    let mut chart = ChartBuilder::on(&root)
        .caption("F-score by summary length", ("sans-serif", 18))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(45)
        .build_cartesian_2d(0f64..groups as f64, 0f64..1f64)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(groups * 2 + 1)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            if (x - x.floor() - 0.5).abs() < 1e-9 && i < labels.len() {
                format!("{:.0}%", labels[i] * 100.0)
            } else {
                String::new()
            }
        })
        .x_desc("budget")
        .y_desc("mean F")
        .draw()
        .map_err(&err)?;

    for (k, report) in reports.iter().enumerate() {
        let color = SERIES[k % SERIES.len()];
        let bars: Vec<_> = report
            .stats
            .per_budget
            .iter()
            .filter_map(|m| {
                let g = budgets.iter().position(|&b| b == m.budget)?;
                let x0 = g as f64 + 0.1 + k as f64 * width;
                Some(Rectangle::new([(x0, 0.0), (x0 + width, m.f1)], color.filled()))
            })
            .collect();
        chart
            .draw_series(bars)
            .map_err(&err)?
            .label(report.label.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)?;
    Ok(())
}
