use std::fs;
use std::path::Path;

use emp_core::bench::BenchResult;
use emp_core::metrics::{EvalReport, ScenarioMetrics};
use emp_core::training::EpochRecord;
use emp_core::EmpError;
use plotters::prelude::*;

use crate::error::{CliError, CliResult};
use crate::PlotArgs;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Plot(e.to_string())
}

fn read_lines<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| EmpError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Core(EmpError::Parse { line: i + 1, msg: e.to_string() }))
        })
        .collect()
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| EmpError::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head = lines.next().ok_or_else(|| CliError::Plot(format!("{} is empty", path.display())))?;
    let mut report: EvalReport = serde_json::from_str(head).map_err(EmpError::from)?;
    for l in lines {
        report.per_scenario.push(serde_json::from_str::<ScenarioMetrics>(l).map_err(EmpError::from)?);
    }
    Ok(report)
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Padded `[lo, hi]` covering every finite value.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

type Series = (&'static str, Vec<(f64, f64)>);

fn line_panel(area: &DrawingArea<SVGBackend, plotters::coord::Shift>, title: &str, x_desc: &str, series: &[Series]) -> CliResult {
    let (x0, x1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(area)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_desc).draw().map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    Ok(())
}

fn plot_log(log_path: &Path, out: &Path) -> CliResult {
    let log: Vec<EpochRecord> = read_lines(log_path)?;
    if log.is_empty() {
        return Err(CliError::Plot(format!("{} has no records", log_path.display())));
    }
    let pick = |f: fn(&EpochRecord) -> f64| log.iter().map(|r| (r.epoch as f64, f(r))).collect::<Vec<_>>();
    let pick_opt = |f: fn(&EpochRecord) -> Option<f64>| {
        log.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect::<Vec<_>>()
    };
    let root = SVGBackend::new(out, (1200, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let panels = root.split_evenly((1, 2));
    line_panel(
        &panels[0],
        "training loss",
        "epoch",
        &[
            ("total", pick(|r| r.loss_total)),
            ("regression", pick(|r| r.loss_reg)),
            ("classification", pick(|r| r.loss_cls)),
            ("auxiliary", pick(|r| r.loss_aux)),
        ],
    )?;
    let val: Vec<Series> = [
        ("minADE6", pick_opt(|r| r.val_minade6)),
        ("minFDE6", pick_opt(|r| r.val_minfde6)),
        ("MR6", pick_opt(|r| r.val_mr6)),
        ("brier-minFDE6", pick_opt(|r| r.val_brier_minfde6)),
    ]
    .into_iter()
    .filter(|s| !s.1.is_empty())
    .collect();
    line_panel(&panels[1], "validation", "epoch", &val)?;
    root.present().map_err(plot_err)
}

/// Sorted per-scenario minFDE₆ against the scenario quantile, one line per report.
fn plot_reports(paths: &[std::path::PathBuf], out: &Path) -> CliResult {
    let reports = paths.iter().map(|p| read_report(p)).collect::<CliResult<Vec<_>>>()?;
    let names: Vec<String> = paths.iter().map(|p| label(p)).collect();
    let curves: Vec<Vec<(f64, f64)>> = reports
        .iter()
        .map(|r| {
            let mut v: Vec<f64> = r.per_scenario.iter().map(|m| m.minfde_6).collect();
            v.sort_by(f64::total_cmp);
            let n = v.len().max(1) as f64;
            v.into_iter().enumerate().map(|(i, e)| ((i + 1) as f64 / n, e)).collect()
        })
        .collect();
    let (y0, y1) = range(curves.iter().flatten().map(|p| p.1));
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("per-scenario minFDE6", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(0.0..1.0, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("fraction of scenarios")
        .y_desc("minFDE6 [m]")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in names.iter().zip(&curves).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().border_style(BLACK).draw().map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Median latency against brier-minFDE₆, one point per (report, bench) pair.
fn plot_tradeoff(reports: &[std::path::PathBuf], benches: &[std::path::PathBuf], out: &Path) -> CliResult {
    if reports.len() != benches.len() {
        return Err(CliError::Usage(format!(
            "{} --report files but {} --bench files",
            reports.len(),
            benches.len()
        )));
    }
    let mut points = Vec::new();
    for (r, b) in reports.iter().zip(benches) {
        let report = read_report(r)?;
        let text = fs::read_to_string(b).map_err(|e| EmpError::io(b, e))?;
        let bench: BenchResult = serde_json::from_str(&text).map_err(EmpError::from)?;
        points.push((bench.median_ms, report.brier_minfde_6, bench.model_variant.clone(), label(r)));
    }
    let (x0, x1) = range(points.iter().map(|p| p.0));
    let (y0, y1) = range(points.iter().map(|p| p.1));
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("latency vs. brier-minFDE6", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(52)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("median batch latency [ms]")
        .y_desc("brier-minFDE6")
        .draw()
        .map_err(plot_err)?;
    for (i, (x, y, variant, name)) in points.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let text = format!("{variant} ({name})");
        chart
            .draw_series(std::iter::once(
                EmptyElement::at((*x, *y))
                    + Circle::new((0, 0), 5, color.filled())
                    + Text::new(text, (8, -8), ("sans-serif", 13)),
            ))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)
}

pub fn plot(a: &PlotArgs) -> CliResult {
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| EmpError::io(dir, e))?;
    }
    match (&a.log, a.report.is_empty(), a.bench.is_empty()) {
        (Some(_), false, _) => Err(CliError::Usage("--log and --report are exclusive".into())),
        (Some(log), true, _) => plot_log(log, &a.out),
        (None, false, true) => plot_reports(&a.report, &a.out),
        (None, false, false) => plot_tradeoff(&a.report, &a.bench, &a.out),
        (None, true, _) => Err(CliError::Usage("nothing to plot".into())),
    }
}
