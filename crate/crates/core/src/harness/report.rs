use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{MetricsSeries, RoundMetrics};
use crate::error::{input_err, Error, Result};
use crate::federation::Method;

const CSV_HEADER: &str = "round,accuracy,cum_seconds,mean_assignment_size";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub round: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: Method,
    pub seed: u64,
    pub positions: Vec<usize>,
    pub rounds: usize,
    pub final_accuracy: f64,
    pub total_seconds: f64,
    pub target_accuracy: f64,
    pub time_to_target: Option<TargetHit>,
    pub acc_before: Option<f64>,
    pub acc_after: Option<f64>,
    pub forgetting: Option<f64>,
    pub acc_after_active: Option<f64>,
    pub forgetting_active: Option<f64>,
}

impl Summary {
    pub fn new(series: &MetricsSeries, target_accuracy: f64) -> Result<Self> {
        let last = series.rounds.last().ok_or_else(|| input_err!("cannot summarise an empty series"))?;
        let f = series.forgetting;
        Ok(Self {
            method: series.method,
            seed: series.seed,
            positions: series.positions.clone(),
            rounds: series.rounds.len(),
            final_accuracy: last.accuracy,
            total_seconds: last.cum_seconds,
            target_accuracy,
            time_to_target: series.time_to_target(target_accuracy).map(|(round, seconds)| TargetHit { round, seconds }),
            acc_before: f.map(|f| f.acc_before),
            acc_after: f.map(|f| f.acc_after),
            forgetting: f.map(|f| f.degree),
            acc_after_active: f.and_then(|f| f.acc_after_active),
            forgetting_active: f.and_then(|f| f.degree_active),
        })
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn metrics_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rounds {
        let _ = writeln!(out, "{},{},{},{}", r.round, r.accuracy, r.cum_seconds, r.mean_assignment_size());
    }
    out
}

/// Writes `metrics.csv`, `summary.json`, `accuracy.svg` and `time.svg` into `out_dir`.
pub fn emit_report(series: &MetricsSeries, out_dir: &Path, target_accuracy: f64) -> Result<Summary> {
    let summary = Summary::new(series, target_accuracy)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    write(&out_dir.join("metrics.csv"), &metrics_csv(&series.rounds))?;
    write(&out_dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    let rows: Vec<CsvRow> = series
        .rounds
        .iter()
        .map(|r| CsvRow { round: r.round, accuracy: r.accuracy, cum_seconds: r.cum_seconds })
        .collect();
    render_charts(&rows, out_dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsvRow {
    pub round: usize,
    pub accuracy: f64,
    pub cum_seconds: f64,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = fs::read_to_string(path).map_err(|e| input_err!("cannot read {}: {e}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(input_err!("{} does not start with '{CSV_HEADER}'", path.display()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || input_err!("{} line {}: malformed row '{line}'", path.display(), i + 2);
            if cols.len() != 4 {
                return Err(bad());
            }
            Ok(CsvRow {
                round: cols[0].parse().map_err(|_| bad())?,
                accuracy: cols[1].parse().map_err(|_| bad())?,
                cum_seconds: cols[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

/// `accuracy.svg` plots accuracy by round, `time.svg` accuracy by cumulative
/// simulated seconds.
pub fn render_charts(rows: &[CsvRow], out_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(input_err!("no rows to plot"));
    }
    let acc: Vec<(f64, f64)> = rows.iter().map(|r| (r.round as f64, r.accuracy)).collect();
    let time: Vec<(f64, f64)> = rows.iter().map(|r| (r.cum_seconds, r.accuracy)).collect();
    write(&out_dir.join("accuracy.svg"), &line_chart(&acc, "round", "accuracy"))?;
    write(&out_dir.join("time.svg"), &line_chart(&time, "simulated seconds", "accuracy"))?;
    Ok(())
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn line_chart(points: &[(f64, f64)], x_label: &str, y_label: &str) -> String {
    let (x0, x1) = extent(points.iter().map(|p| p.0));
    let (y0, y1) = (0.0, 1.0f64.max(extent(points.iter().map(|p| p.1)).1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#);
    for (v, anchor_x) in [(x0, left), (x1, right)] {
        let _ = writeln!(s, r#"<text x="{anchor_x}" y="{}" font-size="11" text-anchor="middle">{}</text>"#, bottom + 14.0, tick(v));
    }
    for (v, anchor_y) in [(y0, bottom), (y1, top)] {
        let _ = writeln!(s, r#"<text x="{}" y="{anchor_y}" font-size="11" text-anchor="end">{}</text>"#, left - 4.0, tick(v));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x_label}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" stroke="steelblue" stroke-width="2" fill="none"/>"#, path.join(" "));
    s.push_str("</svg>\n");
    s
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}
