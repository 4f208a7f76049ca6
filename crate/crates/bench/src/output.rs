//! CSV tables, traces and gnuplot scripts.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use crate::experiments::{ErrorReport, ExperimentKind, ExperimentSpec, ResultRow};

pub const RESULT_COLUMNS: [&str; 9] =
    ["scheme", "h", "T", "wfr_tol", "error", "wall_s", "mean_iters", "rounds", "converged_fraction"];

fn write_table<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if rows.is_empty() {
        // keep the header so downstream readers see a stable schema
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(RESULT_COLUMNS)?;
        w.flush()?;
        return Ok(());
    }
    write_table(path, rows)
}

pub fn write_report(spec: &ExperimentSpec, report: &ErrorReport) -> Result<()> {
    let dir = &spec.out;
    fs::create_dir_all(dir)?;
    write_results(&dir.join("results.csv"), &report.rows)?;
    if !report.failures.is_empty() {
        write_table(&dir.join("failures.csv"), &report.failures)?;
    }
    if !report.payoff.is_empty() {
        write_table(&dir.join("payoff.csv"), &report.payoff)?;
    }
    if !report.shifts.is_empty() {
        write_table(&dir.join("shift.csv"), &report.shifts)?;
    }
    if !report.scaling.is_empty() {
        write_table(&dir.join("scaling.csv"), &report.scaling)?;
    }
    for (id, rec) in &report.traces {
        rec.write_csv(BufWriter::new(File::create(dir.join(format!("trace_{id}.csv")))?))?;
        if spec.kind == ExperimentKind::Simulate {
            rec.write_spikes_csv(BufWriter::new(File::create(dir.join(format!("spikes_{id}.csv")))?))?;
        }
    }
    let trace_ids: Vec<&str> = report.traces.iter().map(|(id, _)| id.as_str()).collect();
    fs::write(dir.join(format!("plot_{}.script", spec.kind)), plot_script(spec.kind, &report.rows, &trace_ids))?;
    Ok(())
}

/// Distinct (scheme, wfr_tol) pairs in first-seen order.
fn series(rows: &[ResultRow]) -> Vec<(String, Option<f64>)> {
    let mut out: Vec<(String, Option<f64>)> = Vec::new();
    for r in rows {
        if !out.iter().any(|(s, t)| *s == r.scheme && *t == r.wfr_tol) {
            out.push((r.scheme.clone(), r.wfr_tol));
        }
    }
    out
}

fn results_plot(rows: &[ResultRow], x: usize, y: usize) -> String {
    let clauses: Vec<String> = series(rows)
        .iter()
        .map(|(scheme, tol)| {
            let (filter, title) = match tol {
                Some(t) => (format!("strcol(1) eq \"{scheme}\" && abs($4 - {t:e}) <= {:e}", t * 1e-9), format!("{scheme} tol {t:e}")),
                None => (format!("strcol(1) eq \"{scheme}\""), scheme.clone()),
            };
            format!("'results.csv' using ({filter} ? ${x} : 1/0):{y} with linespoints title '{title}'")
        })
        .collect();
    format!("plot {}\n", clauses.join(", \\\n     "))
}

pub fn plot_script(kind: ExperimentKind, rows: &[ResultRow], traces: &[&str]) -> String {
    let mut s = String::new();
    s.push_str("set datafile separator ','\nset terminal pngcairo size 900,600\n");
    let _ = writeln!(s, "set output 'plot_{kind}.png'");
    s.push_str("set key outside right\n");
    match kind {
        ExperimentKind::Accuracy => {
            s.push_str("set logscale xy\nset xlabel 'h (ms)'\nset ylabel 'max |V - V_ref| (mV)'\n");
            s.push_str(&results_plot(rows, 2, 5));
        }
        ExperimentKind::Efficiency => {
            s.push_str("set logscale xy\nset xlabel 'max |V - V_ref| (mV)'\nset ylabel 'wall-clock time (s)'\n");
            s.push_str(&results_plot(rows, 5, 6));
        }
        ExperimentKind::Iterations => {
            s.push_str("set logscale x\nset xlabel 'h (ms)'\nset ylabel 'mean iterations per window'\n");
            s.push_str(&results_plot(rows, 2, 7));
        }
        ExperimentKind::Scaling => {
            s.push_str("set logscale x 2\nset xlabel 'workers'\nset ylabel 'wall-clock time (s)'\n");
            s.push_str("plot 'scaling.csv' using 3:4 every ::1 with linespoints title 'wall time'\n");
        }
        ExperimentKind::Shift | ExperimentKind::Simulate => {
            s.push_str("set xlabel 't (ms)'\nset ylabel 'V (mV)'\n");
            let clauses: Vec<String> = traces
                .iter()
                .map(|id| format!("'trace_{id}.csv' using ($2 == 0 ? $1 : 1/0):3 every ::1 with lines title '{id}'"))
                .collect();
            if clauses.is_empty() {
                s.push_str("# no traces recorded\n");
            } else {
                let _ = writeln!(s, "plot {}", clauses.join(", \\\n     "));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(scheme: &str, tol: Option<f64>) -> ResultRow {
        ResultRow {
            scheme: scheme.into(),
            h: 0.1,
            interval: 1.0,
            wfr_tol: tol,
            error: f64::NAN,
            wall_s: 1.0,
            mean_iters: 2.0,
            rounds: 2000.0,
            converged_fraction: 1.0,
        }
    }

    #[test]
    fn results_header_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        write_results(&path, &[row("jacobi", Some(1e-6)), row("non_iterative", None)]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RESULT_COLUMNS.join(","));
        assert!(lines.next().unwrap().starts_with("jacobi,0.1,1.0,"));
        assert!(lines.next().unwrap().starts_with("non_iterative,0.1,1.0,,NaN,"));
        write_results(&path, &[]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().trim(), RESULT_COLUMNS.join(","));
    }

    #[test]
    fn plot_has_one_series_per_scheme_and_tolerance() {
        let rows = [row("jacobi", Some(1e-6)), row("jacobi", Some(1e-10)), row("jacobi", Some(1e-6))];
        let script = plot_script(ExperimentKind::Accuracy, &rows, &[]);
        assert_eq!(script.matches("with linespoints").count(), 2);
        assert!(script.contains("set output 'plot_accuracy.png'"));
    }
}
