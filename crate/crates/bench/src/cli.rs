//! Command-line front end.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, ValueEnum};

use crate::config::FileConfig;
use crate::experiments::{run_experiment, ErrorReport, ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Command {
    Accuracy,
    Efficiency,
    Shift,
    Iterations,
    Scaling,
    Simulate,
}

impl From<Command> for ExperimentKind {
    fn from(c: Command) -> Self {
        match c {
            Command::Accuracy => ExperimentKind::Accuracy,
            Command::Efficiency => ExperimentKind::Efficiency,
            Command::Shift => ExperimentKind::Shift,
            Command::Iterations => ExperimentKind::Iterations,
            Command::Scaling => ExperimentKind::Scaling,
            Command::Simulate => ExperimentKind::Simulate,
        }
    }
}

/// Runs one experiment and writes results.csv, a plot script and traces.
#[derive(Debug, Parser)]
#[command(name = "gapwave-bench", version, about)]
pub struct Cli {
    #[arg(value_enum)]
    pub experiment: Command,
    /// TOML file overriding the experiment defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Worker threads; replaces the worker sweep of the scaling experiment.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Reserved. The built-in networks are deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Cli {
    pub fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::defaults(self.experiment.into());
        if let Some(path) = &self.config {
            FileConfig::load(path)?.apply(&mut spec)?;
        }
        if let Some(w) = self.workers {
            spec.workers = vec![w];
        }
        spec.out = self.out.clone();
        Ok(spec)
    }
}

pub fn run(cli: &Cli) -> Result<ErrorReport> {
    if let Some(seed) = cli.seed {
        eprintln!("seed {seed} has no effect on the built-in networks");
    }
    run_experiment(&cli.spec()?)
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    use super::*;

    const HEADER: &str = "scheme,h,T,wfr_tol,error,wall_s,mean_iters,rounds,converged_fraction";

    fn cli(args: &[&str], dir: &Path, config: &str) -> Cli {
        let path = dir.join("cfg.toml");
        fs::write(&path, config).unwrap();
        let out = dir.join("out");
        let mut argv = vec!["gapwave-bench", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
        argv.extend_from_slice(args);
        Cli::try_parse_from(argv).unwrap()
    }

    #[test]
    fn simulate_writes_results_traces_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let c = cli(&["simulate", "--workers", "2", "--seed", "3"], dir.path(), "[experiment]\nduration = 5.0\n");
        assert_eq!(c.spec().unwrap().workers, vec![2]);
        run(&c).unwrap();
        let out = dir.path().join("out");
        let results = fs::read_to_string(out.join("results.csv")).unwrap();
        let lines: Vec<&str> = results.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines.len(), 2);
        assert!(lines[1].starts_with("jacobi,0.1,1.0,"));
        let trace = fs::read_to_string(out.join("trace_jacobi_h0.1_tol1e-4.csv")).unwrap();
        assert_eq!(trace.lines().next().unwrap(), "time,neuron,V");
        // two neurons on 51 grid points
        assert_eq!(trace.lines().count(), 1 + 2 * 51);
        assert!(out.join("trace_reference_h0.1.csv").exists());
        assert!(out.join("spikes_jacobi_h0.1_tol1e-4.csv").exists());
        let script = fs::read_to_string(out.join("plot_simulate.script")).unwrap();
        assert!(script.contains("trace_jacobi_h0.1_tol1e-4.csv"));
    }

    #[test]
    fn degenerate_accuracy_matrix_gives_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let c = cli(
            &["accuracy"],
            dir.path(),
            "[experiment]\nh = [0.1]\nschemes = [\"non_iterative\"]\nduration = 5.0\n",
        );
        let report = run(&c).unwrap();
        assert_eq!(report.rows.len(), 1);
        let out = dir.path().join("out");
        assert_eq!(fs::read_to_string(out.join("results.csv")).unwrap().lines().count(), 2);
        assert!(out.join("plot_accuracy.script").exists());
    }

    #[test]
    fn scaling_reports_every_worker_count() {
        let dir = tempfile::tempdir().unwrap();
        let c = cli(
            &["scaling"],
            dir.path(),
            "[network]\nneurons = 8\ndegree = 4\n[experiment]\nduration = 2.0\nworkers = [1, 3]\nrepetitions = 1\n",
        );
        let report = run(&c).unwrap();
        assert_eq!(report.scaling.len(), 2);
        assert!(report.scaling.iter().all(|s| s.identical));
        assert!(dir.path().join("out/scaling.csv").exists());
    }

    #[test]
    fn bad_input_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let c = cli(&["accuracy"], dir.path(), "[experiment]\nh = []\n");
        let err = run(&c).unwrap_err();
        assert!(format!("{err:#}").contains("h sweep is empty"));
        assert!(Cli::try_parse_from(["gapwave-bench", "nonsense"]).is_err());
        assert!(Cli::try_parse_from(["gapwave-bench", "shift", "--workers", "many"]).is_err());
    }
}
