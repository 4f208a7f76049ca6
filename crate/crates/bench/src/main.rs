use anyhow::Result;
use clap::Parser;
use gapwave_bench::cli::{run, Cli};
use gapwave_bench::ExperimentKind;

fn main() -> Result<()> {
    let cli = Cli::parse();
    let report = run(&cli)?;
    let failed = report.rows.iter().filter(|r| r.failed()).count();
    println!(
        "{}: {} configurations, {} failed, written to {}",
        ExperimentKind::from(cli.experiment),
        report.rows.len(),
        failed,
        cli.out.display()
    );
    for f in &report.failures {
        eprintln!("failed {} h={} tol={:?}: {}", f.scheme, f.h, f.wfr_tol, f.message);
    }
    Ok(())
}
