//! Experiment matrix, reference runs and error accounting.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use gapwave::model::NeuronParams;
use gapwave::network::{build_scaled_network, simulate, Network, SimulationConfig, SpikeConnection};
use gapwave::rk::ButcherTableau;
use gapwave::wfr::{IterationStats, Scheme, WfrConfig};
use gapwave::{NeuronParams64, Network64, Recording64};
use serde::Serialize;

/// Solver tolerance of the uncoupled reference neuron.
pub const REFERENCE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Accuracy,
    Efficiency,
    Shift,
    Iterations,
    Scaling,
    Simulate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Accuracy => "accuracy",
            ExperimentKind::Efficiency => "efficiency",
            ExperimentKind::Shift => "shift",
            ExperimentKind::Iterations => "iterations",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::Simulate => "simulate",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scheme together with its window choice and extrapolation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub scheme: Scheme,
    /// Iterate over single grid steps instead of the configured window.
    pub per_step: bool,
    pub spike_detection: bool,
}

impl Variant {
    pub const WFR: Variant = Variant { scheme: Scheme::Jacobi, per_step: false, spike_detection: true };
    pub const WFR_STEP: Variant = Variant { scheme: Scheme::Jacobi, per_step: true, spike_detection: true };
    pub const NON_ITERATIVE: Variant = Variant { scheme: Scheme::NonIterative, per_step: true, spike_detection: true };
    pub const NON_ITERATIVE_CONSTANT: Variant =
        Variant { scheme: Scheme::NonIterative, per_step: true, spike_detection: false };

    /// Accepts `jacobi`, `gauss_seidel`, a `_h` suffix for T = h, and
    /// `non_iterative` or `non_iterative_constant`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "non_iterative" => return Ok(Self::NON_ITERATIVE),
            "non_iterative_constant" => return Ok(Self::NON_ITERATIVE_CONSTANT),
            _ => {}
        }
        let (base, per_step) = match s.strip_suffix("_h") {
            Some(b) => (b, true),
            None => (s, false),
        };
        match Scheme::parse(base) {
            Some(scheme @ (Scheme::Jacobi | Scheme::GaussSeidel)) => {
                Ok(Variant { scheme, per_step, spike_detection: true })
            }
            _ => bail!("unknown scheme '{s}'"),
        }
    }

    pub fn label(&self) -> String {
        match (self.scheme, self.spike_detection) {
            (Scheme::NonIterative, true) => "non_iterative".into(),
            (Scheme::NonIterative, false) => "non_iterative_constant".into(),
            (scheme, _) if self.per_step => format!("{}_h", scheme.name()),
            (scheme, _) => scheme.name().into(),
        }
    }

    pub fn is_iterative(&self) -> bool {
        self.scheme != Scheme::NonIterative
    }

    /// Window length used with grid step `h`.
    pub fn interval(&self, h: f64, window: f64) -> f64 {
        if self.per_step {
            h
        } else {
            window
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub neurons: usize,
    /// Gap junction partners per neuron on a ring; 0 leaves neurons uncoupled.
    pub degree: usize,
    /// Summed gap conductance per neuron (nS).
    pub total_g: f64,
    pub connections: Vec<SpikeConnection<f64>>,
    /// Neurons to record; all when `None`.
    pub record: Option<Vec<usize>>,
}

impl NetworkSpec {
    pub fn pair() -> Self {
        Self::ring(2, 1)
    }

    pub fn ring(neurons: usize, degree: usize) -> Self {
        Self { neurons, degree, total_g: 30.0, connections: Vec::new(), record: None }
    }

    pub fn build(&self, params: &NeuronParams64) -> Result<Network64> {
        let mut net = if self.degree == 0 {
            let mut net = Network::new();
            for _ in 0..self.neurons {
                net.add_neuron(params.clone());
            }
            net
        } else {
            build_scaled_network(self.neurons, self.degree, self.total_g, params.clone())?
        };
        for c in &self.connections {
            net.connect(c.source, c.target, c.weight, c.delay);
        }
        Ok(net)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub h: Vec<f64>,
    pub variants: Vec<Variant>,
    pub wfr_tol: Vec<f64>,
    pub rk_tolerance: f64,
    pub reference_tolerance: f64,
    pub tableau: ButcherTableau<f64>,
    pub max_iterations: usize,
    pub template_resolution: f64,
    /// Iteration window for variants that do not work per step (ms).
    pub window: f64,
    pub duration: f64,
    pub params: NeuronParams64,
    pub network: NetworkSpec,
    pub workers: Vec<usize>,
    /// Timing repetitions; the median is reported.
    pub repetitions: usize,
    pub traces: bool,
    pub out: PathBuf,
}

impl ExperimentSpec {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let wfr = WfrConfig::<f64>::default();
        let mut spec = Self {
            kind,
            h: vec![0.1, 0.05, 0.02, 0.01],
            variants: vec![Variant::WFR, Variant::NON_ITERATIVE, Variant::NON_ITERATIVE_CONSTANT],
            wfr_tol: vec![1e-6, 1e-10],
            rk_tolerance: wfr.rk_tolerance,
            reference_tolerance: REFERENCE_TOLERANCE,
            tableau: wfr.tableau,
            max_iterations: wfr.max_iterations,
            template_resolution: wfr.template_resolution,
            window: 1.0,
            duration: 1000.0,
            params: NeuronParams::default().with_input(200.0),
            network: NetworkSpec::pair(),
            workers: vec![1],
            repetitions: 1,
            traces: false,
            out: PathBuf::from("results"),
        };
        match kind {
            ExperimentKind::Accuracy => {}
            ExperimentKind::Efficiency => spec.repetitions = 3,
            ExperimentKind::Shift => {
                spec.h = vec![0.1];
                spec.wfr_tol = vec![1e-6];
                spec.traces = true;
            }
            ExperimentKind::Iterations => {
                spec.variants = vec![Variant::WFR_STEP, Variant::WFR];
                spec.wfr_tol = vec![1e-4];
            }
            ExperimentKind::Scaling => {
                spec.h = vec![0.1];
                spec.variants = vec![Variant::WFR];
                spec.wfr_tol = vec![1e-4];
                spec.duration = 20.0;
                spec.network = NetworkSpec::ring(1000, 60);
                spec.workers = vec![1, 2, 4, 8];
                spec.repetitions = 3;
            }
            ExperimentKind::Simulate => {
                spec.h = vec![0.1];
                spec.variants = vec![Variant::WFR];
                spec.wfr_tol = vec![1e-4];
                spec.duration = 100.0;
                spec.traces = true;
            }
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.h.is_empty(), "h sweep is empty");
        ensure!(self.h.iter().all(|&h| h > 0.0 && h.is_finite()), "h values must be positive");
        ensure!(!self.variants.is_empty(), "scheme list is empty");
        ensure!(!self.wfr_tol.is_empty(), "wfr_tol list is empty");
        ensure!(self.wfr_tol.iter().all(|&t| t > 0.0), "wfr_tol values must be positive");
        ensure!(self.duration > 0.0, "duration must be positive");
        ensure!(self.window > 0.0, "window must be positive");
        ensure!(!self.workers.is_empty() && self.workers.iter().all(|&w| w > 0), "worker counts must be positive");
        ensure!(self.repetitions > 0, "repetitions must be at least 1");
        ensure!(self.network.neurons > 0, "network has no neurons");
        self.params.validate()?;
        Ok(())
    }

    pub fn wfr_config(&self, variant: Variant, h: f64, tol: f64) -> WfrConfig<f64> {
        WfrConfig {
            interval: variant.interval(h, self.window),
            tol,
            max_iterations: self.max_iterations,
            scheme: variant.scheme,
            spike_detection: variant.spike_detection,
            rk_tolerance: self.rk_tolerance,
            tableau: self.tableau.clone(),
            template_resolution: self.template_resolution,
        }
    }

    /// Tolerances that matter for `variant`; the non-iterative scheme has none.
    fn tolerances(&self, variant: Variant) -> Vec<Option<f64>> {
        if variant.is_iterative() {
            self.wfr_tol.iter().map(|&t| Some(t)).collect()
        } else {
            vec![None]
        }
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub scheme: String,
    pub h: f64,
    #[serde(rename = "T")]
    pub interval: f64,
    pub wfr_tol: Option<f64>,
    /// max |V - V_ref| (mV); NaN marks a failed configuration.
    pub error: f64,
    pub wall_s: f64,
    pub mean_iters: f64,
    /// Communication rounds per simulated second.
    pub rounds: f64,
    pub converged_fraction: f64,
}

impl ResultRow {
    pub fn failed(&self) -> bool {
        self.error.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRow {
    pub scheme: String,
    pub h: f64,
    pub wfr_tol: Option<f64>,
    pub message: String,
}

/// Window against single-step comparison for one scheme, h and tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PayoffRow {
    pub scheme: String,
    pub h: f64,
    pub wfr_tol: Option<f64>,
    pub t_old: f64,
    pub t_new: f64,
    pub iters_old: f64,
    pub iters_new: f64,
    pub t_ratio: f64,
    pub iter_ratio: f64,
    /// `window` when T_new/T_old exceeds the iteration ratio, else `step`.
    pub predicted: String,
    pub rounds_old: f64,
    pub rounds_new: f64,
    pub observed: String,
    pub agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShiftRow {
    pub scheme: String,
    pub h: f64,
    pub wfr_tol: Option<f64>,
    pub spikes: usize,
    pub reference_spikes: usize,
    /// |t - t_ref| of the last spike index present in both runs (ms).
    pub last_spike_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub scheme: String,
    pub h: f64,
    pub workers: usize,
    pub wall_s: f64,
    pub speedup: f64,
    pub identical: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
    pub payoff: Vec<PayoffRow>,
    pub shifts: Vec<ShiftRow>,
    pub scaling: Vec<ScalingRow>,
    pub traces: Vec<(String, Recording64)>,
}

impl ErrorReport {
    pub fn find(&self, scheme: &str, h: f64, wfr_tol: Option<f64>) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.scheme == scheme && r.h == h && r.wfr_tol == wfr_tol)
    }
}

pub struct RunOutcome {
    pub recording: Recording64,
    pub stats: IterationStats,
    /// Median wall-clock time over the repetitions (s).
    pub wall_s: f64,
}

impl RunOutcome {
    pub fn rounds_per_second(&self, duration: f64) -> f64 {
        self.stats.communication_rounds as f64 * 1000.0 / duration
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Single uncoupled neuron with input `i_ext`, solved with `tolerance`.
pub fn reference_run(
    params: &NeuronParams64,
    i_ext: f64,
    duration: f64,
    h: f64,
    tolerance: f64,
) -> Result<Recording64> {
    let mut net = Network::new();
    net.add_neuron(params.clone().with_input(i_ext));
    // uncoupled, so the window only trades bookkeeping for memory
    let slots = (duration / h).round() as usize;
    let per = ((1.0 / h).round() as usize).max(1);
    let interval = if slots.is_multiple_of(per) { per as f64 * h } else { h };
    let wfr = WfrConfig {
        interval,
        rk_tolerance: tolerance,
        spike_detection: false,
        max_iterations: 1,
        ..WfrConfig::default()
    };
    Ok(simulate(&net, &SimulationConfig::new(h, duration, wfr))?.0)
}

/// Maximum of |V - V_ref| over grid points and recorded neurons. A reference
/// with a single trace is compared against every recorded neuron.
pub fn max_error(recording: &Recording64, reference: &Recording64) -> Result<f64> {
    ensure!(recording.h == reference.h, "grid step {} differs from reference {}", recording.h, reference.h);
    ensure!(
        recording.samples() == reference.samples(),
        "{} samples against {} in reference",
        recording.samples(),
        reference.samples()
    );
    ensure!(
        reference.v.len() == 1 || reference.neurons == recording.neurons,
        "reference neurons do not match recording"
    );
    let mut worst: f64 = 0.0;
    for (k, trace) in recording.v.iter().enumerate() {
        let r = if reference.v.len() == 1 { &reference.v[0] } else { &reference.v[k] };
        for (a, b) in trace.iter().zip(r) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Shift of the last spike index present in both trains; NaN when either is empty.
pub fn last_spike_shift(spikes: &[u64], reference: &[u64], h: f64) -> f64 {
    let n = spikes.len().min(reference.len());
    if n == 0 {
        return f64::NAN;
    }
    (spikes[n - 1] as f64 - reference[n - 1] as f64).abs() * h
}

pub fn run_configuration(spec: &ExperimentSpec, variant: Variant, h: f64, tol: f64, workers: usize) -> Result<RunOutcome> {
    let net = spec.network.build(&spec.params)?;
    let mut cfg = SimulationConfig::new(h, spec.duration, spec.wfr_config(variant, h, tol));
    cfg.record = spec.network.record.clone();
    cfg.workers = workers;
    let mut times = Vec::with_capacity(spec.repetitions);
    let mut first = None;
    for _ in 0..spec.repetitions {
        let start = Instant::now();
        let out = simulate(&net, &cfg)?;
        times.push(start.elapsed().as_secs_f64());
        first.get_or_insert(out);
    }
    let (recording, stats) = first.expect("at least one repetition");
    Ok(RunOutcome { recording, stats, wall_s: median(&mut times) })
}

fn result_row(variant: Variant, h: f64, interval: f64, tol: Option<f64>, error: f64, out: &RunOutcome, duration: f64) -> ResultRow {
    ResultRow {
        scheme: variant.label(),
        h,
        interval,
        wfr_tol: tol,
        error,
        wall_s: out.wall_s,
        mean_iters: out.stats.mean_iterations(),
        rounds: out.rounds_per_second(duration),
        converged_fraction: out.stats.converged_fraction(),
    }
}

fn failure_row(variant: Variant, h: f64, interval: f64, tol: Option<f64>) -> ResultRow {
    ResultRow {
        scheme: variant.label(),
        h,
        interval,
        wfr_tol: tol,
        error: f64::NAN,
        wall_s: f64::NAN,
        mean_iters: f64::NAN,
        rounds: f64::NAN,
        converged_fraction: f64::NAN,
    }
}

pub fn trace_id(label: &str, h: f64, tol: Option<f64>) -> String {
    match tol {
        Some(t) => format!("{label}_h{h}_tol{t:e}"),
        None => format!("{label}_h{h}"),
    }
}

/// Per-neuron uncoupled references, shared between neurons with equal parameters.
fn references(spec: &ExperimentSpec, net: &Network64, neurons: &[usize], h: f64) -> Result<Recording64> {
    let mut cache: Vec<(&NeuronParams64, Recording64)> = Vec::new();
    let mut merged = Recording64 { h, neurons: neurons.to_vec(), v: Vec::new(), spikes: Vec::new() };
    for &n in neurons {
        let params = &net.neurons[n].params;
        let k = match cache.iter().position(|(p, _)| *p == params) {
            Some(k) => k,
            None => {
                let rec = reference_run(params, params.i_ext, spec.duration, h, spec.reference_tolerance)?;
                cache.push((params, rec));
                cache.len() - 1
            }
        };
        merged.v.push(cache[k].1.v[0].clone());
        merged.spikes.push(cache[k].1.spikes[0].clone());
    }
    Ok(merged)
}

/// Runs the configuration matrix without writing anything.
pub fn evaluate(spec: &ExperimentSpec) -> Result<ErrorReport> {
    spec.validate()?;
    let net = spec.network.build(&spec.params)?;
    let recorded: Vec<usize> = match &spec.network.record {
        Some(r) => r.clone(),
        None => (0..net.len()).collect(),
    };
    ensure!(recorded.iter().all(|&n| n < net.len()), "recorded neuron out of range");
    let mut report = ErrorReport::default();
    for &h in &spec.h {
        let reference = references(spec, &net, &recorded, h).with_context(|| format!("reference run at h = {h}"))?;
        if spec.traces {
            report.traces.push((trace_id("reference", h, None), reference.clone()));
        }
        for &variant in &spec.variants {
            let interval = variant.interval(h, spec.window);
            for tol in spec.tolerances(variant) {
                let workers: &[usize] =
                    if spec.kind == ExperimentKind::Scaling { &spec.workers } else { &spec.workers[..1] };
                let mut baseline: Option<(Recording64, f64)> = None;
                for &w in workers {
                    eprintln!("{} {} h={h} tol={tol:?} workers={w}", spec.kind, variant.label());
                    let outcome = run_configuration(spec, variant, h, tol.unwrap_or(1.0), w)
                        .and_then(|out| Ok((max_error(&out.recording, &reference)?, out)));
                    let (error, out) = match outcome {
                        Ok(v) => v,
                        Err(e) => {
                            report.rows.push(failure_row(variant, h, interval, tol));
                            report.failures.push(FailureRow {
                                scheme: variant.label(),
                                h,
                                wfr_tol: tol,
                                message: format!("{e:#}"),
                            });
                            continue;
                        }
                    };
                    report.rows.push(result_row(variant, h, interval, tol, error, &out, spec.duration));
                    if spec.kind == ExperimentKind::Shift {
                        report.shifts.push(ShiftRow {
                            scheme: variant.label(),
                            h,
                            wfr_tol: tol,
                            spikes: out.recording.spikes[0].len(),
                            reference_spikes: reference.spikes[0].len(),
                            last_spike_shift: last_spike_shift(&out.recording.spikes[0], &reference.spikes[0], h),
                        });
                    }
                    if spec.kind == ExperimentKind::Scaling {
                        let (identical, speedup) = match &baseline {
                            Some((rec, wall)) => (*rec == out.recording, wall / out.wall_s),
                            None => (true, 1.0),
                        };
                        report.scaling.push(ScalingRow {
                            scheme: variant.label(),
                            h,
                            workers: w,
                            wall_s: out.wall_s,
                            speedup,
                            identical,
                        });
                        if baseline.is_none() {
                            baseline = Some((out.recording.clone(), out.wall_s));
                        }
                    }
                    if spec.traces {
                        report.traces.push((trace_id(&variant.label(), h, tol), out.recording));
                    }
                }
            }
        }
    }
    report.payoff = payoff_rows(&report.rows);
    Ok(report)
}

/// Pairs every per-step row with the window row of the same scheme, h and tolerance.
pub fn payoff_rows(rows: &[ResultRow]) -> Vec<PayoffRow> {
    let mut out = Vec::new();
    for old in rows.iter().filter(|r| !r.failed()) {
        let Some(base) = old.scheme.strip_suffix("_h") else { continue };
        let Some(new) = rows
            .iter()
            .find(|r| !r.failed() && r.scheme == base && r.h == old.h && r.wfr_tol == old.wfr_tol)
        else {
            continue;
        };
        let t_ratio = new.interval / old.interval;
        let iter_ratio = new.mean_iters / old.mean_iters;
        let predicted = if t_ratio > iter_ratio { "window" } else { "step" };
        let observed = if new.rounds < old.rounds { "window" } else { "step" };
        out.push(PayoffRow {
            scheme: base.to_string(),
            h: old.h,
            wfr_tol: old.wfr_tol,
            t_old: old.interval,
            t_new: new.interval,
            iters_old: old.mean_iters,
            iters_new: new.mean_iters,
            t_ratio,
            iter_ratio,
            predicted: predicted.into(),
            rounds_old: old.rounds,
            rounds_new: new.rounds,
            observed: observed.into(),
            agrees: predicted == observed,
        });
    }
    out
}

/// Evaluates `spec` and writes all outputs into `spec.out`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ErrorReport> {
    let report = evaluate(spec)?;
    crate::output::write_report(spec, &report).with_context(|| format!("writing into {}", spec.out.display()))?;
    Ok(report)
}
