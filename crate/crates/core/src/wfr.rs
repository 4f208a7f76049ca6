//! Waveform relaxation over one iteration interval.
//!
//! Every neuron is a subsystem. Within an interval each subsystem is
//! integrated on its own, with the membrane potentials of its gap-junction
//! partners supplied as waveforms from the previous iteration (Jacobi) or, for
//! lower-indexed partners, from the current one (Gauss-Seidel). Iteration stops
//! once no neuron's grid values move by more than `tol` between two sweeps.

pub mod linear;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_spike_template, clamp_gates, hh_rhs_into, idx, NeuronParams, SpikeShapeTemplate,
    SynapseModel, STATE_DIM,
};
use crate::network::{GapAdjacency, Network};
use crate::rk::{ButcherTableau, GridIntegrator, GridSolution, IntervalProblem, StepController};
use crate::scalar::{whole_steps, Scalar};
use crate::waveform::{initial_guess, waveform_max_diff, Waveform, WaveformSum};

/// Splitting of the coupled system into subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Inputs from the previous iteration only; subsystems run in parallel.
    Jacobi,
    /// Inputs from the current iteration for lower-indexed subsystems.
    GaussSeidel,
    /// Whole right-hand side evaluated on previous iterates. Only available
    /// for the scalar test systems in [`linear`].
    Picard,
    /// One sweep per grid step against extrapolated inputs.
    NonIterative,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Jacobi => "jacobi",
            Scheme::GaussSeidel => "gauss_seidel",
            Scheme::Picard => "picard",
            Scheme::NonIterative => "non_iterative",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "jacobi" | "wfr" => Some(Scheme::Jacobi),
            "gauss_seidel" | "gauss-seidel" => Some(Scheme::GaussSeidel),
            "picard" => Some(Scheme::Picard),
            "non_iterative" | "non-iterative" => Some(Scheme::NonIterative),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfrConfig<T> {
    /// Iteration interval length (ms). Ignored by the non-iterative scheme,
    /// which always works on single grid steps.
    pub interval: T,
    /// Convergence tolerance on grid values of V (mV).
    pub tol: T,
    pub max_iterations: usize,
    pub scheme: Scheme,
    /// Extrapolate suprathreshold potentials with the spike template.
    pub spike_detection: bool,
    /// Step controller tolerance of the subsystem solver.
    pub rk_tolerance: T,
    pub tableau: ButcherTableau<T>,
    /// Sampling step of the spike template (ms).
    pub template_resolution: T,
}

impl<T: Scalar> Default for WfrConfig<T> {
    fn default() -> Self {
        Self {
            interval: T::one(),
            tol: T::lit(1e-4),
            max_iterations: 15,
            scheme: Scheme::Jacobi,
            spike_detection: true,
            rk_tolerance: T::lit(1e-6),
            tableau: ButcherTableau::fehlberg45(),
            template_resolution: T::lit(0.001),
        }
    }
}

impl<T: Scalar> WfrConfig<T> {
    pub fn validate(&self, h: T) -> Result<()> {
        if !(h > T::zero()) {
            return Err(Error::Config("h must be positive".into()));
        }
        if self.scheme != Scheme::NonIterative && whole_steps(self.interval, h).unwrap_or(0) == 0 {
            return Err(Error::Config("iteration interval must be a positive multiple of h".into()));
        }
        if !(self.tol > T::zero()) || !(self.rk_tolerance > T::zero()) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max iterations must be at least 1".into()));
        }
        self.tableau.validate()
    }

    /// Interval length actually iterated over for grid step `h`.
    pub fn effective_interval(&self, h: T) -> T {
        if self.scheme == Scheme::NonIterative {
            h
        } else {
            self.interval
        }
    }
}

/// Per-interval iteration record accumulated over a simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterationStats {
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Largest grid-point change of the last sweep of each interval (mV).
    pub final_diff: Vec<f64>,
    pub wall_seconds: Vec<f64>,
    /// Exchanges of waveform data; one per sweep.
    pub communication_rounds: u64,
}

impl IterationStats {
    pub fn intervals(&self) -> usize {
        self.iterations.len()
    }

    pub fn mean_iterations(&self) -> f64 {
        if self.iterations.is_empty() {
            return 0.0;
        }
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len() as f64
    }

    pub fn converged_fraction(&self) -> f64 {
        if self.converged.is_empty() {
            return 1.0;
        }
        self.converged.iter().filter(|c| **c).count() as f64 / self.converged.len() as f64
    }

    pub fn total_wall_seconds(&self) -> f64 {
        self.wall_seconds.iter().sum()
    }

    pub fn push(&mut self, s: &IntervalStats) {
        self.iterations.push(s.iterations);
        self.converged.push(s.converged);
        self.final_diff.push(s.final_diff);
        self.wall_seconds.push(s.wall_seconds);
        self.communication_rounds += s.iterations as u64;
    }

    pub fn extend(&mut self, other: &IterationStats) {
        self.iterations.extend_from_slice(&other.iterations);
        self.converged.extend_from_slice(&other.converged);
        self.final_diff.extend_from_slice(&other.final_diff);
        self.wall_seconds.extend_from_slice(&other.wall_seconds);
        self.communication_rounds += other.communication_rounds;
    }

    /// CSV rows `interval,iterations,converged,final_diff,wall_s`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "interval,iterations,converged,final_diff,wall_s")?;
        for i in 0..self.iterations.len() {
            writeln!(
                out,
                "{},{},{},{:e},{:e}",
                i, self.iterations[i], self.converged[i], self.final_diff[i], self.wall_seconds[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalStats {
    pub iterations: usize,
    pub converged: bool,
    pub final_diff: f64,
    pub wall_seconds: f64,
}

/// Dynamic state of one neuron carried from interval to interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsystemState<T> {
    pub y: [T; STATE_DIM],
    /// Step size the controller proposes next.
    pub dt: T,
}

impl<T: Scalar> SubsystemState<T> {
    pub fn v(&self) -> T {
        self.y[idx::V]
    }
}

/// Synaptic input per neuron and grid slot for one interval: entry `u` is
/// the summed weight of spikes arriving at grid point `t0 + u * h`.
pub type SlotInputs<'a, T> = &'a [Option<&'a [T]>];

/// Result of one interval.
#[derive(Debug, Clone)]
pub struct IntervalOutcome<T> {
    /// Grid solutions of the final sweep, one per neuron.
    pub solutions: Vec<GridSolution<T>>,
    /// Published V-waveforms of the final sweep.
    pub waveforms: Vec<Waveform<T>>,
    pub stats: IntervalStats,
}

struct NeuronProblem<'a, T> {
    params: &'a NeuronParams<T>,
    input: Option<&'a WaveformSum<T>>,
    total_g: T,
    t0: T,
    arrivals: Option<&'a [T]>,
}

impl<T: Scalar> IntervalProblem<T> for NeuronProblem<'_, T> {
    fn dim(&self) -> usize {
        STATE_DIM
    }

    #[inline]
    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) {
        let gap = match self.input {
            Some(sum) => sum.eval_local(t - self.t0) - self.total_g * y[idx::V],
            None => T::zero(),
        };
        hh_rhs_into(self.params, y, gap, T::zero(), dy);
    }

    fn at_grid(&mut self, u: usize, y: &mut [T]) {
        if self.params.synapse == SynapseModel::Pulse {
            y[idx::I_SYN] = T::zero();
        }
        if let Some(a) = self.arrivals {
            y[idx::I_SYN] = y[idx::I_SYN] + a[u];
        }
    }

    fn project(&self, y: &mut [T]) {
        clamp_gates(y);
    }
}

/// Integrates one neuron over `[t0, t0 + span]` against the weighted sum of
/// its partners' waveforms `input` (already multiplied by the junction
/// conductances; `total_g` is the sum of those conductances).
#[allow(clippy::too_many_arguments)]
fn integrate_neuron<T: Scalar>(
    tableau: &ButcherTableau<T>,
    rk_tolerance: T,
    params: &NeuronParams<T>,
    start: &SubsystemState<T>,
    input: Option<&WaveformSum<T>>,
    total_g: T,
    arrivals: Option<&[T]>,
    t0: T,
    span: T,
    h: T,
) -> Result<(GridSolution<T>, T)> {
    let mut controller = StepController::new(rk_tolerance, h);
    controller.dt = start.dt.min(h).max(controller.min_step);
    let mut problem = NeuronProblem { params, input, total_g, t0, arrivals };
    let mut integ = GridIntegrator::new(tableau, STATE_DIM);
    let sol = integ.run(&mut problem, &mut controller, &start.y, t0, span, h)?;
    Ok((sol, controller.dt))
}

/// Solves a single neuron over one interval with its gap-junction partners'
/// waveforms given as `(conductance, waveform)` pairs. Returns the grid
/// solution and the neuron's new V-waveform.
#[allow(clippy::too_many_arguments)]
pub fn solve_subsystem<T: Scalar>(
    tableau: &ButcherTableau<T>,
    rk_tolerance: T,
    params: &NeuronParams<T>,
    start: &SubsystemState<T>,
    inputs: &[(T, &Waveform<T>)],
    arrivals: Option<&[T]>,
    t0: T,
    span: T,
    h: T,
) -> Result<(GridSolution<T>, Waveform<T>)> {
    let mut total_g = T::zero();
    let sum = if inputs.is_empty() {
        None
    } else {
        let mut sum = WaveformSum::new(t0, span, h);
        for (g, w) in inputs {
            sum.add(*g, w)?;
            total_g = total_g + *g;
        }
        Some(sum)
    };
    let (sol, _) = integrate_neuron(
        tableau, rk_tolerance, params, start, sum.as_ref(), total_g, arrivals, t0, span, h,
    )?;
    let w = Waveform::from_grid(&sol, idx::V)?;
    Ok((sol, w))
}

/// True iff every waveform moved by at most `tol` at every grid point
/// `u = 1..=span/h`.
pub fn converged<T: Scalar>(curr: &[Waveform<T>], prev: &[Waveform<T>], tol: T, h: T) -> Result<bool> {
    Ok(max_change(curr, prev, h, None)? <= tol)
}

/// Largest grid-point change over the neurons selected by `mask` (all if
/// `None`).
fn max_change<T: Scalar>(
    curr: &[Waveform<T>],
    prev: &[Waveform<T>],
    h: T,
    mask: Option<&[bool]>,
) -> Result<T> {
    if curr.len() != prev.len() {
        return Err(Error::Config("waveform sets differ in size".into()));
    }
    let mut worst = T::zero();
    for (i, (a, b)) in curr.iter().zip(prev).enumerate() {
        if mask.map_or(true, |m| m[i]) {
            let d = waveform_max_diff(a, b, h)?;
            if d > worst || d.is_nan() {
                worst = d;
            }
        }
    }
    Ok(worst)
}

/// Waveform-relaxation engine for one network.
pub struct WfrEngine<'n, T> {
    network: &'n Network<T>,
    adjacency: GapAdjacency<T>,
    templates: Vec<Option<Arc<SpikeShapeTemplate<T>>>>,
    config: WfrConfig<T>,
    h: T,
    pool: rayon::ThreadPool,
}

impl<'n, T: Scalar> WfrEngine<'n, T> {
    /// Prepares the engine. Builds one spike template per distinct neuron
    /// parameter set when spike detection is enabled.
    pub fn new(network: &'n Network<T>, config: WfrConfig<T>, h: T, workers: usize) -> Result<Self> {
        config.validate(h)?;
        if config.scheme == Scheme::Picard {
            return Err(Error::Config(
                "picard splitting needs full-state waveforms and is limited to the linear test systems"
                    .into(),
            ));
        }
        network.validate(h)?;
        let adjacency = network.gap_adjacency();
        let mut templates: Vec<Option<Arc<SpikeShapeTemplate<T>>>> = Vec::with_capacity(network.len());
        if config.spike_detection {
            let mut cache: Vec<(&NeuronParams<T>, Arc<SpikeShapeTemplate<T>>)> = Vec::new();
            for spec in &network.neurons {
                let found = cache.iter().find(|(p, _)| **p == spec.params).map(|(_, t)| Arc::clone(t));
                let tpl = match found {
                    Some(t) => t,
                    None => {
                        let t = build_spike_template(&spec.params, config.template_resolution)?;
                        cache.push((&spec.params, Arc::clone(&t)));
                        t
                    }
                };
                templates.push(Some(tpl));
            }
        } else {
            templates.resize(network.len(), None);
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self { network, adjacency, templates, config, h, pool })
    }

    pub fn config(&self) -> &WfrConfig<T> {
        &self.config
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn adjacency(&self) -> &GapAdjacency<T> {
        &self.adjacency
    }

    pub fn template(&self, neuron: usize) -> Option<&Arc<SpikeShapeTemplate<T>>> {
        self.templates[neuron].as_ref()
    }

    /// Initial states of all neurons.
    pub fn initial_states(&self) -> Result<Vec<SubsystemState<T>>> {
        Ok(self
            .network
            .initial_states()?
            .into_iter()
            .map(|s| SubsystemState { y: s.to_array(), dt: self.h })
            .collect())
    }

    fn arrivals<'a>(inputs: Option<SlotInputs<'a, T>>, i: usize) -> Option<&'a [T]> {
        inputs.and_then(|a| a.get(i).copied().flatten())
    }

    /// Extrapolated waveforms used as inputs of the first sweep.
    pub fn initial_guesses(
        &self,
        states: &[SubsystemState<T>],
        inputs: Option<SlotInputs<'_, T>>,
        t0: T,
        span: T,
    ) -> Result<Vec<Waveform<T>>> {
        (0..states.len())
            .map(|i| {
                let s = &states[i];
                let mut y = s.y;
                let params = &self.network.neurons[i].params;
                if params.synapse == SynapseModel::Pulse {
                    y[idx::I_SYN] = T::zero();
                }
                if let Some(a) = Self::arrivals(inputs, i) {
                    y[idx::I_SYN] = y[idx::I_SYN] + a[0];
                }
                let mut gap = T::zero();
                for &(j, g) in &self.adjacency.neighbors[i] {
                    gap = gap + g * (states[j].v() - s.v());
                }
                let mut dy = [T::zero(); STATE_DIM];
                hh_rhs_into(params, &y, gap, T::zero(), &mut dy);
                initial_guess(s.v(), dy[idx::V], self.templates[i].as_ref(), t0, span)
            })
            .collect()
    }

    fn solve_one(
        &self,
        i: usize,
        states: &[SubsystemState<T>],
        sources: &[&Waveform<T>],
        inputs: Option<SlotInputs<'_, T>>,
        t0: T,
        span: T,
    ) -> Result<(GridSolution<T>, T)> {
        let neighbors = &self.adjacency.neighbors[i];
        let sum = if neighbors.is_empty() {
            None
        } else {
            let mut sum = WaveformSum::new(t0, span, self.h);
            for &(j, g) in neighbors {
                sum.add(g, sources[j])?;
            }
            Some(sum)
        };
        integrate_neuron(
            &self.config.tableau,
            self.config.rk_tolerance,
            &self.network.neurons[i].params,
            &states[i],
            sum.as_ref(),
            self.adjacency.total_g[i],
            Self::arrivals(inputs, i),
            t0,
            span,
            self.h,
        )
        .map_err(|e| Error::Neuron { neuron: i, t: t0.to_f64_lossy(), source: Box::new(e) })
    }

    /// One Jacobi sweep: every neuron against `sources`, in parallel.
    fn jacobi_sweep(
        &self,
        states: &[SubsystemState<T>],
        sources: &[Waveform<T>],
        inputs: Option<SlotInputs<'_, T>>,
        t0: T,
        span: T,
    ) -> Result<Vec<(GridSolution<T>, T)>> {
        let refs: Vec<&Waveform<T>> = sources.iter().collect();
        self.pool.install(|| {
            (0..states.len())
                .into_par_iter()
                .map(|i| self.solve_one(i, states, &refs, inputs, t0, span))
                .collect()
        })
    }

    /// Iterates one interval starting at `t0` to convergence and advances
    /// `states` to its end.
    pub fn run_interval(
        &self,
        states: &mut [SubsystemState<T>],
        inputs: Option<SlotInputs<'_, T>>,
        t0: T,
    ) -> Result<IntervalOutcome<T>> {
        let started = Instant::now();
        let span = self.config.effective_interval(self.h);
        let max_iter = if self.config.scheme == Scheme::NonIterative {
            1
        } else {
            self.config.max_iterations
        };
        let coupled: Vec<bool> = self.adjacency.neighbors.iter().map(|n| !n.is_empty()).collect();
        let any_coupled = coupled.iter().any(|c| *c);

        let mut prev = self.initial_guesses(states, inputs, t0, span)?;
        let mut iterations = 0;
        let mut change;
        let mut result: Vec<(GridSolution<T>, T)>;
        loop {
            iterations += 1;
            let (sols, curr) = match self.config.scheme {
                Scheme::GaussSeidel => {
                    let mut sources = prev.clone();
                    let mut sols = Vec::with_capacity(states.len());
                    for i in 0..states.len() {
                        let refs: Vec<&Waveform<T>> = sources.iter().collect();
                        let r = self.solve_one(i, states, &refs, inputs, t0, span)?;
                        sources[i] = Waveform::from_grid(&r.0, idx::V)?;
                        sols.push(r);
                    }
                    (sols, sources)
                }
                _ => {
                    let sols = self.jacobi_sweep(states, &prev, inputs, t0, span)?;
                    let curr = sols
                        .iter()
                        .map(|(s, _)| Waveform::from_grid(s, idx::V))
                        .collect::<Result<Vec<_>>>()?;
                    (sols, curr)
                }
            };
            change = if any_coupled {
                max_change(&curr, &prev, self.h, Some(&coupled))?
            } else {
                T::zero()
            };
            result = sols;
            prev = curr;
            if change <= self.config.tol || iterations >= max_iter {
                break;
            }
        }
        let converged = change <= self.config.tol || self.config.scheme == Scheme::NonIterative;

        for (s, (sol, dt)) in states.iter_mut().zip(&result) {
            s.y.copy_from_slice(sol.final_state());
            s.dt = *dt;
        }
        let solutions = result.into_iter().map(|(s, _)| s).collect();
        Ok(IntervalOutcome {
            solutions,
            waveforms: prev,
            stats: IntervalStats {
                iterations,
                converged,
                final_diff: change.to_f64_lossy(),
                wall_seconds: started.elapsed().as_secs_f64(),
            },
        })
    }

    /// Non-iterative baseline over `steps` consecutive grid steps from `t0`:
    /// one sweep per step against constant (or spike-template) extrapolations
    /// of the partners' potentials at the start of the step.
    pub fn non_iterative_interval(
        &self,
        states: &mut [SubsystemState<T>],
        inputs: Option<SlotInputs<'_, T>>,
        t0: T,
        steps: usize,
    ) -> Result<Vec<IntervalOutcome<T>>> {
        let mut out = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = t0 + T::from_usize_lossy(k) * self.h;
            let slot_inputs: Option<Vec<Option<&[T]>>> =
                inputs.map(|a| a.iter().map(|x| x.map(|s| &s[k..k + 1])).collect());
            let started = Instant::now();
            let guesses = self.initial_guesses(states, slot_inputs.as_deref(), t, self.h)?;
            let sols = self.jacobi_sweep(states, &guesses, slot_inputs.as_deref(), t, self.h)?;
            for (s, (sol, dt)) in states.iter_mut().zip(&sols) {
                s.y.copy_from_slice(sol.final_state());
                s.dt = *dt;
            }
            let waveforms = sols
                .iter()
                .map(|(s, _)| Waveform::from_grid(s, idx::V))
                .collect::<Result<Vec<_>>>()?;
            out.push(IntervalOutcome {
                solutions: sols.into_iter().map(|(s, _)| s).collect(),
                waveforms,
                stats: IntervalStats {
                    iterations: 1,
                    converged: true,
                    final_diff: 0.0,
                    wall_seconds: started.elapsed().as_secs_f64(),
                },
            });
        }
        Ok(out)
    }
}
