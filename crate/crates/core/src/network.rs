//! Network topology, spike buffering and the top-level simulation loop.
//!
//! All times live on the global grid `k * h`. Spike interaction is frozen
//! for the duration of the minimal delay `d_min`: the simulation advances in
//! windows of that length, and spikes emitted inside a window are only
//! delivered in later windows.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{detect_threshold_crossing, resting_state, NeuronParams, NeuronState};
use crate::scalar::{whole_steps, Scalar};
use crate::wfr::{IterationStats, SubsystemState, WfrConfig, WfrEngine};

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronSpec<T> {
    pub params: NeuronParams<T>,
    /// Initial state; `None` starts from the resting state without input.
    pub initial: Option<NeuronState<T>>,
}

/// Undirected electrical synapse of conductance `g` (nS).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapJunction<T> {
    pub a: usize,
    pub b: usize,
    pub g: T,
}

/// Chemical synapse: spikes of `source` reach `target` after `delay` ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeConnection<T> {
    pub source: usize,
    pub target: usize,
    /// Jump of the target's synaptic input current (pA).
    pub weight: T,
    pub delay: T,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network<T> {
    pub neurons: Vec<NeuronSpec<T>>,
    pub gap_junctions: Vec<GapJunction<T>>,
    pub connections: Vec<SpikeConnection<T>>,
}

/// Gap-junction partners of every neuron, in junction order.
#[derive(Debug, Clone, PartialEq)]
pub struct GapAdjacency<T> {
    pub neighbors: Vec<Vec<(usize, T)>>,
    /// Summed conductance per neuron.
    pub total_g: Vec<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new() -> Self {
        Self { neurons: Vec::new(), gap_junctions: Vec::new(), connections: Vec::new() }
    }

    /// Adds a neuron and returns its id.
    pub fn add_neuron(&mut self, params: NeuronParams<T>) -> usize {
        self.neurons.push(NeuronSpec { params, initial: None });
        self.neurons.len() - 1
    }

    pub fn add_gap_junction(&mut self, a: usize, b: usize, g: T) {
        self.gap_junctions.push(GapJunction { a, b, g });
    }

    pub fn connect(&mut self, source: usize, target: usize, weight: T, delay: T) {
        self.connections.push(SpikeConnection { source, target, weight, delay });
    }

    pub fn len(&self) -> usize {
        self.neurons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty()
    }

    pub fn validate(&self, h: T) -> Result<()> {
        let n = self.len();
        for spec in &self.neurons {
            spec.params.validate()?;
        }
        for gj in &self.gap_junctions {
            if gj.a >= n || gj.b >= n {
                return Err(Error::Config(format!("gap junction {}-{} out of range", gj.a, gj.b)));
            }
            if gj.a == gj.b {
                return Err(Error::Config(format!("gap junction on neuron {} to itself", gj.a)));
            }
            if !(gj.g >= T::zero()) {
                return Err(Error::Config("gap conductance must be non-negative".into()));
            }
        }
        for c in &self.connections {
            if c.source >= n || c.target >= n {
                return Err(Error::Config(format!(
                    "connection {}->{} out of range",
                    c.source, c.target
                )));
            }
            if whole_steps(c.delay, h).unwrap_or(0) == 0 {
                return Err(Error::Config(format!(
                    "delay {} ms of {}->{} is not a positive multiple of h = {} ms",
                    c.delay, c.source, c.target, h
                )));
            }
            if !c.weight.is_finite() {
                return Err(Error::Config("connection weight must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn gap_adjacency(&self) -> GapAdjacency<T> {
        let n = self.len();
        let mut neighbors = vec![Vec::new(); n];
        for gj in &self.gap_junctions {
            neighbors[gj.a].push((gj.b, gj.g));
            neighbors[gj.b].push((gj.a, gj.g));
        }
        let total_g = neighbors
            .iter()
            .map(|nb| nb.iter().fold(T::zero(), |acc, (_, g)| acc + *g))
            .collect();
        GapAdjacency { neighbors, total_g }
    }

    pub fn initial_states(&self) -> Result<Vec<NeuronState<T>>> {
        self.neurons
            .iter()
            .map(|spec| match spec.initial {
                Some(s) => Ok(s),
                None => {
                    let mut quiet = spec.params.clone();
                    quiet.i_ext = T::zero();
                    resting_state(&quiet)
                }
            })
            .collect()
    }
}

/// Smallest synaptic delay, or `fallback` for networks without spike
/// connections.
pub fn min_delay<T: Scalar>(network: &Network<T>, fallback: T) -> T {
    network
        .connections
        .iter()
        .map(|c| c.delay)
        .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))))
        .unwrap_or(fallback)
}

/// Ring lattice of `v` identical neurons, each coupled to its `degree`
/// nearest neighbours with conductance `total_g / degree`, so that every
/// neuron's summed conductance is `total_g`. An odd degree additionally
/// couples every neuron to the opposite one, which needs an even `v`.
pub fn build_scaled_network<T: Scalar>(
    v: usize,
    degree: usize,
    total_g: T,
    params: NeuronParams<T>,
) -> Result<Network<T>> {
    if degree == 0 || v <= degree {
        return Err(Error::Config(format!("need v > degree > 0, got v = {v}, degree = {degree}")));
    }
    if degree % 2 == 1 && v % 2 == 1 {
        return Err(Error::Config("odd degree needs an even number of neurons".into()));
    }
    let g = total_g / T::from_usize_lossy(degree);
    let mut net = Network::new();
    for _ in 0..v {
        net.add_neuron(params.clone());
    }
    for i in 0..v {
        for k in 1..=degree / 2 {
            net.add_gap_junction(i, (i + k) % v, g);
        }
    }
    if degree % 2 == 1 {
        for i in 0..v / 2 {
            net.add_gap_junction(i, i + v / 2, g);
        }
    }
    Ok(net)
}

/// Pending spike events on the grid, kept in a ring of per-slot lists.
#[derive(Debug, Clone)]
pub struct SpikeBuffer<T> {
    slots: Vec<Vec<(usize, T)>>,
    /// Earliest slot that may still be read.
    horizon: u64,
}

impl<T: Scalar> SpikeBuffer<T> {
    /// Buffer able to hold events up to `depth - 1` slots ahead.
    pub fn new(depth: usize) -> Self {
        Self { slots: vec![Vec::new(); depth.max(1)], horizon: 0 }
    }

    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    /// Schedules `weight` for `target` at grid slot `slot`.
    pub fn push(&mut self, slot: u64, target: usize, weight: T) -> Result<()> {
        if slot < self.horizon || slot >= self.horizon + self.slots.len() as u64 {
            return Err(Error::Config(format!(
                "spike for slot {slot} outside buffer window [{}, {})",
                self.horizon,
                self.horizon + self.slots.len() as u64
            )));
        }
        let d = self.depth() as u64;
        self.slots[(slot % d) as usize].push((target, weight));
        Ok(())
    }

    /// Removes and returns the events of `slot`; slots must be taken in order.
    pub fn take(&mut self, slot: u64) -> Vec<(usize, T)> {
        debug_assert!(slot >= self.horizon);
        let d = self.depth() as u64;
        self.horizon = slot + 1;
        std::mem::take(&mut self.slots[(slot % d) as usize])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig<T> {
    pub h: T,
    pub duration: T,
    /// Neurons to record; `None` records all.
    pub record: Option<Vec<usize>>,
    pub wfr: WfrConfig<T>,
    pub workers: usize,
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn new(h: T, duration: T, wfr: WfrConfig<T>) -> Self {
        Self { h, duration, record: None, wfr, workers: 1 }
    }
}

/// Membrane potentials at every grid point and registered spikes.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording<T> {
    pub h: T,
    pub neurons: Vec<usize>,
    /// `v[k][s]`: potential of `neurons[k]` at time `s * h`.
    pub v: Vec<Vec<T>>,
    /// Grid slots of registered spikes per recorded neuron.
    pub spikes: Vec<Vec<u64>>,
}

impl<T: Scalar> Recording<T> {
    pub fn samples(&self) -> usize {
        self.v.first().map_or(0, |v| v.len())
    }

    pub fn time(&self, slot: usize) -> T {
        T::from_usize_lossy(slot) * self.h
    }

    pub fn trace(&self, neuron: usize) -> Option<&[T]> {
        self.neurons.iter().position(|&n| n == neuron).map(|k| self.v[k].as_slice())
    }

    pub fn spike_times(&self, neuron: usize) -> Option<Vec<T>> {
        let k = self.neurons.iter().position(|&n| n == neuron)?;
        Some(self.spikes[k].iter().map(|&s| T::from_usize_lossy(s as usize) * self.h).collect())
    }

    /// Rows `time,neuron,V`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,neuron,V")?;
        for s in 0..self.samples() {
            for (k, n) in self.neurons.iter().enumerate() {
                writeln!(out, "{},{},{}", self.time(s), n, self.v[k][s])?;
            }
        }
        Ok(())
    }

    /// Rows `time,neuron`, sorted by time.
    pub fn write_spikes_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,neuron")?;
        let mut all: Vec<(u64, usize)> = self
            .neurons
            .iter()
            .zip(&self.spikes)
            .flat_map(|(n, s)| s.iter().map(move |slot| (*slot, *n)))
            .collect();
        all.sort_unstable();
        for (slot, n) in all {
            writeln!(out, "{},{}", self.time(slot as usize), n)?;
        }
        Ok(())
    }
}

/// Simulates the network for `config.duration` ms.
pub fn simulate<T: Scalar>(
    network: &Network<T>,
    config: &SimulationConfig<T>,
) -> Result<(Recording<T>, IterationStats)> {
    let h = config.h;
    let engine = WfrEngine::new(network, config.wfr.clone(), h, config.workers)?;
    let mut states = engine.initial_states()?;
    simulate_with(&engine, network, config, &mut states)
}

/// Simulation loop on a prepared engine, starting at `t = 0` from `states`.
pub fn simulate_with<T: Scalar>(
    engine: &WfrEngine<'_, T>,
    network: &Network<T>,
    config: &SimulationConfig<T>,
    states: &mut [SubsystemState<T>],
) -> Result<(Recording<T>, IterationStats)> {
    let h = config.h;
    let total_slots = whole_steps(config.duration, h)
        .ok_or_else(|| Error::Config("duration must be a non-negative multiple of h".into()))?;
    let interval = config.wfr.effective_interval(h);
    let interval_slots = whole_steps(interval, h)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config("iteration interval must be a positive multiple of h".into()))?;
    let window = min_delay(network, interval);
    let window_slots = whole_steps(window, h)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config("minimal delay must be a positive multiple of h".into()))?;
    if !network.connections.is_empty() && interval_slots > window_slots {
        return Err(Error::Config("iteration interval exceeds the minimal delay".into()));
    }
    if window_slots % interval_slots != 0 {
        return Err(Error::Config(
            "minimal delay must be a multiple of the iteration interval".into(),
        ));
    }
    if total_slots % interval_slots != 0 {
        return Err(Error::Config(
            "duration must be a multiple of the iteration interval".into(),
        ));
    }
    let n = network.len();
    let recorded: Vec<usize> = match &config.record {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i >= n) {
                return Err(Error::Config(format!("recorded neuron {bad} does not exist")));
            }
            ids.clone()
        }
        None => (0..n).collect(),
    };
    let mut record_slot = vec![None; n];
    for (k, &i) in recorded.iter().enumerate() {
        record_slot[i] = Some(k);
    }
    let mut rec = Recording {
        h,
        neurons: recorded.clone(),
        v: recorded
            .iter()
            .map(|&i| {
                let mut v = Vec::with_capacity(total_slots + 1);
                v.push(states[i].v());
                v
            })
            .collect(),
        spikes: vec![Vec::new(); recorded.len()],
    };

    let mut outgoing: Vec<Vec<(usize, T, u64)>> = vec![Vec::new(); n];
    let mut max_delay_slots = 0usize;
    for c in &network.connections {
        let d = whole_steps(c.delay, h).expect("validated delay");
        max_delay_slots = max_delay_slots.max(d);
        outgoing[c.source].push((c.target, c.weight, d as u64));
    }
    let mut buffer = SpikeBuffer::new(max_delay_slots + window_slots + 1);
    let mut stats = IterationStats::default();
    let theta: Vec<T> = network.neurons.iter().map(|s| s.params.theta).collect();

    let mut window_start = 0usize;
    while window_start < total_slots {
        let window_end = (window_start + window_slots).min(total_slots);
        let len = window_end - window_start;
        let mut arrivals: Vec<Option<Vec<T>>> = vec![None; n];
        for k in 0..len {
            for (target, w) in buffer.take((window_start + k) as u64) {
                let slots = arrivals[target].get_or_insert_with(|| vec![T::zero(); len]);
                slots[k] = slots[k] + w;
            }
        }

        let mut offset = 0;
        while offset < len {
            let slot0 = window_start + offset;
            let t0 = T::from_usize_lossy(slot0) * h;
            let inputs: Vec<Option<&[T]>> = arrivals
                .iter()
                .map(|a| a.as_ref().map(|v| &v[offset..offset + interval_slots]))
                .collect();
            let any_input = inputs.iter().any(|x| x.is_some());
            let outcome = engine.run_interval(states, any_input.then_some(inputs.as_slice()), t0)?;
            stats.push(&outcome.stats);

            for (i, sol) in outcome.solutions.iter().enumerate() {
                let rk = record_slot[i];
                for u in 0..sol.segments {
                    let before = sol.value(u)[0];
                    let after = sol.value(u + 1)[0];
                    if let Some(k) = rk {
                        rec.v[k].push(after);
                    }
                    if detect_threshold_crossing(before, after, theta[i]) {
                        let slot = (slot0 + u + 1) as u64;
                        if let Some(k) = rk {
                            rec.spikes[k].push(slot);
                        }
                        for &(target, weight, d) in &outgoing[i] {
                            buffer.push(slot + d, target, weight)?;
                        }
                    }
                }
            }
            offset += interval_slots;
        }
        window_start = window_end;
    }
    Ok((rec, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wfr::Scheme;

    fn params() -> NeuronParams<f64> {
        NeuronParams::default().with_input(200.0)
    }

    #[test]
    fn min_delay_cases() {
        let mut net = Network::new();
        for _ in 0..3 {
            net.add_neuron(params());
        }
        assert_eq!(min_delay(&net, 1.0), 1.0);
        net.connect(0, 1, 1.0, 1.0);
        net.connect(1, 2, 1.0, 2.0);
        net.connect(2, 0, 1.0, 1.5);
        assert_eq!(min_delay(&net, 1.0), 1.0);
        let mut single = Network::new();
        single.add_neuron(params());
        single.add_neuron(params());
        single.connect(0, 1, 1.0, 0.1);
        assert_eq!(min_delay(&single, 1.0), 0.1);
    }

    #[test]
    fn scaled_network_two_neurons() {
        let net = build_scaled_network(2, 1, 30.0, params()).unwrap();
        assert_eq!(net.gap_junctions, vec![GapJunction { a: 0, b: 1, g: 30.0 }]);
    }

    #[test]
    fn scaled_network_handshake_count() {
        let net = build_scaled_network(1000, 60, 30.0, params()).unwrap();
        assert_eq!(net.gap_junctions.len(), 30000);
        assert!(net.gap_junctions.iter().all(|g| g.g == 0.5));
        let adj = net.gap_adjacency();
        assert!(adj.total_g.iter().all(|&g| g == 30.0));
        assert!(adj.neighbors.iter().all(|n| n.len() == 60));
        for (i, nb) in adj.neighbors.iter().enumerate() {
            let mut ids: Vec<usize> = nb.iter().map(|x| x.0).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 60);
            assert!(!ids.contains(&i));
        }
    }

    #[test]
    fn scaled_network_rejects_small_rings() {
        assert!(build_scaled_network(60, 60, 30.0, params()).is_err());
        assert!(build_scaled_network(61, 3, 30.0, params()).is_err());
        assert!(build_scaled_network(10, 0, 30.0, params()).is_err());
    }

    #[test]
    fn validation_catches_bad_topology() {
        let mut net = Network::new();
        net.add_neuron(params());
        net.add_neuron(params());
        net.add_gap_junction(0, 0, 1.0);
        assert!(net.validate(0.1).is_err());
        let mut net = Network::new();
        net.add_neuron(params());
        net.add_neuron(params());
        net.connect(0, 1, 1.0, 0.15);
        assert!(net.validate(0.1).is_err());
        net.connections[0].delay = 0.2;
        net.validate(0.1).unwrap();
        net.add_gap_junction(0, 5, 1.0);
        assert!(net.validate(0.1).is_err());
    }

    #[test]
    fn buffer_delivers_in_slot_order() {
        let mut b = SpikeBuffer::<f64>::new(5);
        b.push(3, 1, 2.0).unwrap();
        b.push(3, 0, 1.0).unwrap();
        b.push(4, 2, 0.5).unwrap();
        assert!(b.push(5, 0, 1.0).is_err());
        assert!(b.take(0).is_empty());
        assert!(b.take(1).is_empty());
        assert!(b.take(2).is_empty());
        assert_eq!(b.take(3), vec![(1, 2.0), (0, 1.0)]);
        b.push(7, 0, 1.0).unwrap();
        assert_eq!(b.take(4), vec![(2, 0.5)]);
        assert!(b.push(3, 0, 1.0).is_err());
    }

    #[test]
    fn zero_duration_records_initial_values() {
        let mut net = Network::new();
        net.add_neuron(params());
        let cfg = SimulationConfig::new(0.1, 0.0, WfrConfig { spike_detection: false, ..WfrConfig::default() });
        let (rec, stats) = simulate(&net, &cfg).unwrap();
        assert_eq!(rec.samples(), 1);
        assert_eq!(stats.intervals(), 0);
        let rest = resting_state(&NeuronParams::<f64>::default()).unwrap();
        assert_eq!(rec.v[0][0], rest.v);
    }

    #[test]
    fn iteration_interval_must_fit_delay() {
        let mut net = Network::new();
        net.add_neuron(params());
        net.add_neuron(params());
        net.connect(0, 1, 10.0, 0.5);
        let cfg = SimulationConfig::new(
            0.1,
            2.0,
            WfrConfig { interval: 1.0, spike_detection: false, ..WfrConfig::default() },
        );
        assert!(simulate(&net, &cfg).is_err());
    }

    #[test]
    fn csv_writers() {
        let rec = Recording {
            h: 0.5,
            neurons: vec![0, 3],
            v: vec![vec![1.0, 2.0], vec![3.0, 4.0]],
            spikes: vec![vec![1], vec![]],
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,neuron,V\n0,0,1\n0,3,3\n0.5,0,2\n0.5,3,4\n");
        let mut buf = Vec::new();
        rec.write_spikes_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,neuron\n0.5,0\n");
    }

    #[test]
    fn non_iterative_scheme_name_round_trip() {
        for s in [Scheme::Jacobi, Scheme::GaussSeidel, Scheme::Picard, Scheme::NonIterative] {
            assert_eq!(Scheme::parse(s.name()), Some(s));
        }
    }
}
