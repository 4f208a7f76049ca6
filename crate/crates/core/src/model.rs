//! Hodgkin-Huxley point neuron with Kv1/Kv3 potassium channels, gap-junction
//! current, spike jumps, threshold detection and the action-potential shape
//! template used for spike-aware extrapolation.
//!
//! Units: mV, ms, pF, nS, pA. With these units `nS * mV = pA` and
//! `pA / pF = mV/ms`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rk::{ButcherTableau, RkWorkspace};
use crate::scalar::{exprel_rate, Scalar};

/// Index of each component in the flat state vector.
pub mod idx {
    pub const V: usize = 0;
    pub const M: usize = 1;
    pub const H: usize = 2;
    pub const N: usize = 3;
    pub const P: usize = 4;
    pub const I_SYN: usize = 5;
}

/// Length of the flat neuron state vector.
pub const STATE_DIM: usize = 6;

/// How an incoming spike acts on the synaptic input current.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SynapseModel<T> {
    /// The weight is added to the input current for the rest of the grid
    /// step in which it arrives and is cleared at the next grid point.
    Pulse,
    /// The weight is added to the input current, which then decays with the
    /// given time constant (ms).
    Exponential { tau: T },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuronParams<T> {
    /// Membrane capacitance (pF).
    pub c_m: T,
    pub g_na: T,
    pub g_kv1: T,
    pub g_kv3: T,
    pub g_l: T,
    pub e_na: T,
    pub e_k: T,
    pub e_l: T,
    /// Spike registration threshold (mV).
    pub theta: T,
    /// Spike detection threshold used for template extrapolation (mV).
    pub v_spike: T,
    /// Constant external input current (pA).
    pub i_ext: T,
    pub synapse: SynapseModel<T>,
}

impl<T: Scalar> Default for NeuronParams<T> {
    fn default() -> Self {
        Self {
            c_m: T::lit(40.0),
            g_na: T::lit(4500.0),
            g_kv1: T::lit(9.0),
            g_kv3: T::lit(9000.0),
            g_l: T::lit(10.0),
            e_na: T::lit(74.0),
            e_k: T::lit(-90.0),
            e_l: T::lit(-70.0),
            theta: T::zero(),
            v_spike: T::lit(-40.0),
            i_ext: T::zero(),
            synapse: SynapseModel::Pulse,
        }
    }
}

impl<T: Scalar> NeuronParams<T> {
    pub fn with_input(mut self, i_ext: T) -> Self {
        self.i_ext = i_ext;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.c_m, self.g_na, self.g_kv1, self.g_kv3, self.g_l, self.e_na, self.e_k, self.e_l,
            self.theta, self.v_spike, self.i_ext,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("neuron parameters must be finite".into()));
        }
        if !(self.c_m > T::zero()) {
            return Err(Error::Config("membrane capacitance must be positive".into()));
        }
        if [self.g_na, self.g_kv1, self.g_kv3, self.g_l]
            .iter()
            .any(|g| *g < T::zero())
        {
            return Err(Error::Config("conductances must be non-negative".into()));
        }
        if let SynapseModel::Exponential { tau } = self.synapse {
            if !(tau > T::zero()) {
                return Err(Error::Config("synaptic time constant must be positive".into()));
            }
        }
        Ok(())
    }
}

/// State of one neuron. Also used for its time derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NeuronState<T> {
    /// Membrane potential (mV).
    pub v: T,
    /// Sodium activation.
    pub m: T,
    /// Sodium inactivation.
    pub h: T,
    /// Kv1 activation.
    pub n: T,
    /// Kv3 activation.
    pub p: T,
    /// Synaptic input current (pA).
    pub i_syn: T,
}

impl<T: Scalar> NeuronState<T> {
    pub fn to_array(&self) -> [T; STATE_DIM] {
        [self.v, self.m, self.h, self.n, self.p, self.i_syn]
    }

    pub fn from_slice(y: &[T]) -> Self {
        Self {
            v: y[idx::V],
            m: y[idx::M],
            h: y[idx::H],
            n: y[idx::N],
            p: y[idx::P],
            i_syn: y[idx::I_SYN],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Clamps gating variables into `[0, 1]`.
    pub fn clamp_gates(&mut self) {
        let mut y = self.to_array();
        clamp_gates(&mut y);
        *self = Self::from_slice(&y);
    }
}

/// Clamps the gating components of a flat state vector into `[0, 1]`.
#[inline]
pub fn clamp_gates<T: Scalar>(y: &mut [T]) {
    for g in &mut y[idx::M..=idx::P] {
        *g = g.max(T::zero()).min(T::one());
    }
}

struct Rates<T> {
    m: (T, T),
    h: (T, T),
    n: (T, T),
    p: (T, T),
}

#[inline]
fn rates<T: Scalar>(v: T) -> Rates<T> {
    let l = T::lit;
    Rates {
        m: (l(40.0) * exprel_rate(v - l(75.5), l(13.5)), l(1.2262) / (v / l(42.248)).exp()),
        h: (l(0.0035) / (v / l(24.186)).exp(), l(0.017) * exprel_rate(v + l(51.25), l(5.2))),
        n: (l(0.014) * exprel_rate(v + l(44.0), l(2.3)), l(0.0043) / ((v + l(44.0)) / l(34.0)).exp()),
        p: (exprel_rate(v - l(95.0), l(11.8)), l(0.025) / (v / l(22.222)).exp()),
    }
}

/// Ionic membrane current (pA, outward positive) at voltage `v`.
#[inline]
fn ionic_current<T: Scalar>(p: &NeuronParams<T>, v: T, m: T, h: T, n: T, kv3: T) -> T {
    let n2 = n * n;
    let i_na = p.g_na * m * m * m * h * (v - p.e_na);
    let i_k = (p.g_kv1 * n2 * n2 + p.g_kv3 * kv3 * kv3) * (v - p.e_k);
    let i_l = p.g_l * (v - p.e_l);
    i_na + i_k + i_l
}

/// Right-hand side on flat state vectors. No finiteness checks; the
/// integrator rejects non-finite stages.
#[inline]
pub fn hh_rhs_into<T: Scalar>(params: &NeuronParams<T>, y: &[T], gap_input: T, syn_input: T, dy: &mut [T]) {
    let v = y[idx::V];
    let (m, h, n, p) = (y[idx::M], y[idx::H], y[idx::N], y[idx::P]);
    let r = rates(v);
    let i_ion = ionic_current(params, v, m, h, n, p);
    dy[idx::V] = (-i_ion + y[idx::I_SYN] + syn_input + gap_input + params.i_ext) / params.c_m;
    dy[idx::M] = r.m.0 * (T::one() - m) - r.m.1 * m;
    dy[idx::H] = r.h.0 * (T::one() - h) - r.h.1 * h;
    dy[idx::N] = r.n.0 * (T::one() - n) - r.n.1 * n;
    dy[idx::P] = r.p.0 * (T::one() - p) - r.p.1 * p;
    dy[idx::I_SYN] = match params.synapse {
        SynapseModel::Pulse => T::zero(),
        SynapseModel::Exponential { tau } => -y[idx::I_SYN] / tau,
    };
}

/// Time derivative of the neuron state (per ms) under the given gap and
/// synaptic input currents (pA).
pub fn hh_rhs<T: Scalar>(
    state: &NeuronState<T>,
    params: &NeuronParams<T>,
    gap_input: T,
    syn_input: T,
) -> Result<NeuronState<T>> {
    if !state.is_finite() || !gap_input.is_finite() || !syn_input.is_finite() {
        return Err(Error::NonFinite { t: f64::NAN });
    }
    let mut dy = [T::zero(); STATE_DIM];
    hh_rhs_into(params, &state.to_array(), gap_input, syn_input, &mut dy);
    let d = NeuronState::from_slice(&dy);
    if d.is_finite() {
        Ok(d)
    } else {
        Err(Error::NonFinite { t: f64::NAN })
    }
}

/// Current (pA) flowing into the neuron at `v_self` through a junction of
/// conductance `g` (nS) to a neuron at `v_other`.
#[inline]
pub fn gap_current<T: Scalar>(g: T, v_self: T, v_other: T) -> T {
    g * (v_other - v_self)
}

/// Applies an incoming spike of the given weight (pA) to the synaptic input.
pub fn apply_spike<T: Scalar>(state: &NeuronState<T>, weight: T) -> NeuronState<T> {
    NeuronState {
        i_syn: state.i_syn + weight,
        ..*state
    }
}

/// Upward crossing of `theta` between two consecutive grid values.
#[inline]
pub fn detect_threshold_crossing<T: Scalar>(v_prev: T, v_curr: T, theta: T) -> bool {
    v_prev <= theta && theta < v_curr
}

fn steady_gates<T: Scalar>(v: T) -> (T, T, T, T) {
    let r = rates(v);
    let inf = |(a, b): (T, T)| a / (a + b);
    (inf(r.m), inf(r.h), inf(r.n), inf(r.p))
}

/// Fixed point of the isolated neuron under its constant input `i_ext`,
/// searched for in the subthreshold range `[-100, v_spike]`.
pub fn resting_state<T: Scalar>(params: &NeuronParams<T>) -> Result<NeuronState<T>> {
    let net = |v: T| {
        let (m, h, n, p) = steady_gates(v);
        params.i_ext - ionic_current(params, v, m, h, n, p)
    };
    let step = T::lit(0.25);
    let mut lo = T::lit(-100.0);
    let mut f_lo = net(lo);
    let mut bracket = None;
    while lo < params.v_spike {
        let hi = lo + step;
        let f_hi = net(hi);
        if f_lo == T::zero() {
            bracket = Some((lo, lo));
            break;
        }
        if (f_lo > T::zero()) != (f_hi > T::zero()) {
            bracket = Some((lo, hi));
            break;
        }
        lo = hi;
        f_lo = f_hi;
    }
    let (mut a, mut b) =
        bracket.ok_or_else(|| Error::Config("no subthreshold resting state".into()))?;
    let fa_pos = net(a) > T::zero();
    for _ in 0..200 {
        let mid = (a + b) / T::lit(2.0);
        if mid == a || mid == b {
            break;
        }
        if (net(mid) > T::zero()) == fa_pos {
            a = mid;
        } else {
            b = mid;
        }
    }
    let v = if net(a).abs() <= net(b).abs() { a } else { b };
    let (m, h, n, p) = steady_gates(v);
    Ok(NeuronState { v, m, h, n, p, i_syn: T::zero() })
}

/// Stereotyped action potential sampled at a fixed resolution.
///
/// The samples run from the upward crossing of `v_spike - margin` to the
/// downward crossing of the same level. Samples `0..=peak` rise strictly,
/// samples `peak..` fall strictly.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeShapeTemplate<T> {
    pub resolution: T,
    pub values: Vec<T>,
    pub peak: usize,
    pub v_spike: T,
    pub margin: T,
}

/// Which monotone part of the template a lookup refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Rising,
    Falling,
}

impl<T: Scalar> SpikeShapeTemplate<T> {
    pub fn duration(&self) -> T {
        T::from_usize_lossy(self.values.len() - 1) * self.resolution
    }

    pub fn peak_value(&self) -> T {
        self.values[self.peak]
    }

    pub fn peak_offset(&self) -> T {
        T::from_usize_lossy(self.peak) * self.resolution
    }

    pub fn final_value(&self) -> T {
        *self.values.last().expect("template is non-empty")
    }

    /// Membrane potential at time `offset` (ms) after the template start,
    /// linearly interpolated. Constant beyond either end.
    pub fn value_at(&self, offset: T) -> T {
        if offset <= T::zero() {
            return self.values[0];
        }
        let x = offset / self.resolution;
        let i = x.floor().to_usize().unwrap_or(usize::MAX);
        if i >= self.values.len() - 1 {
            return self.final_value();
        }
        let frac = x - T::from_usize_lossy(i);
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }

    /// Time offset (ms) at which the given branch passes through `v`.
    /// Values beyond the branch range clamp to its ends.
    pub fn offset_of(&self, v: T, branch: Branch) -> T {
        let (lo, hi) = match branch {
            Branch::Rising => (0, self.peak),
            Branch::Falling => (self.peak, self.values.len() - 1),
        };
        let rising = branch == Branch::Rising;
        let key = |i: usize| if rising { self.values[i] } else { -self.values[i] };
        let target = if rising { v } else { -v };
        if target <= key(lo) {
            return T::from_usize_lossy(lo) * self.resolution;
        }
        if target >= key(hi) {
            return T::from_usize_lossy(hi) * self.resolution;
        }
        // key(a) < target <= key(b)
        let (mut a, mut b) = (lo, hi);
        while b - a > 1 {
            let mid = (a + b) / 2;
            if key(mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        let frac = (target - key(a)) / (key(b) - key(a));
        (T::from_usize_lossy(a) + frac) * self.resolution
    }

    /// Template offset matching a suprathreshold state `(v0, dv0)`.
    /// Potentials above the peak clamp to the peak.
    pub fn anchor(&self, v0: T, dvdt0: T) -> Result<T> {
        if !(v0 >= self.v_spike) {
            return Err(Error::Config(format!(
                "template extrapolation needs V >= {} mV, got {}",
                self.v_spike, v0
            )));
        }
        if v0 >= self.peak_value() {
            return Ok(self.peak_offset());
        }
        let branch = if dvdt0 >= T::zero() { Branch::Rising } else { Branch::Falling };
        Ok(self.offset_of(v0, branch))
    }

    fn check(&self) -> Result<()> {
        let v = &self.values;
        if v.len() < 3 || self.peak == 0 || self.peak + 1 >= v.len() {
            return Err(Error::TemplateConstruction("degenerate action potential".into()));
        }
        let rising = v[..=self.peak].windows(2).all(|w| w[0] < w[1]);
        let falling = v[self.peak..].windows(2).all(|w| w[0] > w[1]);
        if !rising || !falling {
            return Err(Error::TemplateConstruction(
                "action potential is not split into strictly monotone branches".into(),
            ));
        }
        Ok(())
    }
}

/// Default distance (mV) below `v_spike` at which the template starts and ends.
pub const TEMPLATE_MARGIN: f64 = 2.0;
/// Probe current (pA) used when the neuron does not fire on its own input.
pub const TEMPLATE_PROBE_CURRENT: f64 = 2000.0;
const TEMPLATE_HORIZON_MS: f64 = 400.0;

/// Builds the spike template with the default margin.
pub fn build_spike_template<T: Scalar>(
    params: &NeuronParams<T>,
    resolution: T,
) -> Result<Arc<SpikeShapeTemplate<T>>> {
    build_spike_template_with_margin(params, resolution, T::lit(TEMPLATE_MARGIN))
}

/// Simulates an isolated neuron at fixed step `resolution` and records one
/// action potential.
///
/// The neuron starts at its resting state (without input) and receives its
/// own constant input. If that makes it fire at least twice, the last action
/// potential within the simulated horizon is used: repetitive firing adapts
/// over the first few spikes, and the late spikes have the stationary shape.
/// Otherwise a probe current is added until the potential reaches the
/// template's lower level and the first action potential is used.
pub fn build_spike_template_with_margin<T: Scalar>(
    params: &NeuronParams<T>,
    resolution: T,
    margin: T,
) -> Result<Arc<SpikeShapeTemplate<T>>> {
    params.validate()?;
    if !(resolution > T::zero()) || resolution > T::lit(0.001 + 1e-15) {
        return Err(Error::Config("template resolution must be in (0, 0.001] ms".into()));
    }
    if !(margin >= T::zero()) {
        return Err(Error::Config("template margin must be non-negative".into()));
    }
    let mut quiet = params.clone();
    quiet.i_ext = T::zero();
    let rest = resting_state(&quiet)?;

    if let Some(t) = record_spike(params, rest, resolution, margin, T::zero(), Pick::LastOfAtLeast(2))? {
        return Ok(Arc::new(t));
    }
    record_spike(params, rest, resolution, margin, T::lit(TEMPLATE_PROBE_CURRENT), Pick::First)?
        .map(Arc::new)
        .ok_or_else(|| {
            Error::TemplateConstruction("no action potential under the probe stimulus".into())
        })
}

#[derive(Clone, Copy)]
enum Pick {
    First,
    /// Last complete action potential, if there are at least this many.
    LastOfAtLeast(usize),
}

fn record_spike<T: Scalar>(
    params: &NeuronParams<T>,
    rest: NeuronState<T>,
    resolution: T,
    margin: T,
    probe: T,
    pick: Pick,
) -> Result<Option<SpikeShapeTemplate<T>>> {
    let tableau = ButcherTableau::<T>::fehlberg45();
    let mut ws = RkWorkspace::new(tableau.stages(), STATE_DIM);
    let lower = params.v_spike - margin;
    let steps = (T::lit(TEMPLATE_HORIZON_MS) / resolution).to_usize().unwrap_or(0);

    let mut y = rest.to_array().to_vec();
    let mut f = vec![T::zero(); STATE_DIM];
    let mut probe_on = probe > T::zero();
    let mut seen = 0usize;
    let mut recording: Option<Vec<T>> = None;
    let mut above_spike = false;
    let mut latest: Option<Vec<T>> = None;

    for k in 0..steps {
        let extra = if probe_on { probe } else { T::zero() };
        let mut rhs = |_t: T, yy: &[T], dy: &mut [T]| hh_rhs_into(params, yy, T::zero(), extra, dy);
        let t = T::from_usize_lossy(k) * resolution;
        rhs(t, &y, &mut f);
        ws.step(&tableau, &mut rhs, t, &y, &f, resolution)?;
        let prev_v = y[idx::V];
        y.copy_from_slice(&ws.y_high);
        clamp_gates(&mut y);
        let v = y[idx::V];
        if probe_on && v >= lower {
            probe_on = false;
        }
        if let Some(rec) = recording.as_mut() {
            if v >= lower {
                rec.push(v);
                above_spike |= v >= params.v_spike;
            } else {
                let rec = recording.take().unwrap_or_default();
                if above_spike {
                    seen += 1;
                    if let Pick::First = pick {
                        return finish_template(params, rec, resolution, margin).map(Some);
                    }
                    latest = Some(rec);
                }
                above_spike = false;
            }
        } else if prev_v < lower && v >= lower {
            recording = Some(vec![v]);
            above_spike = v >= params.v_spike;
        }
    }
    match (pick, latest) {
        (Pick::LastOfAtLeast(n), Some(rec)) if seen >= n => {
            finish_template(params, rec, resolution, margin).map(Some)
        }
        _ => Ok(None),
    }
}

fn finish_template<T: Scalar>(
    params: &NeuronParams<T>,
    values: Vec<T>,
    resolution: T,
    margin: T,
) -> Result<SpikeShapeTemplate<T>> {
    let peak = values
        .iter()
        .enumerate()
        .fold(0, |best, (i, x)| if *x > values[best] { i } else { best });
    let template = SpikeShapeTemplate { resolution, values, peak, v_spike: params.v_spike, margin };
    template.check()?;
    Ok(template)
}

/// Samples the template-based extrapolation of a suprathreshold membrane
/// potential: `horizon / step + 1` values starting at `v0`.
pub fn template_extrapolate<T: Scalar>(
    template: &SpikeShapeTemplate<T>,
    v0: T,
    dvdt0: T,
    horizon: T,
    step: T,
) -> Result<Vec<T>> {
    if !(step > T::zero()) || !(horizon >= T::zero()) {
        return Err(Error::Config("horizon and step must be positive".into()));
    }
    let start = template.anchor(v0, dvdt0)?;
    let count = (horizon / step).round().to_usize().unwrap_or(0);
    Ok((0..=count)
        .map(|k| template.value_at(start + T::from_usize_lossy(k) * step))
        .collect())
}
