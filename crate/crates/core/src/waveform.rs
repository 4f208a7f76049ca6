//! Membrane-potential waveforms exchanged between subsystems.
//!
//! A waveform covers one iteration interval `[t0, t0 + span]`. After the
//! first sweep it is a piecewise cubic Hermite interpolant built from the
//! values and right-hand sides at the `h`-grid points; before that it is an
//! extrapolation, either constant or following the spike template.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::SpikeShapeTemplate;
use crate::rk::GridSolution;
use crate::scalar::{whole_steps, Scalar};

/// Cubic Hermite basis `(p1, p2, p3, p4)` on `[0, 1]`: `p1`/`p2` weight the
/// left/right values, `p3`/`p4` the left/right derivatives scaled by `h`.
#[inline]
pub fn hermite_basis<T: Scalar>(theta: T) -> (T, T, T, T) {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    let t2 = theta * theta;
    let t3 = t2 * theta;
    (
        T::one() - three * t2 + two * t3,
        three * t2 - two * t3,
        theta - two * t2 + t3,
        t3 - t2,
    )
}

/// Derivatives of the basis polynomials with respect to `theta`.
#[inline]
fn hermite_basis_deriv<T: Scalar>(theta: T) -> (T, T, T, T) {
    let six = T::lit(6.0);
    let t2 = theta * theta;
    (
        six * (t2 - theta),
        six * (theta - t2),
        T::one() - T::lit(4.0) * theta + T::lit(3.0) * t2,
        T::lit(3.0) * t2 - T::lit(2.0) * theta,
    )
}

/// Data of one `h`-interval of a Hermite waveform.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WaveformSegment<T> {
    pub y_left: T,
    pub y_right: T,
    pub f_left: T,
    pub f_right: T,
}

impl<T: Scalar> WaveformSegment<T> {
    #[inline]
    pub fn eval(&self, theta: T, h: T) -> T {
        let (p1, p2, p3, p4) = hermite_basis(theta);
        self.y_left * p1 + self.y_right * p2 + h * (self.f_left * p3 + self.f_right * p4)
    }

    #[inline]
    fn eval_deriv(&self, theta: T, h: T) -> T {
        let (d1, d2, d3, d4) = hermite_basis_deriv(theta);
        (self.y_left * d1 + self.y_right * d2) / h + self.f_left * d3 + self.f_right * d4
    }

    fn is_finite(&self) -> bool {
        self.y_left.is_finite()
            && self.y_right.is_finite()
            && self.f_left.is_finite()
            && self.f_right.is_finite()
    }

    fn scaled(&self, w: T) -> Self {
        Self {
            y_left: w * self.y_left,
            y_right: w * self.y_right,
            f_left: w * self.f_left,
            f_right: w * self.f_right,
        }
    }

    fn add(&mut self, other: &Self) {
        self.y_left = self.y_left + other.y_left;
        self.y_right = self.y_right + other.y_right;
        self.f_left = self.f_left + other.f_left;
        self.f_right = self.f_right + other.f_right;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaveformKind {
    Hermite,
    Constant,
    SpikeTemplate,
}

#[derive(Debug, Clone, PartialEq)]
enum Body<T> {
    Hermite { h: T, segments: Vec<WaveformSegment<T>> },
    Constant(T),
    Template { template: Arc<SpikeShapeTemplate<T>>, offset: T },
}

/// A membrane-potential trajectory over one iteration interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    t0: T,
    span: T,
    body: Body<T>,
}

impl<T: Scalar> Waveform<T> {
    /// Hermite waveform from grid values and per-segment end derivatives.
    pub fn hermite(t0: T, h: T, segments: Vec<WaveformSegment<T>>) -> Result<Self> {
        if segments.is_empty() || !(h > T::zero()) {
            return Err(Error::Config("hermite waveform needs segments and h > 0".into()));
        }
        if segments.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite { t: t0.to_f64_lossy() });
        }
        if segments.windows(2).any(|w| w[0].y_right != w[1].y_left) {
            return Err(Error::Config("hermite segments are not continuous".into()));
        }
        let span = T::from_usize_lossy(segments.len()) * h;
        Ok(Self { t0, span, body: Body::Hermite { h, segments } })
    }

    /// Hermite waveform from values and derivatives at the `n + 1` grid points.
    pub fn from_samples(t0: T, h: T, values: &[T], derivs: &[T]) -> Result<Self> {
        if values.len() != derivs.len() || values.len() < 2 {
            return Err(Error::Config("need matching value and derivative samples".into()));
        }
        let segments = (0..values.len() - 1)
            .map(|u| WaveformSegment {
                y_left: values[u],
                y_right: values[u + 1],
                f_left: derivs[u],
                f_right: derivs[u + 1],
            })
            .collect();
        Self::hermite(t0, h, segments)
    }

    /// Hermite waveform of component `c` of a grid solution. One-sided
    /// derivatives are kept per segment, so jumps in the right-hand side at
    /// grid points are represented exactly.
    pub fn from_grid(sol: &GridSolution<T>, c: usize) -> Result<Self> {
        let segments = (0..sol.segments)
            .map(|u| WaveformSegment {
                y_left: sol.value(u)[c],
                y_right: sol.value(u + 1)[c],
                f_left: sol.deriv_start(u)[c],
                f_right: sol.deriv_end(u)[c],
            })
            .collect();
        Self::hermite(sol.t0, sol.h, segments)
    }

    pub fn constant(value: T, t0: T, span: T) -> Result<Self> {
        if !(span > T::zero()) {
            return Err(Error::Config("waveform interval must be positive".into()));
        }
        Ok(Self { t0, span, body: Body::Constant(value) })
    }

    /// Waveform following the spike template from `offset` (ms into the
    /// template) at `t0`.
    pub fn template(template: Arc<SpikeShapeTemplate<T>>, offset: T, t0: T, span: T) -> Result<Self> {
        if !(span > T::zero()) {
            return Err(Error::Config("waveform interval must be positive".into()));
        }
        Ok(Self { t0, span, body: Body::Template { template, offset } })
    }

    pub fn kind(&self) -> WaveformKind {
        match self.body {
            Body::Hermite { .. } => WaveformKind::Hermite,
            Body::Constant(_) => WaveformKind::Constant,
            Body::Template { .. } => WaveformKind::SpikeTemplate,
        }
    }

    pub fn start(&self) -> T {
        self.t0
    }

    pub fn span(&self) -> T {
        self.span
    }

    pub fn end(&self) -> T {
        self.t0 + self.span
    }

    /// Segments of a Hermite waveform; empty for the other kinds.
    pub fn segments(&self) -> &[WaveformSegment<T>] {
        match &self.body {
            Body::Hermite { segments, .. } => segments,
            _ => &[],
        }
    }

    /// Grid spacing of a Hermite waveform.
    pub fn grid_step(&self) -> Option<T> {
        match self.body {
            Body::Hermite { h, .. } => Some(h),
            _ => None,
        }
    }

    /// Template anchoring offset, for template waveforms.
    pub fn template_offset(&self) -> Option<T> {
        match self.body {
            Body::Template { offset, .. } => Some(offset),
            _ => None,
        }
    }

    fn check_inside(&self, t: T) -> Result<T> {
        let slack = self.span * T::lit(1e-9);
        if t < self.t0 - slack || t > self.end() + slack || !t.is_finite() {
            return Err(Error::OutsideInterval {
                t: t.to_f64_lossy(),
                start: self.t0.to_f64_lossy(),
                end: self.end().to_f64_lossy(),
            });
        }
        Ok((t - self.t0).max(T::zero()).min(self.span))
    }

    /// Value at time `t` within the interval.
    pub fn eval(&self, t: T) -> Result<T> {
        let local = self.check_inside(t)?;
        Ok(self.eval_local(local))
    }

    /// Value at `local = t - t0`, which must lie in `[0, span]`.
    #[inline]
    pub fn eval_local(&self, local: T) -> T {
        match &self.body {
            Body::Constant(c) => *c,
            Body::Template { template, offset } => template.value_at(*offset + local),
            Body::Hermite { h, segments } => {
                let (u, theta) = locate(local, *h, segments.len());
                segments[u].eval(theta, *h)
            }
        }
    }

    /// Time derivative at `t`. Template waveforms use the slope of the
    /// sampled trajectory.
    pub fn eval_deriv(&self, t: T) -> Result<T> {
        let local = self.check_inside(t)?;
        Ok(match &self.body {
            Body::Constant(_) => T::zero(),
            Body::Template { template, offset } => {
                let x = *offset + local;
                let dt = template.resolution;
                (template.value_at(x + dt) - template.value_at(x)) / dt
            }
            Body::Hermite { h, segments } => {
                let (u, theta) = locate(local, *h, segments.len());
                segments[u].eval_deriv(theta, *h)
            }
        })
    }

    /// Value at grid point `u` of a grid with spacing `h`. Hermite waveforms
    /// on the same grid return the stored value without interpolation.
    pub fn grid_value(&self, u: usize, h: T) -> T {
        match &self.body {
            Body::Hermite { h: own, segments } if *own == h => {
                if u < segments.len() {
                    segments[u].y_left
                } else {
                    segments[segments.len() - 1].y_right
                }
            }
            _ => self.eval_local((T::from_usize_lossy(u) * h).min(self.span)),
        }
    }

    /// Writes `t, V, dV/dt` rows sampled `per_segment` times per `h`.
    pub fn write_csv<W: Write>(&self, mut out: W, h: T, per_segment: usize) -> std::io::Result<()> {
        writeln!(out, "t,V,dVdt")?;
        let n = whole_steps(self.span, h).unwrap_or(1).max(1) * per_segment.max(1);
        for k in 0..=n {
            let t = self.t0 + self.span * T::from_usize_lossy(k) / T::from_usize_lossy(n);
            let v = self.eval(t).unwrap_or(T::nan());
            let d = self.eval_deriv(t).unwrap_or(T::nan());
            writeln!(out, "{},{},{}", t, v, d)?;
        }
        Ok(())
    }
}

/// Segment index and local coordinate of `local` on a grid of `n` segments.
#[inline]
fn locate<T: Scalar>(local: T, h: T, n: usize) -> (usize, T) {
    let x = local / h;
    let u = x.floor().to_usize().unwrap_or(0).min(n - 1);
    let mut theta = ((local - T::from_usize_lossy(u) * h) / h).max(T::zero()).min(T::one());
    // Snap rounding noise so grid points evaluate to their stored values.
    let snap = T::epsilon() * T::lit(64.0);
    if theta < snap {
        theta = T::zero();
    } else if T::one() - theta < snap {
        theta = T::one();
    }
    (u, theta)
}

/// Constant waveform at `y0` over `[t0, t0 + span]`.
pub fn constant_waveform<T: Scalar>(y0: T, t0: T, span: T) -> Result<Waveform<T>> {
    Waveform::constant(y0, t0, span)
}

/// Waveform used before the first sweep: constant at `v0`, or the spike
/// template when a template is supplied and `v0` is at or above its
/// detection threshold.
pub fn initial_guess<T: Scalar>(
    v0: T,
    dvdt0: T,
    template: Option<&Arc<SpikeShapeTemplate<T>>>,
    t0: T,
    span: T,
) -> Result<Waveform<T>> {
    match template {
        Some(tpl) if v0 >= tpl.v_spike => {
            let offset = tpl.anchor(v0, dvdt0)?;
            Waveform::template(Arc::clone(tpl), offset, t0, span)
        }
        _ => Waveform::constant(v0, t0, span),
    }
}

/// Largest difference of two waveforms over the grid points
/// `t0 + u * h`, `u = 1..=span / h`.
pub fn waveform_max_diff<T: Scalar>(a: &Waveform<T>, b: &Waveform<T>, h: T) -> Result<T> {
    let slack = h * T::lit(1e-9);
    if (a.t0 - b.t0).abs() > slack || (a.span - b.span).abs() > slack {
        return Err(Error::IntervalMismatch);
    }
    let n = whole_steps(a.span, h).ok_or(Error::IntervalMismatch)?;
    let mut worst = T::zero();
    for u in 1..=n {
        let d = (a.grid_value(u, h) - b.grid_value(u, h)).abs();
        if d > worst || d.is_nan() {
            worst = d;
        }
    }
    Ok(worst)
}

/// Weighted sum of waveforms on a common interval, kept in a form that is
/// cheap to evaluate: Hermite parts are added coefficient-wise, constants are
/// folded into one offset, template parts are kept as a list.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformSum<T> {
    t0: T,
    span: T,
    h: T,
    constant: T,
    hermite: Option<Vec<WaveformSegment<T>>>,
    templates: Vec<(T, Waveform<T>)>,
}

impl<T: Scalar> WaveformSum<T> {
    pub fn new(t0: T, span: T, h: T) -> Self {
        Self {
            t0,
            span,
            h,
            constant: T::zero(),
            hermite: None,
            templates: Vec::new(),
        }
    }

    /// Adds `weight * w`. Hermite waveforms must share the sum's grid.
    pub fn add(&mut self, weight: T, w: &Waveform<T>) -> Result<()> {
        let slack = self.h * T::lit(1e-9);
        if (w.t0 - self.t0).abs() > slack || (w.span - self.span).abs() > slack {
            return Err(Error::IntervalMismatch);
        }
        match &w.body {
            Body::Constant(c) => self.constant = self.constant + weight * *c,
            Body::Template { .. } => self.templates.push((weight, w.clone())),
            Body::Hermite { h, segments } => {
                if *h != self.h {
                    return Err(Error::IntervalMismatch);
                }
                match self.hermite.as_mut() {
                    None => self.hermite = Some(segments.iter().map(|s| s.scaled(weight)).collect()),
                    Some(acc) => {
                        for (a, s) in acc.iter_mut().zip(segments) {
                            a.add(&s.scaled(weight));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Value at `local = t - t0`.
    #[inline]
    pub fn eval_local(&self, local: T) -> T {
        let local = local.max(T::zero()).min(self.span);
        let mut v = self.constant;
        if let Some(segs) = &self.hermite {
            let (u, theta) = locate(local, self.h, segs.len());
            v = v + segs[u].eval(theta, self.h);
        }
        for (w, wf) in &self.templates {
            v = v + *w * wf.eval_local(local);
        }
        v
    }

    pub fn start(&self) -> T {
        self.t0
    }
}
