//! Embedded explicit Runge-Kutta integration with adaptive step-size control.
//!
//! Steps are truncated so that every point of the communication grid
//! `t0 + u * h` is the endpoint of an accepted step. The grid values and the
//! right-hand side at those points are what the waveform module interpolates.

use crate::error::{Error, Result};
use crate::scalar::{whole_steps, Scalar};

/// Coefficients of an embedded explicit Runge-Kutta pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau<T> {
    pub name: &'static str,
    /// Strictly lower triangular stage matrix, row `q` holds `a[q][0..q]`.
    pub a: Vec<Vec<T>>,
    /// Weights of the propagated (higher order) solution.
    pub b: Vec<T>,
    /// Weights of the embedded solution used for the error estimate.
    pub b_hat: Vec<T>,
    pub c: Vec<T>,
    /// Order of the embedded (lower order) solution. Sets the controller exponent.
    pub embedded_order: u32,
}

impl<T: Scalar> ButcherTableau<T> {
    /// Runge-Kutta-Fehlberg 4(5), propagating the fifth order solution.
    pub fn fehlberg45() -> Self {
        let r = |n: f64, d: f64| T::lit(n / d);
        let z = T::zero();
        Self {
            name: "fehlberg45",
            a: vec![
                vec![],
                vec![r(1.0, 4.0)],
                vec![r(3.0, 32.0), r(9.0, 32.0)],
                vec![r(1932.0, 2197.0), r(-7200.0, 2197.0), r(7296.0, 2197.0)],
                vec![r(439.0, 216.0), r(-8.0, 1.0), r(3680.0, 513.0), r(-845.0, 4104.0)],
                vec![
                    r(-8.0, 27.0),
                    r(2.0, 1.0),
                    r(-3544.0, 2565.0),
                    r(1859.0, 4104.0),
                    r(-11.0, 40.0),
                ],
            ],
            b: vec![
                r(16.0, 135.0),
                z,
                r(6656.0, 12825.0),
                r(28561.0, 56430.0),
                r(-9.0, 50.0),
                r(2.0, 55.0),
            ],
            b_hat: vec![
                r(25.0, 216.0),
                z,
                r(1408.0, 2565.0),
                r(2197.0, 4104.0),
                r(-1.0, 5.0),
                z,
            ],
            c: vec![z, r(1.0, 4.0), r(3.0, 8.0), r(12.0, 13.0), T::one(), r(1.0, 2.0)],
            embedded_order: 4,
        }
    }

    /// Dormand-Prince 5(4). Provided for cross-checks against Fehlberg.
    pub fn dormand_prince54() -> Self {
        let r = |n: f64, d: f64| T::lit(n / d);
        let z = T::zero();
        Self {
            name: "dormand_prince54",
            a: vec![
                vec![],
                vec![r(1.0, 5.0)],
                vec![r(3.0, 40.0), r(9.0, 40.0)],
                vec![r(44.0, 45.0), r(-56.0, 15.0), r(32.0, 9.0)],
                vec![
                    r(19372.0, 6561.0),
                    r(-25360.0, 2187.0),
                    r(64448.0, 6561.0),
                    r(-212.0, 729.0),
                ],
                vec![
                    r(9017.0, 3168.0),
                    r(-355.0, 33.0),
                    r(46732.0, 5247.0),
                    r(49.0, 176.0),
                    r(-5103.0, 18656.0),
                ],
                vec![
                    r(35.0, 384.0),
                    z,
                    r(500.0, 1113.0),
                    r(125.0, 192.0),
                    r(-2187.0, 6784.0),
                    r(11.0, 84.0),
                ],
            ],
            b: vec![
                r(35.0, 384.0),
                z,
                r(500.0, 1113.0),
                r(125.0, 192.0),
                r(-2187.0, 6784.0),
                r(11.0, 84.0),
                z,
            ],
            b_hat: vec![
                r(5179.0, 57600.0),
                z,
                r(7571.0, 16695.0),
                r(393.0, 640.0),
                r(-92097.0, 339200.0),
                r(187.0, 2100.0),
                r(1.0, 40.0),
            ],
            c: vec![
                z,
                r(1.0, 5.0),
                r(3.0, 10.0),
                r(4.0, 5.0),
                r(8.0, 9.0),
                T::one(),
                T::one(),
            ],
            embedded_order: 4,
        }
    }

    /// Looks a tableau up by name (`fehlberg45`, `dormand_prince54`).
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "fehlberg45" | "rkf45" => Some(Self::fehlberg45()),
            "dormand_prince54" | "dopri5" => Some(Self::dormand_prince54()),
            _ => None,
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }

    /// Checks the structural and consistency conditions of the pair.
    pub fn validate(&self) -> Result<()> {
        let s = self.stages();
        let bad = |msg: &str| Err(Error::Config(format!("tableau {}: {msg}", self.name)));
        if s == 0 || self.b_hat.len() != s || self.c.len() != s || self.a.len() != s {
            return bad("stage count mismatch");
        }
        let eps = T::epsilon() * T::lit(16.0);
        for (q, row) in self.a.iter().enumerate() {
            if row.len() != q {
                return bad("stage matrix is not strictly lower triangular");
            }
            let sum: T = row.iter().copied().sum();
            if (sum - self.c[q]).abs() > eps {
                return bad("nodes do not match row sums");
            }
        }
        let sb: T = self.b.iter().copied().sum();
        let sbh: T = self.b_hat.iter().copied().sum();
        if (sb - T::one()).abs() > eps || (sbh - T::one()).abs() > eps {
            return bad("weights do not sum to one");
        }
        Ok(())
    }
}

/// Adaptive step-size state.
///
/// The error estimate handed to [`StepController::adapt_step`] is the
/// weighted max-norm produced by [`rk_step`]; a step is accepted when it does
/// not exceed `tolerance`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepController<T> {
    pub tolerance: T,
    pub safety: T,
    pub min_step: T,
    pub max_step: T,
    /// Largest factor by which the step may grow after one accepted step.
    pub growth_cap: T,
    /// Smallest factor by which the step may shrink after a rejection.
    pub shrink_floor: T,
    /// Order of the embedded solution; the update uses exponent `1 / (order + 1)`.
    pub order: u32,
    /// Step to attempt next.
    pub dt: T,
}

impl<T: Scalar> StepController<T> {
    /// Controller whose maximum (and initial) step is the grid spacing `h`.
    pub fn new(tolerance: T, h: T) -> Self {
        Self {
            tolerance,
            safety: T::lit(0.9),
            min_step: (h * T::lit(1e-9)).min(T::lit(1e-10)),
            max_step: h,
            growth_cap: T::lit(5.0),
            shrink_floor: T::lit(0.2),
            order: 4,
            dt: h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > T::zero()
            && self.min_step > T::zero()
            && self.min_step <= self.max_step
            && self.dt >= self.min_step
            && self.dt <= self.max_step
            && self.safety > T::zero()
            && self.growth_cap >= T::one()
            && self.shrink_floor > T::zero()
            && self.shrink_floor <= T::one();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step controller {self:?}")))
        }
    }

    /// Decides whether a step of size `dt` with the given error is accepted
    /// and proposes the next step size.
    pub fn adapt_step(&self, error_estimate: T, dt: T) -> Result<(bool, T)> {
        let accept = error_estimate <= self.tolerance;
        let factor = if error_estimate == T::zero() {
            self.growth_cap
        } else {
            let exponent = T::one() / T::from_usize_lossy(self.order as usize + 1);
            (self.safety * (self.tolerance / error_estimate).powf(exponent))
                .max(self.shrink_floor)
                .min(self.growth_cap)
        };
        let proposed = dt * factor;
        if !accept && (proposed < self.min_step || !proposed.is_finite()) {
            return Err(Error::StepSizeUnderflow {
                t: f64::NAN,
                dt: proposed.to_f64_lossy(),
            });
        }
        Ok((accept, proposed.max(self.min_step).min(self.max_step)))
    }
}

/// Scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub struct RkWorkspace<T> {
    k: Vec<Vec<T>>,
    stage_y: Vec<T>,
    /// Propagated solution of the last step.
    pub y_high: Vec<T>,
}

impl<T: Scalar> RkWorkspace<T> {
    pub fn new(stages: usize, dim: usize) -> Self {
        Self {
            k: vec![vec![T::zero(); dim]; stages],
            stage_y: vec![T::zero(); dim],
            y_high: vec![T::zero(); dim],
        }
    }

    /// Performs one step from `(t, y)`. `f0` is the right-hand side at `(t, y)`.
    /// Returns the weighted max-norm error estimate; the solution is left in
    /// `self.y_high`.
    pub fn step<F>(
        &mut self,
        tableau: &ButcherTableau<T>,
        rhs: &mut F,
        t: T,
        y: &[T],
        f0: &[T],
        dt: T,
    ) -> Result<T>
    where
        F: FnMut(T, &[T], &mut [T]),
    {
        let dim = y.len();
        self.k[0].copy_from_slice(f0);
        for q in 1..tableau.stages() {
            for i in 0..dim {
                let mut acc = T::zero();
                for (l, a) in tableau.a[q].iter().enumerate() {
                    acc = acc + *a * self.k[l][i];
                }
                self.stage_y[i] = y[i] + dt * acc;
            }
            let (_, rest) = self.k.split_at_mut(q);
            rhs(t + tableau.c[q] * dt, &self.stage_y, &mut rest[0]);
            if rest[0].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: t.to_f64_lossy() });
            }
        }
        let mut err = T::zero();
        for i in 0..dim {
            let mut high = T::zero();
            let mut diff = T::zero();
            for l in 0..tableau.stages() {
                high = high + tableau.b[l] * self.k[l][i];
                diff = diff + (tableau.b[l] - tableau.b_hat[l]) * self.k[l][i];
            }
            self.y_high[i] = y[i] + dt * high;
            let scale = y[i].abs().max(T::one());
            err = err.max((dt * diff).abs() / scale);
        }
        if self.y_high.iter().any(|v| !v.is_finite()) || !err.is_finite() {
            return Err(Error::NonFinite { t: t.to_f64_lossy() });
        }
        Ok(err)
    }
}

/// Single embedded Runge-Kutta step. Returns the propagated solution and the
/// weighted max-norm error estimate `max_i |e_i| / max(|y_i|, 1)`.
pub fn rk_step<T, F>(
    tableau: &ButcherTableau<T>,
    mut rhs: F,
    t: T,
    y: &[T],
    dt: T,
) -> Result<(Vec<T>, T)>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]),
{
    if !(dt > T::zero()) {
        return Err(Error::Config("step size must be positive".into()));
    }
    let mut ws = RkWorkspace::new(tableau.stages(), y.len());
    let mut f0 = vec![T::zero(); y.len()];
    rhs(t, y, &mut f0);
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { t: t.to_f64_lossy() });
    }
    let err = ws.step(tableau, &mut rhs, t, y, &f0, dt)?;
    Ok((ws.y_high, err))
}

/// An ODE right-hand side together with the hooks the grid integrator calls.
pub trait IntervalProblem<T> {
    fn dim(&self) -> usize;

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]);

    /// Called at grid point `u` before integrating the segment that starts
    /// there. May apply instantaneous jumps to `y`.
    fn at_grid(&mut self, _u: usize, _y: &mut [T]) {}

    /// Called on every accepted state, e.g. to clamp bounded components.
    fn project(&self, _y: &mut [T]) {}
}

/// Adapts a plain closure `(t, y, dy)` into an [`IntervalProblem`].
pub struct FnProblem<F> {
    pub dim: usize,
    pub f: F,
}

impl<T, F: FnMut(T, &[T], &mut [T])> IntervalProblem<T> for FnProblem<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rhs(&mut self, t: T, y: &[T], dy: &mut [T]) {
        (self.f)(t, y, dy)
    }
}

/// Solution values and right-hand sides at the grid points of one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution<T> {
    pub dim: usize,
    pub t0: T,
    pub h: T,
    /// Number of grid segments, `T / h`.
    pub segments: usize,
    /// `(segments + 1) * dim` values at `t0 + u * h`.
    pub values: Vec<T>,
    /// Right-hand side at the left end of every segment, after any jump.
    pub derivs_start: Vec<T>,
    /// Right-hand side at the right end of every segment, as reached by the
    /// integration.
    pub derivs_end: Vec<T>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Accepted step endpoints, only filled when requested.
    pub step_times: Vec<T>,
}

impl<T: Scalar> GridSolution<T> {
    pub fn value(&self, u: usize) -> &[T] {
        &self.values[u * self.dim..(u + 1) * self.dim]
    }

    /// Right-hand side at grid point `u`; the post-jump value for `u < segments`.
    pub fn deriv(&self, u: usize) -> &[T] {
        if u < self.segments {
            &self.derivs_start[u * self.dim..(u + 1) * self.dim]
        } else {
            self.deriv_end(u - 1)
        }
    }

    pub fn deriv_start(&self, u: usize) -> &[T] {
        &self.derivs_start[u * self.dim..(u + 1) * self.dim]
    }

    pub fn deriv_end(&self, u: usize) -> &[T] {
        &self.derivs_end[u * self.dim..(u + 1) * self.dim]
    }

    pub fn final_state(&self) -> &[T] {
        self.value(self.segments)
    }

    pub fn grid_time(&self, u: usize) -> T {
        self.t0 + T::from_usize_lossy(u) * self.h
    }

    /// Component `c` at every grid point.
    pub fn component(&self, c: usize) -> Vec<T> {
        (0..=self.segments).map(|u| self.value(u)[c]).collect()
    }
}

/// Integrates over `[t0, t0 + span]`, landing exactly on every point of the
/// grid with spacing `h`.
pub fn integrate_interval<T, F>(
    tableau: &ButcherTableau<T>,
    controller: &mut StepController<T>,
    rhs: F,
    y0: &[T],
    t0: T,
    span: T,
    h: T,
) -> Result<GridSolution<T>>
where
    T: Scalar,
    F: FnMut(T, &[T], &mut [T]),
{
    let mut problem = FnProblem { dim: y0.len(), f: rhs };
    GridIntegrator::new(tableau, y0.len()).run(&mut problem, controller, y0, t0, span, h)
}

/// Reusable integrator holding the stage buffers for one problem dimension.
#[derive(Debug, Clone)]
pub struct GridIntegrator<'a, T> {
    tableau: &'a ButcherTableau<T>,
    ws: RkWorkspace<T>,
    pub record_steps: bool,
}

impl<'a, T: Scalar> GridIntegrator<'a, T> {
    pub fn new(tableau: &'a ButcherTableau<T>, dim: usize) -> Self {
        Self {
            tableau,
            ws: RkWorkspace::new(tableau.stages(), dim),
            record_steps: false,
        }
    }

    pub fn tableau(&self) -> &ButcherTableau<T> {
        self.tableau
    }

    pub fn run<P: IntervalProblem<T>>(
        &mut self,
        problem: &mut P,
        controller: &mut StepController<T>,
        y0: &[T],
        t0: T,
        span: T,
        h: T,
    ) -> Result<GridSolution<T>> {
        let dim = problem.dim();
        if y0.len() != dim {
            return Err(Error::Config("initial state has wrong dimension".into()));
        }
        let segments = whole_steps(span, h)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config("interval must be a positive multiple of h".into()))?;
        if controller.max_step > h {
            controller.max_step = h;
        }
        controller.dt = controller.dt.min(controller.max_step).max(controller.min_step);

        let mut sol = GridSolution {
            dim,
            t0,
            h,
            segments,
            values: Vec::with_capacity((segments + 1) * dim),
            derivs_start: Vec::with_capacity(segments * dim),
            derivs_end: Vec::with_capacity(segments * dim),
            accepted_steps: 0,
            rejected_steps: 0,
            step_times: Vec::new(),
        };
        let mut y = y0.to_vec();
        let mut f = vec![T::zero(); dim];
        sol.values.extend_from_slice(&y);
        if self.record_steps {
            sol.step_times.push(t0);
        }
        let land_slack = h * T::lit(1e-10);

        for u in 0..segments {
            let t_start = t0 + T::from_usize_lossy(u) * h;
            let t_end = t0 + T::from_usize_lossy(u + 1) * h;
            problem.at_grid(u, &mut y);
            problem.rhs(t_start, &y, &mut f);
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { t: t_start.to_f64_lossy() });
            }
            sol.derivs_start.extend_from_slice(&f);

            // Offsets within the segment keep the step sequence independent
            // of where the interval starts.
            let mut tau = T::zero();
            while tau < h {
                let t = t_start + tau;
                let proposed = controller.dt;
                let remaining = h - tau;
                let landing = proposed >= remaining - land_slack;
                let dt = if landing { remaining } else { proposed };
                let trial = {
                    let mut rhs = |tt: T, yy: &[T], dy: &mut [T]| problem.rhs(tt, yy, dy);
                    self.ws.step(self.tableau, &mut rhs, t, &y, &f, dt)
                };
                let err = match trial {
                    Ok(err) => err,
                    // An overflowing trial step is a rejection, not a failure,
                    // as long as the step can still shrink.
                    Err(Error::NonFinite { .. }) if dt * controller.shrink_floor >= controller.min_step => {
                        sol.rejected_steps += 1;
                        controller.dt = dt * controller.shrink_floor;
                        continue;
                    }
                    Err(e) => return Err(at_time(e, t)),
                };
                let (accept, next) = controller
                    .adapt_step(err, dt)
                    .map_err(|e| at_time(e, t))?;
                if accept {
                    tau = if landing { h } else { tau + dt };
                    let t = if landing { t_end } else { t_start + tau };
                    y.copy_from_slice(&self.ws.y_high);
                    problem.project(&mut y);
                    problem.rhs(t, &y, &mut f);
                    if f.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { t: t.to_f64_lossy() });
                    }
                    sol.accepted_steps += 1;
                    if self.record_steps {
                        sol.step_times.push(t);
                    }
                    controller.dt = if landing { next.max(proposed) } else { next };
                } else {
                    sol.rejected_steps += 1;
                    controller.dt = next;
                }
            }
            sol.values.extend_from_slice(&y);
            sol.derivs_end.extend_from_slice(&f);
        }
        Ok(sol)
    }
}

fn at_time<T: Scalar>(e: Error, t: T) -> Error {
    match e {
        Error::StepSizeUnderflow { dt, .. } => Error::StepSizeUnderflow {
            t: t.to_f64_lossy(),
            dt,
        },
        other => other,
    }
}
