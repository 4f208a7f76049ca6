//! Waveform relaxation on linear test systems `y' = A y` where every
//! component is its own scalar subsystem.
//!
//! Unlike the neuron engine, every state component is communicated, so all
//! three splittings are available, including Picard iteration, whose
//! right-hand side is evaluated entirely on the previous iterate.

use crate::error::{Error, Result};
use crate::rk::{integrate_interval, ButcherTableau, GridSolution, StepController};
use crate::scalar::Scalar;
use crate::waveform::{waveform_max_diff, Waveform};

use super::Scheme;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem<T> {
    /// Row-major coupling matrix.
    pub a: Vec<Vec<T>>,
}

impl<T: Scalar> LinearSystem<T> {
    pub fn new(a: Vec<Vec<T>>) -> Result<Self> {
        let n = a.len();
        if n == 0 || a.iter().any(|r| r.len() != n) {
            return Err(Error::Config("coupling matrix must be square and non-empty".into()));
        }
        Ok(Self { a })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

#[derive(Debug, Clone)]
pub struct LinearRunConfig<T> {
    pub scheme: Scheme,
    pub h: T,
    pub span: T,
    /// Stop once no grid value moves by more than this. Zero runs all
    /// `max_iterations` sweeps.
    pub tol: T,
    pub max_iterations: usize,
    pub rk_tolerance: T,
    pub tableau: ButcherTableau<T>,
}

#[derive(Debug, Clone)]
pub struct LinearRun<T> {
    /// Waveforms of every iteration, starting with the constant initial guess.
    pub history: Vec<Vec<Waveform<T>>>,
    pub solutions: Vec<GridSolution<T>>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> LinearRun<T> {
    pub fn final_waveforms(&self) -> &[Waveform<T>] {
        self.history.last().expect("history holds the initial guess")
    }
}

/// Relaxes `y' = A y`, `y(t0) = y0` over one window.
pub fn relax_window<T: Scalar>(
    system: &LinearSystem<T>,
    y0: &[T],
    t0: T,
    cfg: &LinearRunConfig<T>,
) -> Result<LinearRun<T>> {
    let n = system.dim();
    if y0.len() != n {
        return Err(Error::Config("initial state has wrong dimension".into()));
    }
    if cfg.scheme == Scheme::NonIterative || cfg.max_iterations == 0 {
        return Err(Error::Config("linear relaxation needs an iterative scheme".into()));
    }
    let initial = y0
        .iter()
        .map(|&v| Waveform::constant(v, t0, cfg.span))
        .collect::<Result<Vec<_>>>()?;
    let mut history = vec![initial];
    let mut solutions = Vec::new();
    let mut converged = false;
    while history.len() <= cfg.max_iterations {
        let prev = history.last().expect("non-empty");
        let mut current: Vec<Waveform<T>> = prev.clone();
        let mut sols = Vec::with_capacity(n);
        for i in 0..n {
            let sources: &[Waveform<T>] = if cfg.scheme == Scheme::GaussSeidel { &current } else { prev };
            let row = &system.a[i];
            let picard = cfg.scheme == Scheme::Picard;
            let rhs = |t: T, y: &[T], dy: &mut [T]| {
                let local = t - t0;
                let mut acc = T::zero();
                for (j, a) in row.iter().enumerate() {
                    if j == i && !picard {
                        acc = acc + *a * y[0];
                    } else {
                        acc = acc + *a * sources[j].eval_local(local);
                    }
                }
                dy[0] = acc;
            };
            let mut ctl = StepController::new(cfg.rk_tolerance, cfg.h);
            let sol = integrate_interval(&cfg.tableau, &mut ctl, rhs, &[y0[i]], t0, cfg.span, cfg.h)?;
            let w = Waveform::from_grid(&sol, 0)?;
            current[i] = w;
            sols.push(sol);
        }
        let mut change = T::zero();
        for (a, b) in current.iter().zip(prev) {
            change = change.max(waveform_max_diff(a, b, cfg.h)?);
        }
        history.push(current);
        solutions = sols;
        if cfg.tol > T::zero() && change <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(LinearRun {
        iterations: history.len() - 1,
        history,
        solutions,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scheme: Scheme) -> LinearRunConfig<f64> {
        LinearRunConfig {
            scheme,
            h: 0.05,
            span: 1.0,
            tol: 1e-10,
            max_iterations: 40,
            rk_tolerance: 1e-12,
            tableau: ButcherTableau::fehlberg45(),
        }
    }

    #[test]
    fn decoupled_system_converges_in_two_sweeps() {
        let sys = LinearSystem::new(vec![vec![-1.0, 0.0], vec![0.0, -2.0]]).unwrap();
        let run = relax_window(&sys, &[1.0, 1.0], 0.0, &cfg(Scheme::Jacobi)).unwrap();
        assert!(run.converged);
        assert_eq!(run.iterations, 2);
        let v = run.solutions[1].final_state()[0];
        assert!((v - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rejects_non_square() {
        assert!(LinearSystem::<f64>::new(vec![vec![1.0, 2.0]]).is_err());
        let sys = LinearSystem::new(vec![vec![-1.0]]).unwrap();
        let mut c = cfg(Scheme::NonIterative);
        assert!(relax_window(&sys, &[1.0], 0.0, &c).is_err());
        c.scheme = Scheme::Jacobi;
        assert!(relax_window(&sys, &[1.0, 2.0], 0.0, &c).is_err());
    }
}
