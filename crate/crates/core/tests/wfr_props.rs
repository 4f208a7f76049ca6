use gapwave::model::{hh_rhs_into, NeuronParams};
use gapwave::network::{build_scaled_network, simulate, Network, SimulationConfig};
use gapwave::rk::{integrate_interval, ButcherTableau, StepController};
use gapwave::waveform::Waveform;
use gapwave::wfr::linear::{relax_window, LinearRunConfig, LinearSystem};
use gapwave::wfr::{converged, solve_subsystem, Scheme, SubsystemState, WfrConfig, WfrEngine};
use proptest::prelude::*;

fn stimulated() -> NeuronParams<f64> {
    NeuronParams::default().with_input(200.0)
}

fn twins() -> Network<f64> {
    build_scaled_network(2, 1, 30.0, stimulated()).unwrap()
}

fn wfr(tol: f64, interval: f64, scheme: Scheme) -> WfrConfig<f64> {
    WfrConfig { tol, interval, scheme, ..WfrConfig::default() }
}

/// Advances the engine's initial states by `intervals` iterations of its own
/// interval, returning the states reached.
fn advance(engine: &WfrEngine<'_, f64>, intervals: usize) -> Vec<SubsystemState<f64>> {
    let mut states = engine.initial_states().unwrap();
    let t = engine.config().interval;
    for k in 0..intervals {
        engine.run_interval(&mut states, None, k as f64 * t).unwrap();
    }
    states
}

fn linear_cfg(scheme: Scheme, tol: f64, max_iterations: usize) -> LinearRunConfig<f64> {
    LinearRunConfig {
        scheme,
        h: 0.01,
        span: 1.0,
        tol,
        max_iterations,
        rk_tolerance: 1e-13,
        tableau: ButcherTableau::fehlberg45(),
    }
}

#[test]
fn linear_toy_matches_analytic_solution() {
    // y1' = -y1 + y2, y2' = -y2 + y1: sum is conserved, difference decays as exp(-2t)
    let sys = LinearSystem::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]]).unwrap();
    let y0 = [1.0, -0.5];
    for scheme in [Scheme::Jacobi, Scheme::GaussSeidel, Scheme::Picard] {
        let run = relax_window(&sys, &y0, 0.0, &linear_cfg(scheme, 1e-10, 60)).unwrap();
        assert!(run.converged, "{scheme:?} did not converge");
        let (s, d) = (y0[0] + y0[1], y0[0] - y0[1]);
        for u in 0..=100 {
            let t = u as f64 * 0.01;
            let e = d * (-2.0 * t).exp();
            let y1 = run.final_waveforms()[0].grid_value(u, 0.01);
            let y2 = run.final_waveforms()[1].grid_value(u, 0.01);
            assert!((y1 - (s + e) / 2.0).abs() < 1e-6, "{scheme:?} y1 at {t}");
            assert!((y2 - (s - e) / 2.0).abs() < 1e-6, "{scheme:?} y2 at {t}");
        }
    }
}

#[test]
fn picard_errors_decay_superlinearly() {
    // symmetric A = [[-1, a], [a, -1]] with eigenvalues -1 +- a
    let a = 0.8;
    let sys = LinearSystem::new(vec![vec![-1.0, a], vec![a, -1.0]]).unwrap();
    let y0 = [1.0, 0.0];
    let run = relax_window(&sys, &y0, 0.0, &linear_cfg(Scheme::Picard, 0.0, 8)).unwrap();
    let exact = |t: f64| {
        let (p, q) = ((-1.0 + a) * t, (-1.0 - a) * t);
        ((p.exp() + q.exp()) / 2.0, (p.exp() - q.exp()) / 2.0)
    };
    let errors: Vec<f64> = run.history[1..]
        .iter()
        .map(|ws| {
            (0..=100)
                .map(|u| {
                    let (e1, e2) = exact(u as f64 * 0.01);
                    (ws[0].grid_value(u, 0.01) - e1).abs().max((ws[1].grid_value(u, 0.01) - e2).abs())
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let ratios: Vec<f64> = errors.windows(2).map(|w| w[1] / w[0]).collect();
    for m in 0..6 {
        assert!(ratios[m + 1] < ratios[m], "ratios {ratios:?}");
    }
    // e_m ~ C (K T)^m / m!: regress log e_m + log m! on m
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .take(7)
        .map(|(i, e)| {
            let m = (i + 1) as f64;
            let log_fact: f64 = (1..=i + 1).map(|k| (k as f64).ln()).sum();
            (m, e.ln() + log_fact)
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let icpt = my - slope * mx;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    let mean_log: f64 = errors.iter().take(7).map(|e| e.ln()).sum::<f64>() / n;
    for (i, (m, _)) in pts.iter().enumerate() {
        let log_fact: f64 = (1..=i + 1).map(|k| (k as f64).ln()).sum();
        let predicted = icpt + slope * m - log_fact;
        ss_res += (errors[i].ln() - predicted).powi(2);
        ss_tot += (errors[i].ln() - mean_log).powi(2);
    }
    let r2 = 1.0 - ss_res / ss_tot;
    assert!(r2 >= 0.95, "R^2 = {r2}, errors {errors:?}");
    // the fitted K T must be positive and finite
    assert!(slope.exp().is_finite() && slope.exp() > 0.0);
}

#[test]
fn gauss_seidel_needs_fewer_linear_sweeps_than_jacobi() {
    let sys = LinearSystem::new(vec![vec![-1.0, 0.9], vec![0.7, -1.2]]).unwrap();
    let j = relax_window(&sys, &[1.0, 2.0], 0.0, &linear_cfg(Scheme::Jacobi, 1e-9, 60)).unwrap();
    let g = relax_window(&sys, &[1.0, 2.0], 0.0, &linear_cfg(Scheme::GaussSeidel, 1e-9, 60)).unwrap();
    assert!(j.converged && g.converged);
    assert!(g.iterations <= j.iterations);
}

#[test]
fn subsystem_without_neighbours_is_plain_integration() {
    let p = stimulated();
    let engine_net = {
        let mut n = Network::new();
        n.add_neuron(p.clone());
        n
    };
    let engine = WfrEngine::new(&engine_net, WfrConfig::default(), 0.1, 1).unwrap();
    let start = engine.initial_states().unwrap()[0];
    let tab = ButcherTableau::fehlberg45();
    let (sol, _) = solve_subsystem(&tab, 1e-6, &p, &start, &[], None, 0.0, 1.0, 0.1).unwrap();
    let mut ctl = StepController::new(1e-6, 0.1);
    let plain = integrate_interval(&tab, &mut ctl, |_, y, d| hh_rhs_into(&p, y, 0.0, 0.0, d), &start.y, 0.0, 1.0, 0.1)
        .unwrap();
    assert_eq!(sol.values, plain.values);
}

#[test]
fn twin_fed_its_own_trajectory_matches_uncoupled_run() {
    let p = stimulated();
    let tab = ButcherTableau::fehlberg45();
    let mut net = Network::new();
    net.add_neuron(p.clone());
    let start = WfrEngine::new(&net, WfrConfig::default(), 0.1, 1).unwrap().initial_states().unwrap()[0];
    let (alone, own) = solve_subsystem(&tab, 1e-10, &p, &start, &[], None, 0.0, 1.0, 0.1).unwrap();
    let (twin, _) = solve_subsystem(&tab, 1e-10, &p, &start, &[(30.0, &own)], None, 0.0, 1.0, 0.1).unwrap();
    for u in 0..=10 {
        // only the interpolation error of the subthreshold waveform remains
        assert!((alone.value(u)[0] - twin.value(u)[0]).abs() < 1e-6);
    }
}

#[test]
fn convergence_check_semantics() {
    let zeros = [0.0; 3];
    let a = Waveform::from_samples(0.0, 0.1, &[0.0, 1.0, 2.0], &zeros).unwrap();
    let b = Waveform::from_samples(0.0, 0.1, &[0.0, 1.0, 2.5], &zeros).unwrap();
    assert!(converged(&[a.clone(), a.clone()], &[a.clone(), a.clone()], 1e-12, 0.1).unwrap());
    assert!(!converged(&[a.clone(), a.clone()], &[a.clone(), b.clone()], 0.4, 0.1).unwrap());
    assert!(converged(&[a.clone(), a.clone()], &[a.clone(), b], 0.5, 0.1).unwrap());
}

#[test]
fn uncoupled_network_converges_in_one_sweep() {
    let mut net = Network::new();
    for i in 0..4 {
        net.add_neuron(NeuronParams::default().with_input(150.0 + 20.0 * i as f64));
    }
    for tol in [1e-2, 1e-8] {
        let cfg = SimulationConfig::new(0.1, 20.0, wfr(tol, 1.0, Scheme::Jacobi));
        let (_, stats) = simulate(&net, &cfg).unwrap();
        assert!(stats.iterations.iter().all(|&m| m == 1));
        assert_eq!(stats.converged_fraction(), 1.0);
    }
}

#[test]
fn jacobi_preserves_twin_symmetry_bitwise() {
    let net = twins();
    let engine = WfrEngine::new(&net, wfr(1e-4, 1.0, Scheme::Jacobi), 0.1, 2).unwrap();
    let mut states = engine.initial_states().unwrap();
    for k in 0..40 {
        let out = engine.run_interval(&mut states, None, k as f64).unwrap();
        assert_eq!(out.waveforms[0], out.waveforms[1]);
        assert_eq!(out.solutions[0].values, out.solutions[1].values);
        assert!(out.stats.iterations >= 1 && out.stats.iterations <= 15);
        if out.stats.converged {
            assert!(out.stats.final_diff <= 1e-4);
        }
    }
    assert_eq!(states[0], states[1]);
}

#[test]
fn gauss_seidel_needs_no_more_iterations_than_jacobi_on_twins() {
    let net = twins();
    let run = |scheme| {
        let cfg = SimulationConfig::new(0.1, 100.0, wfr(1e-4, 1.0, scheme));
        simulate(&net, &cfg).unwrap().1.mean_iterations()
    };
    let (j, g) = (run(Scheme::Jacobi), run(Scheme::GaussSeidel));
    assert!(g <= j, "gauss-seidel {g} vs jacobi {j}");
}

#[test]
fn stats_account_one_round_per_sweep() {
    let cfg = SimulationConfig::new(0.1, 30.0, wfr(1e-4, 1.0, Scheme::Jacobi));
    let (_, stats) = simulate(&twins(), &cfg).unwrap();
    assert_eq!(stats.intervals(), 30);
    assert_eq!(stats.communication_rounds, stats.iterations.iter().sum::<usize>() as u64);
    assert!(stats.iterations.iter().all(|&m| (1..=15).contains(&m)));
}

#[test]
fn non_iterative_twins_at_rest_stay_at_rest() {
    let net = build_scaled_network(2, 1, 30.0, NeuronParams::default()).unwrap();
    let cfg = SimulationConfig::new(0.1, 20.0, wfr(1e-4, 1.0, Scheme::NonIterative));
    let (rec, _) = simulate(&net, &cfg).unwrap();
    let rest = rec.v[0][0];
    assert!(rec.v.iter().flatten().all(|v| (v - rest).abs() < 1e-9));
}

#[test]
fn non_iterative_twins_drift_away_from_reference_spike_times() {
    let mut single = Network::new();
    single.add_neuron(stimulated());
    let reference = simulate(&single, &SimulationConfig::new(0.1, 1000.0, WfrConfig { rk_tolerance: 1e-10, ..WfrConfig::default() }))
        .unwrap()
        .0;
    let cfg = SimulationConfig::new(0.1, 1000.0, wfr(1e-4, 1.0, Scheme::NonIterative));
    let (rec, _) = simulate(&twins(), &cfg).unwrap();
    let (r, s) = (reference.spike_times(0).unwrap(), rec.spike_times(0).unwrap());
    let k = r.len().min(s.len()) - 1;
    assert!((r[k] - s[k]).abs() > 1.0, "shift {} ms", (r[k] - s[k]).abs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn jacobi_and_gauss_seidel_share_the_limit(intervals in 0usize..40) {
        let net = twins();
        let tol = 1e-7;
        let jac = WfrEngine::new(&net, wfr(tol, 1.0, Scheme::Jacobi), 0.1, 1).unwrap();
        let gs = WfrEngine::new(&net, wfr(tol, 1.0, Scheme::GaussSeidel), 0.1, 1).unwrap();
        let start = advance(&jac, intervals);
        let t0 = intervals as f64;
        let a = jac.run_interval(&mut start.clone(), None, t0).unwrap();
        let b = gs.run_interval(&mut start.clone(), None, t0).unwrap();
        for (wa, wb) in a.waveforms.iter().zip(&b.waveforms) {
            for u in 0..=10 {
                prop_assert!((wa.grid_value(u, 0.1) - wb.grid_value(u, 0.1)).abs() <= 10.0 * tol);
            }
        }
    }

    #[test]
    fn interval_length_does_not_change_the_limit(intervals in 0usize..40) {
        let net = twins();
        let tol = 1e-7;
        let long = WfrEngine::new(&net, wfr(tol, 1.0, Scheme::Jacobi), 0.1, 1).unwrap();
        let short = WfrEngine::new(&net, wfr(tol, 0.1, Scheme::Jacobi), 0.1, 1).unwrap();
        let start = advance(&long, intervals);
        let t0 = intervals as f64;
        let one = long.run_interval(&mut start.clone(), None, t0).unwrap();
        let mut states = start.clone();
        for u in 0..10 {
            let out = short.run_interval(&mut states, None, t0 + u as f64 * 0.1).unwrap();
            let v = out.waveforms[0].grid_value(1, 0.1);
            prop_assert!((v - one.waveforms[0].grid_value(u + 1, 0.1)).abs() <= 10.0 * tol,
                "grid point {}: {} vs {}", u + 1, v, one.waveforms[0].grid_value(u + 1, 0.1));
        }
    }
}
