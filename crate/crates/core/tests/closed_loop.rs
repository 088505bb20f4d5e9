use std::sync::OnceLock;

use nalgebra::{Matrix4, Vector4};
use proptest::prelude::*;

use stopgo_core::control::{observer_step, FeedbackGains, Measurement, Observer, ObserverState};
use stopgo_core::kernels::{dense_coupling_example, solve_controller_kernels, solve_observer_kernels};
use stopgo_core::riemann::{DesignCoefficients, KernelCoefficients};
use stopgo_core::sim::{cfl_timestep, initial_profiles, run_from, run_scenario, Outlet, SimGrid, Stepper};
use stopgo_core::{KernelSettings, Pipeline, Scenario, SimConfig, TrafficField, TrafficParams};

fn reference() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        Pipeline::build(
            &TrafficParams::congested_reference(),
            TrafficParams::congested_reference_densities(),
            &KernelSettings::with_n(61),
        )
        .unwrap()
    })
}

/// Reference physics with every coupling of the design model switched on.
fn dense() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let base = reference();
        let coeffs = dense_coupling_example(&base.design.coeffs);
        let s = KernelSettings::with_n(61);
        Pipeline {
            design: base.design.with_coefficients(coeffs.clone()),
            controller: solve_controller_kernels(&coeffs, &s).unwrap(),
            observer: solve_observer_kernels(&coeffs, &s).unwrap(),
            ..base.clone()
        }
    })
}

fn config(scenario: Scenario) -> SimConfig {
    SimConfig {
        scenario,
        n: 120,
        snapshots: 12,
        ..SimConfig::default()
    }
}

fn zeros(n: usize) -> [Vec<f64>; 4] {
    let z = vec![0.0; n];
    [z.clone(), z.clone(), z.clone(), z]
}

#[test]
fn equilibrium_is_a_fixed_point_for_ten_thousand_steps() {
    let p = reference();
    let grid = SimGrid::new(200, &p.design.transform).unwrap();
    let dt = cfl_timestep(&p.design.lambdas, grid.dx, 0.9).unwrap();
    let stepper = Stepper::new(&p.design.coeffs, &grid, dt).unwrap();
    let gains = FeedbackGains::new(&p.design, &p.controller, &grid);
    let mut w = zeros(grid.len());
    let mut s = w.clone();
    let mut drift = 0.0_f64;
    for k in 0..10_000 {
        let outlet = if k % 2 == 0 { Outlet::Input(0.0) } else { Outlet::Feedback(&gains) };
        stepper.step(&mut w, &mut s, outlet);
        drift = drift.max(w.iter().flatten().fold(0.0, |m, v| m.max(v.abs())));
    }
    assert!(drift < 1e-12, "drift {drift}");
}

#[test]
fn flow_map_is_linear() {
    let p = reference();
    for scenario in [Scenario::OpenLoop, Scenario::FullStateFeedback, Scenario::OutputFeedback] {
        let cfg = config(scenario);
        let grid = SimGrid::new(cfg.n, &p.design.transform).unwrap();
        let init = initial_profiles(&grid, &p.equilibrium, &cfg).unwrap();
        let base = run_from(p, &cfg, &grid, &init).unwrap();
        for a in [-3.0, 0.5, 7.0] {
            let run = run_from(p, &cfg, &grid, &init.scaled(a)).unwrap();
            let cscale = base.control.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
            for (u, v) in run.control.iter().zip(&base.control) {
                assert!((u - a * v).abs() <= 1e-10 * a.abs() * cscale, "{scenario:?} control");
            }
            for (s, t) in run.sup_norm.iter().zip(&base.sup_norm) {
                assert!((s - a.abs() * t).abs() <= 1e-10 * a.abs() * base.initial_sup());
            }
            for (f, g) in run.snapshots.iter().zip(&base.snapshots) {
                for c in 0..4 {
                    let scale = g.w[c].iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
                    for (x, y) in f.w[c].iter().zip(&g.w[c]) {
                        assert!((x - a * y).abs() <= 1e-10 * a.abs() * scale.max(1e-3));
                    }
                }
            }
        }
    }
}

#[test]
fn snapshots_keep_both_representations_consistent() {
    let p = reference();
    let cfg = config(Scenario::OutputFeedback);
    let grid = SimGrid::new(cfg.n, &p.design.transform).unwrap();
    let traj = run_scenario(p, &cfg).unwrap();
    assert_eq!(traj.snapshots.len(), cfg.snapshots);
    for f in &traj.snapshots {
        for k in 0..grid.len() {
            let phys = f.physical_at(k);
            let w = f.design_at(k);
            let scale = phys.abs().max().max(1e-12);
            assert!((grid.t[k] * w - phys).abs().max() <= 1e-9 * scale);
            let back = p.design.transform.to_design(grid.x[k], &phys).unwrap();
            assert!((back - w).abs().max() <= 1e-9 * w.abs().max().max(1e-12));
        }
    }
}

proptest! {
    #[test]
    fn transform_pair_is_inverse(x in 0.0..1.0_f64, s in proptest::array::uniform4(-1.0..1.0_f64)) {
        let t = &reference().design.transform;
        let x = x * t.length;
        let id = t.t(x) * t.t_inv(x) - Matrix4::identity();
        prop_assert!(id.abs().max() < 1e-10);
        let s = Vector4::from(s);
        let back = t.to_physical(x, &t.to_design(x, &s).unwrap()).unwrap();
        prop_assert!((back - s).abs().max() < 1e-10);
    }

    #[test]
    fn control_law_is_bounded_by_the_state(seed in proptest::collection::vec(-1.0..1.0_f64, 8)) {
        let p = reference();
        let grid = SimGrid::new(60, &p.design.transform).unwrap();
        let gains = FeedbackGains::new(&p.design, &p.controller, &grid);
        let mut w = zeros(grid.len());
        for c in 0..4 {
            for (k, x) in grid.x.iter().enumerate() {
                w[c][k] = seed[2 * c] * (x / 97.0).sin() + seed[2 * c + 1];
            }
        }
        let bound: f64 = (0..grid.len())
            .map(|k| gains.design_plus[k].abs().sum() + gains.design_minus[k].abs())
            .sum();
        let sup = w.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(gains.design_control(&w).abs() <= bound * sup * (1.0 + 1e-12));
    }
}

#[test]
fn closed_loop_input_is_gauge_invariant() {
    let params = TrafficParams::congested_reference();
    let rho = TrafficParams::congested_reference_densities();
    let s = KernelSettings::with_n(61);
    let base = reference();
    for gauge in [[2.0, 0.5, 3.0, 0.25], [0.1, 7.0, 1.0, 40.0]] {
        let other = Pipeline::build_with_gauge(&params, rho, &s, gauge).unwrap();
        assert!((other.design.transform.input_gain() - base.design.transform.input_gain()).abs() > 1e-6);
        for scenario in [Scenario::FullStateFeedback, Scenario::OutputFeedback] {
            let cfg = config(scenario);
            let a = run_scenario(base, &cfg).unwrap();
            let b = run_scenario(&other, &cfg).unwrap();
            let scale = a.control.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let worst = a.control.iter().zip(&b.control).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-6 * scale, "{scenario:?} {gauge:?}: {worst} vs {scale}");
        }
    }
}

/// One upwind step of the estimation error `w - w_hat`, written directly
/// from the error dynamics: injection `-P(x) e4(0)`, homogeneous inlet and
/// no input at the outlet.
fn error_step(e: &[Vec<f64>; 4], d: &DesignCoefficients, obs: &Observer, dx: f64, dt: f64) -> [Vec<f64>; 4] {
    let n = e[0].len();
    let mut out = e.clone();
    let e40 = e[3][0];
    for k in 0..n {
        let cp = d.couplings_at(if k + 1 == n { d.length } else { k as f64 * dx });
        for c in 0..3 {
            if k == 0 {
                continue;
            }
            let flux = d.lambda_plus[c] * (e[c][k] - e[c][k - 1]) / dx;
            let src = (0..3).map(|a| cp.pp[(c, a)] * e[a][k]).sum::<f64>() + cp.pm[c] * e[3][k]
                - obs.p_plus[k][c] * e40;
            out[c][k] = e[c][k] + dt * (-flux + src);
        }
        if k + 1 < n {
            let flux = d.mu * (e[3][k + 1] - e[3][k]) / dx;
            let src = (0..3).map(|a| cp.mp[a] * e[a][k]).sum::<f64>() - obs.p_minus[k] * e40;
            out[3][k] = e[3][k] + dt * (flux + src);
        }
    }
    for c in 0..3 {
        out[c][0] = 0.0;
    }
    out[3][n - 1] = (0..3).map(|c| d.r1[c] * out[c][n - 1]).sum();
    out
}

#[test]
fn observer_error_follows_the_error_system() {
    let p = dense();
    let d = &p.design.coeffs;
    let grid = SimGrid::new(150, &p.design.transform).unwrap();
    let dt = cfl_timestep(&p.design.lambdas, grid.dx, 0.9).unwrap();
    let stepper = Stepper::new(d, &grid, dt).unwrap();
    let obs = Observer::new(&p.design, &p.observer, &grid, &stepper);
    assert!(obs.p_minus.iter().any(|v| v.abs() > 0.0));
    let init = initial_profiles(&grid, &p.equilibrium, &SimConfig::default()).unwrap();
    let mut w = init.w.clone();
    let mut s = w.clone();
    let mut st = ObserverState::zeros(grid.len());
    for (k, v) in st.w_hat[2].iter_mut().enumerate() {
        *v = 1e-3 * (k as f64 * 0.3).cos();
    }
    let mut e: [Vec<f64>; 4] = std::array::from_fn(|c| (0..grid.len()).map(|k| w[c][k] - st.w_hat[c][k]).collect());
    for step in 0..300 {
        let u = 1e-4 * (step as f64 * 0.05).sin();
        let now = Measurement::design(w[3][0]);
        stepper.step(&mut w, &mut s, Outlet::Input(u));
        st = observer_step(&obs, &st, &now, &Measurement::design(w[3][0]), Outlet::Input(u)).unwrap();
        e = error_step(&e, d, &obs, grid.dx, dt);
        let scale = w.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        for c in 0..4 {
            assert!(e[c][0..3].iter().all(|v| v.is_finite()));
            for k in 0..grid.len() {
                let diff = (w[c][k] - st.w_hat[c][k]) - e[c][k];
                assert!(diff.abs() <= 1e-12 * scale, "step {step} comp {c} node {k}: {diff}");
            }
        }
        for c in 0..3 {
            assert_eq!(w[c][0] - st.w_hat[c][0], 0.0);
        }
    }
}

#[test]
fn observer_sees_only_the_measurement() {
    let p = dense();
    let grid = SimGrid::new(80, &p.design.transform).unwrap();
    let dt = cfl_timestep(&p.design.lambdas, grid.dx, 0.9).unwrap();
    let stepper = Stepper::new(&p.design.coeffs, &grid, dt).unwrap();
    let obs = Observer::new(&p.design, &p.observer, &grid, &stepper);
    let st = ObserverState::zeros(grid.len());
    let y = [0.01, 0.02];
    let a = observer_step(&obs, &st, &Measurement::design(y[0]), &Measurement::design(y[1]), Outlet::Input(0.0)).unwrap();
    // Plant interiors that agree in w4(0) produce the same measurements and
    // hence the same estimate.
    let b = observer_step(&obs, &st, &Measurement::design(y[0]), &Measurement::design(y[1]), Outlet::Input(0.0)).unwrap();
    assert_eq!(a, b);
    let c = observer_step(&obs, &st, &Measurement::design(y[0]), &Measurement::design(y[1] + 1e-3), Outlet::Input(0.0)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn dense_couplings_converge_in_finite_time() {
    let p = dense();
    let t_f = p.t_f();
    let full = run_scenario(p, &config(Scenario::FullStateFeedback)).unwrap();
    assert!(full.sup_at(1.1 * t_f) < 0.05 * full.initial_sup());
    let out = run_scenario(p, &config(Scenario::OutputFeedback)).unwrap();
    let err = out.observer_error.as_ref().unwrap();
    assert!(out.value_at(err, 1.1 * t_f) < 0.05 * err[0]);
    assert!(out.sup_at(2.2 * t_f) < 0.05 * out.initial_sup());
    let open = run_scenario(p, &config(Scenario::OpenLoop)).unwrap();
    assert!(open.sup_at(1.1 * t_f) > 0.25 * open.initial_sup());
}

#[test]
fn estimate_matches_the_plant_after_convergence() {
    let p = reference();
    let cfg = config(Scenario::OutputFeedback);
    let traj = run_scenario(p, &cfg).unwrap();
    let err = traj.observer_error.unwrap();
    let k = traj.times.iter().position(|&t| t >= 1.1 * p.t_f()).unwrap();
    // The scheme leaves a diffusive tail behind the last characteristic.
    assert!(err[k..].iter().all(|&e| e < 1e-2 * err[0]), "{}", err[k]);
    assert!(*err.last().unwrap() < 1e-6 * err[0]);
}

/// Normalized sup-norm distance to a reference field sampled every
/// `stride` nodes.
fn distance(coarse: &TrafficField, fine: &TrafficField, stride: usize, p: &Pipeline) -> f64 {
    let eq = &p.equilibrium;
    let s = [eq.rho_star[0], eq.v_star[0], eq.rho_star[1], eq.v_star[1]];
    let mut e = 0.0_f64;
    for k in 0..coarse.len() {
        let d = coarse.physical_at(k) - fine.physical_at(stride * k);
        for i in 0..4 {
            e = e.max((d[i] / s[i]).abs());
        }
    }
    e
}

#[test]
fn upwind_error_against_fine_reference() {
    // First-order upwind diffuses like dx (1 - courant): halving the CFL
    // fraction adds diffusion, refining the grid removes it.
    let p = reference();
    let t_end = Some(0.3 * p.t_f());
    let cfg = |n, cfl| SimConfig {
        n,
        cfl_fraction: cfl,
        t_end,
        snapshots: 2,
        ..config(Scenario::FullStateFeedback)
    };
    let fine = run_scenario(p, &cfg(801, 0.9)).unwrap();
    let reference = fine.snapshots.last().unwrap();
    let err = |n: usize, cfl: f64| {
        let r = run_scenario(p, &cfg(n, cfl)).unwrap();
        distance(r.snapshots.last().unwrap(), reference, 800 / (n - 1), p)
    };
    let by_cfl: Vec<f64> = [1.0, 0.5, 0.25].iter().map(|&c| err(101, c)).collect();
    assert!(by_cfl.windows(2).all(|w| w[0] <= w[1]), "{by_cfl:?}");
    let by_n: Vec<f64> = [101, 201, 401].iter().map(|&n| err(n, 0.9)).collect();
    assert!(by_n.windows(2).all(|w| w[1] < w[0]), "{by_n:?}");
}
