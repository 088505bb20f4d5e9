//! Feedback laws and the anti-collocated observer.
//!
//! The control law sets the backstepping target state to zero at the
//! outlet:
//!
//! ```text
//! U_bar = -R1 w+(L) + int_0^L K(L, xi) w+(xi) + L11(L, xi) w4(xi) dxi
//! U     = kappa4 exp(rate4 L) U_bar
//! ```
//!
//! In physical variables `w+ = T_u^-1(x) p` and `w4 = T_l^-1(x) p`. The
//! observer copies the design model, feeds the inlet mismatch
//! `w4_hat(0) - w4(0)` back through `P+(x)`, `P11-(x)` and takes the
//! measured `w4(0)` in its inlet condition.

use alloc::vec::Vec;

use nalgebra::{RowVector3, RowVector4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::kernels::{ControllerKernels, ObserverKernels};
use crate::riemann::{CombinedTransform, DesignModel};
use crate::sim::{Injection, Outlet, SimGrid, Stepper, TrafficField};

/// Control law discretized on a simulation grid (trapezoid rule, kernels
/// linearly interpolated along `x = L`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    /// Weights on `w1..w3` per node, outlet reflection folded into the last.
    pub design_plus: Vec<RowVector3<f64>>,
    /// Weights on `w4` per node.
    pub design_minus: Vec<f64>,
    /// Weights on `(rho1, v1, rho2, v2)` per node, including the input gain.
    pub physical: Vec<RowVector4<f64>>,
    /// `kappa4 exp(rate4 L)`.
    pub gain: f64,
}

impl FeedbackGains {
    pub fn new(design: &DesignModel, kernels: &ControllerKernels, grid: &SimGrid) -> Self {
        let n = grid.len();
        let gain = design.transform.input_gain();
        let mut design_plus = Vec::with_capacity(n);
        let mut design_minus = Vec::with_capacity(n);
        let mut physical = Vec::with_capacity(n);
        for k in 0..n {
            let tw = if k == 0 || k + 1 == n { 0.5 * grid.dx } else { grid.dx };
            let (kk, ll) = kernels.top_at(grid.x[k]);
            let mut dp = kk * tw;
            if k + 1 == n {
                dp -= design.coeffs.r1;
            }
            let dm = ll * tw;
            let ti = &grid.t_inv[k];
            let mut row = ti.row(3) * dm;
            for c in 0..3 {
                row += ti.row(c) * dp[c];
            }
            design_plus.push(dp);
            design_minus.push(dm);
            physical.push(row * gain);
        }
        Self {
            design_plus,
            design_minus,
            physical,
            gain,
        }
    }

    pub fn len(&self) -> usize {
        self.physical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.physical.is_empty()
    }

    /// `U_bar` from design states.
    pub fn design_control(&self, w: &[Vec<f64>; 4]) -> f64 {
        let mut u = 0.0;
        for k in 0..self.len() {
            let dp = &self.design_plus[k];
            u += dp[0] * w[0][k] + dp[1] * w[1][k] + dp[2] * w[2][k] + self.design_minus[k] * w[3][k];
        }
        u
    }

    /// `U_bar` on a state whose outlet value is still `R1 w+(L)`: the law
    /// is affine in the missing input through the last `w4` weight, so
    /// `U_bar = law / (1 - weight)`.
    pub fn closed_loop_input(&self, w: &[Vec<f64>; 4]) -> f64 {
        let last = self.len() - 1;
        self.design_control(w) / (1.0 - self.design_minus[last])
    }

    /// `U` from physical perturbations.
    pub fn physical_control(&self, p: impl Fn(usize) -> Vector4<f64>) -> f64 {
        (0..self.len()).map(|k| (self.physical[k] * p(k))[0]).sum()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            kernel_length: expected as f64,
            field_length: got as f64,
        })
    }
}

/// Full-state law evaluated on the physical perturbations [veh/s].
pub fn full_state_control(field: &TrafficField, gains: &FeedbackGains) -> Result<f64> {
    check_len(gains.len(), field.len())?;
    Ok(gains.physical_control(|k| field.physical_at(k)))
}

/// The same law applied to the observer estimates [veh/s].
pub fn output_feedback_control(obs: &ObserverState, gains: &FeedbackGains) -> Result<f64> {
    check_len(gains.len(), obs.len())?;
    Ok(gains.design_control(&obs.w_hat) * gains.gain)
}

/// Estimates `w_hat` on the simulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    pub w_hat: [Vec<f64>; 4],
    pub time: f64,
}

impl ObserverState {
    /// Equilibrium estimate.
    pub fn zeros(n: usize) -> Self {
        let z = alloc::vec![0.0; n];
        Self {
            w_hat: [z.clone(), z.clone(), z.clone(), z],
            time: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.w_hat[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_hat[0].is_empty()
    }
}

/// Inlet measurement: the physical values (when known) and `w4(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    /// `(rho1, v1, rho2, v2)` perturbations at `x = 0`.
    pub y: Option<[f64; 4]>,
    /// `w4(0) = (T^-1(0) y)_4`.
    pub y_bar: f64,
}

impl Measurement {
    pub fn from_inlet(y: [f64; 4], transform: &CombinedTransform) -> Self {
        let y_bar = (transform.t_l_inv(0.0) * Vector4::from(y))[0];
        Self { y: Some(y), y_bar }
    }

    pub fn from_field(field: &TrafficField, transform: &CombinedTransform) -> Self {
        let p = field.physical_at(0);
        Self::from_inlet([p[0], p[1], p[2], p[3]], transform)
    }

    pub fn design(y_bar: f64) -> Self {
        Self { y: None, y_bar }
    }
}

/// Observer dynamics on a simulation grid.
#[derive(Debug, Clone)]
pub struct Observer {
    stepper: Stepper,
    pub p_plus: Vec<Vector3<f64>>,
    pub p_minus: Vec<f64>,
}

impl Observer {
    pub fn new(design: &DesignModel, kernels: &ObserverKernels, grid: &SimGrid, stepper: &Stepper) -> Self {
        let gains = kernels.gains(design.coeffs.mu);
        let (p_plus, p_minus) = grid.x.iter().map(|&x| gains.at(x)).unzip();
        Self {
            stepper: stepper.clone(),
            p_plus,
            p_minus,
        }
    }

    /// Observer with explicit gains (e.g. zero), for experiments.
    pub fn with_gains(stepper: &Stepper, p_plus: Vec<Vector3<f64>>, p_minus: Vec<f64>) -> Self {
        Self {
            stepper: stepper.clone(),
            p_plus,
            p_minus,
        }
    }

    pub fn dt(&self) -> f64 {
        self.stepper.dt
    }

    /// Advance by one step and return the applied `U_bar`. `now` is the
    /// measurement at the current time (output injection), `next` the one at
    /// the new time (inlet condition), matching the plant scheme, which
    /// applies its inlet condition to the updated `w4(0)`.
    pub fn step(&self, state: &mut ObserverState, now: &Measurement, next: &Measurement, outlet: Outlet<'_>) -> f64 {
        let inj = Injection {
            p_plus: &self.p_plus,
            p_minus: &self.p_minus,
            error: state.w_hat[3][0] - now.y_bar,
        };
        let mut out = state.w_hat.clone();
        let u_bar = self.stepper.advance(&state.w_hat, &mut out, outlet, Some(next.y_bar), Some(&inj));
        state.w_hat = out;
        state.time += self.stepper.dt;
        u_bar
    }
}

/// Functional form of [`Observer::step`].
pub fn observer_step(
    observer: &Observer,
    state: &ObserverState,
    now: &Measurement,
    next: &Measurement,
    outlet: Outlet<'_>,
) -> Result<ObserverState> {
    check_len(observer.p_minus.len(), state.len())?;
    let mut s = state.clone();
    observer.step(&mut s, now, next, outlet);
    if s.w_hat.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { time: s.time });
    }
    Ok(s)
}

/// Estimated perturbation field `T(x) w_hat`; absolute values follow from
/// [`TrafficField::absolute_at`].
pub fn estimates_to_physical(state: &ObserverState, grid: &SimGrid) -> Result<TrafficField> {
    TrafficField::from_design(grid, state.time, &state.w_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSettings;
    use crate::model::TrafficParams;
    use crate::pipeline::Pipeline;
    use crate::sim::{cfl_timestep, initial_profiles, SimConfig};

    fn pipeline() -> Pipeline {
        Pipeline::build(
            &TrafficParams::congested_reference(),
            TrafficParams::congested_reference_densities(),
            &KernelSettings::with_n(41),
        )
        .unwrap()
    }

    #[test]
    fn laws_are_linear_and_consistent() {
        let p = pipeline();
        let grid = SimGrid::new(120, &p.design.transform).unwrap();
        let gains = FeedbackGains::new(&p.design, &p.controller, &grid);
        let f = initial_profiles(&grid, &p.equilibrium, &SimConfig::default()).unwrap();
        assert_eq!(full_state_control(&TrafficField::zeros(&grid), &gains).unwrap(), 0.0);
        let u = full_state_control(&f, &gains).unwrap();
        let u3 = full_state_control(&f.scaled(3.0), &gains).unwrap();
        assert!((u3 - 3.0 * u).abs() < 1e-12 * u.abs().max(1e-30));
        let ud = gains.design_control(&f.w) * gains.gain;
        assert!((ud - u).abs() < 1e-8 * u.abs());
        let obs = ObserverState {
            w_hat: f.w.clone(),
            time: 0.0,
        };
        assert!((output_feedback_control(&obs, &gains).unwrap() - ud).abs() < 1e-12 * ud.abs());
        assert_eq!(output_feedback_control(&ObserverState::zeros(120), &gains).unwrap(), 0.0);
        assert!(full_state_control(&TrafficField::zeros(&SimGrid::new(10, &p.design.transform).unwrap()), &gains).is_err());
    }

    #[test]
    fn measurement_matches_transform() {
        let p = pipeline();
        let grid = SimGrid::new(30, &p.design.transform).unwrap();
        let f = initial_profiles(
            &grid,
            &p.equilibrium,
            &SimConfig {
                wavenumber: Some(1e-3),
                ..SimConfig::default()
            },
        )
        .unwrap();
        let m = Measurement::from_field(&f, &p.design.transform);
        assert!((m.y_bar - f.w[3][0]).abs() < 1e-12 * (1.0 + f.w[3][0].abs()));
    }

    #[test]
    fn estimates_back_transform() {
        let p = pipeline();
        let grid = SimGrid::new(30, &p.design.transform).unwrap();
        let z = estimates_to_physical(&ObserverState::zeros(30), &grid).unwrap();
        let a = z.absolute_at(7, &p.equilibrium);
        assert_eq!(a, [p.equilibrium.rho_star[0], p.equilibrium.v_star[0], p.equilibrium.rho_star[1], p.equilibrium.v_star[1]]);
        let f = initial_profiles(&grid, &p.equilibrium, &SimConfig::default()).unwrap();
        let st = ObserverState { w_hat: f.w.clone(), time: 0.0 };
        let g = estimates_to_physical(&st, &grid).unwrap();
        for k in 0..30 {
            assert!((g.physical_at(k) - f.physical_at(k)).amax() < 1e-10 * f.physical_at(k).amax().max(1e-3));
        }
    }

    #[test]
    fn exact_estimate_stays_exact() {
        let p = pipeline();
        let grid = SimGrid::new(80, &p.design.transform).unwrap();
        let dt = cfl_timestep(&p.design.lambdas, grid.dx, 0.9).unwrap();
        let stepper = Stepper::new(&p.design.coeffs, &grid, dt).unwrap();
        let obs = Observer::new(&p.design, &p.observer, &grid, &stepper);
        let f = initial_profiles(&grid, &p.equilibrium, &SimConfig::default()).unwrap();
        let mut w = f.w.clone();
        let mut s = w.clone();
        let mut st = ObserverState { w_hat: w.clone(), time: 0.0 };
        for _ in 0..200 {
            let now = Measurement::design(w[3][0]);
            stepper.step(&mut w, &mut s, Outlet::Input(0.001));
            obs.step(&mut st, &now, &Measurement::design(w[3][0]), Outlet::Input(0.001));
        }
        assert_eq!(st.w_hat, w);
    }
}
