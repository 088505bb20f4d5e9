//! First-order upwind simulation of the design model and scenario runs.
//!
//! The state is carried in design coordinates `w`. `w1..w3` travel right
//! (backward differences), `w4` travels left (forward difference), sources
//! are explicit. Physical perturbations `(rho1, v1, rho2, v2)` are recovered
//! through `T(x)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{Matrix4, RowVector3, Vector3, Vector4};

use crate::control::{FeedbackGains, Measurement, Observer, ObserverState};
use crate::error::{Error, Result};
use crate::math::{ceil, sin, sqrt};
use crate::model::EquilibriumState;
use crate::pipeline::Pipeline;
use crate::riemann::{CombinedTransform, Couplings, DesignCoefficients, KernelCoefficients};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Zero flow perturbation at the outlet.
    OpenLoop,
    FullStateFeedback,
    /// Feedback on the estimates of the anti-collocated observer.
    OutputFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Grid nodes on `[0, L]`, including both ends.
    pub n: usize,
    pub cfl_fraction: f64,
    /// Final time [s]. `None` runs to `1.1 t_F`, or `1.1 * 2 t_F` with
    /// output feedback.
    pub t_end: Option<f64>,
    pub scenario: Scenario,
    /// Initial oscillation amplitude relative to the equilibrium.
    pub amplitude: f64,
    /// Initial wavenumber [1/m]. `None` means `4 pi / L`.
    pub wavenumber: Option<f64>,
    /// Number of stored field snapshots (evenly spaced, both ends included).
    pub snapshots: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 200,
            cfl_fraction: 0.9,
            t_end: None,
            scenario: Scenario::FullStateFeedback,
            amplitude: 0.25,
            wavenumber: None,
            snapshots: 200,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParameter {
                name: "grid_n",
                value: self.n as f64,
                requirement: "at least 3 grid nodes",
            });
        }
        if !(self.cfl_fraction > 0.0 && self.cfl_fraction <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "cfl",
                value: self.cfl_fraction,
                requirement: "0 < cfl <= 1",
            });
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0) || !t.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "t_end",
                    value: t,
                    requirement: "positive finite end time",
                });
            }
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidParameter {
                name: "amplitude",
                value: self.amplitude,
                requirement: "finite amplitude",
            });
        }
        if let Some(k) = self.wavenumber {
            if !k.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "wavenumber",
                    value: k,
                    requirement: "finite wavenumber",
                });
            }
        }
        Ok(())
    }
}

/// Uniform nodes with the transforms evaluated once per node.
#[derive(Debug, Clone, PartialEq)]
pub struct SimGrid {
    pub x: Vec<f64>,
    pub dx: f64,
    pub t: Vec<Matrix4<f64>>,
    pub t_inv: Vec<Matrix4<f64>>,
}

impl SimGrid {
    pub fn new(n: usize, transform: &CombinedTransform) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter {
                name: "grid_n",
                value: n as f64,
                requirement: "at least 3 grid nodes",
            });
        }
        let length = transform.length;
        let dx = length / (n - 1) as f64;
        let x: Vec<f64> = (0..n).map(|k| if k + 1 == n { length } else { k as f64 * dx }).collect();
        let t = x.iter().map(|&xk| transform.t(xk)).collect();
        let t_inv = x.iter().map(|&xk| transform.t_inv(xk)).collect();
        Ok(Self { x, dx, t, t_inv })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Perturbation field in both representations.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficField {
    pub time: f64,
    pub x: Vec<f64>,
    pub rho1: Vec<f64>,
    pub v1: Vec<f64>,
    pub rho2: Vec<f64>,
    pub v2: Vec<f64>,
    pub w: [Vec<f64>; 4],
}

impl TrafficField {
    pub fn zeros(grid: &SimGrid) -> Self {
        let z = vec![0.0; grid.len()];
        Self {
            time: 0.0,
            x: grid.x.clone(),
            rho1: z.clone(),
            v1: z.clone(),
            rho2: z.clone(),
            v2: z.clone(),
            w: [z.clone(), z.clone(), z.clone(), z],
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn physical_at(&self, k: usize) -> Vector4<f64> {
        Vector4::new(self.rho1[k], self.v1[k], self.rho2[k], self.v2[k])
    }

    pub fn design_at(&self, k: usize) -> Vector4<f64> {
        Vector4::new(self.w[0][k], self.w[1][k], self.w[2][k], self.w[3][k])
    }

    pub fn from_physical(grid: &SimGrid, time: f64, p: &[Vector4<f64>]) -> Result<Self> {
        check_len(grid, p.len())?;
        let mut f = Self::zeros(grid);
        f.time = time;
        for (k, pk) in p.iter().enumerate() {
            f.set_physical(k, pk);
            let w = grid.t_inv[k] * pk;
            for c in 0..4 {
                f.w[c][k] = w[c];
            }
        }
        Ok(f)
    }

    pub fn from_design(grid: &SimGrid, time: f64, w: &[Vec<f64>; 4]) -> Result<Self> {
        for wc in w {
            check_len(grid, wc.len())?;
        }
        let mut f = Self::zeros(grid);
        f.time = time;
        f.w = w.clone();
        for k in 0..grid.len() {
            let p = grid.t[k] * f.design_at(k);
            f.set_physical(k, &p);
        }
        Ok(f)
    }

    fn set_physical(&mut self, k: usize, p: &Vector4<f64>) {
        self.rho1[k] = p[0];
        self.v1[k] = p[1];
        self.rho2[k] = p[2];
        self.v2[k] = p[3];
    }

    /// Scaled copy, `a * field`.
    pub fn scaled(&self, a: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| a * x).collect::<Vec<_>>();
        Self {
            time: self.time,
            x: self.x.clone(),
            rho1: s(&self.rho1),
            v1: s(&self.v1),
            rho2: s(&self.rho2),
            v2: s(&self.v2),
            w: [s(&self.w[0]), s(&self.w[1]), s(&self.w[2]), s(&self.w[3])],
        }
    }

    /// `max_x max_i |rho_i| / rho_i*, |v_i| / v_i*`.
    pub fn sup_norm(&self, eq: &EquilibriumState) -> f64 {
        let mut m = 0.0_f64;
        for k in 0..self.len() {
            for v in normalized(&self.physical_at(k), eq) {
                m = m.max(v.abs());
            }
        }
        m
    }

    /// `L2` norm of the normalized perturbation, divided by `sqrt(L)` so
    /// it is comparable with the sup-norm.
    pub fn l2_norm(&self, eq: &EquilibriumState) -> f64 {
        let n = self.len();
        let length = self.x[n - 1] - self.x[0];
        let mut acc = 0.0;
        for k in 0..n {
            let p = normalized(&self.physical_at(k), eq);
            let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
            acc += w * p.iter().map(|v| v * v).sum::<f64>();
        }
        let dx = length / (n - 1) as f64;
        sqrt(acc * dx / length)
    }

    /// Absolute values `rho* + rho`, `v* + v`, ordered `(rho1, v1, rho2, v2)`.
    pub fn absolute_at(&self, k: usize, eq: &EquilibriumState) -> [f64; 4] {
        let p = self.physical_at(k);
        [
            eq.rho_star[0] + p[0],
            eq.v_star[0] + p[1],
            eq.rho_star[1] + p[2],
            eq.v_star[1] + p[3],
        ]
    }
}

fn normalized(p: &Vector4<f64>, eq: &EquilibriumState) -> [f64; 4] {
    [
        p[0] / eq.rho_star[0],
        p[1] / eq.v_star[0],
        p[2] / eq.rho_star[1],
        p[3] / eq.v_star[1],
    ]
}

fn check_len(grid: &SimGrid, len: usize) -> Result<()> {
    if len == grid.len() {
        Ok(())
    } else {
        Err(Error::GridMismatch {
            kernel_length: grid.len() as f64,
            field_length: len as f64,
        })
    }
}

/// Sinusoidal stop-and-go profile: `rho_i = a rho_i* sin(k x)`,
/// `v_i = -a v_i* sin(k x)` with `a = amplitude`.
pub fn initial_profiles(grid: &SimGrid, eq: &EquilibriumState, config: &SimConfig) -> Result<TrafficField> {
    let length = grid.x[grid.len() - 1];
    let k = config.wavenumber.unwrap_or(4.0 * PI / length);
    let a = config.amplitude;
    let p: Vec<Vector4<f64>> = grid
        .x
        .iter()
        .map(|&x| {
            let s = a * sin(k * x);
            Vector4::new(eq.rho_star[0] * s, -eq.v_star[0] * s, eq.rho_star[1] * s, -eq.v_star[1] * s)
        })
        .collect();
    TrafficField::from_physical(grid, 0.0, &p)
}

/// `cfl_fraction * dx / max|lambda|`.
pub fn cfl_timestep(lambdas: &[f64; 4], dx: f64, cfl_fraction: f64) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(Error::InvalidParameter {
            name: "dx",
            value: dx,
            requirement: "positive grid spacing",
        });
    }
    let vmax = lambdas.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    Ok(cfl_fraction * dx / vmax)
}

/// Explicit upwind update for the design model on a fixed grid and step.
#[derive(Debug, Clone)]
pub struct Stepper {
    pub dx: f64,
    pub dt: f64,
    lam: [f64; 3],
    mu: f64,
    coup: Vec<Couplings>,
    q0: Vector3<f64>,
    r1: RowVector3<f64>,
}

/// Output injection added to the interior updates: `-P(x) e`.
pub(crate) struct Injection<'a> {
    pub p_plus: &'a [Vector3<f64>],
    pub p_minus: &'a [f64],
    pub error: f64,
}

impl Stepper {
    pub fn new(coeffs: &DesignCoefficients, grid: &SimGrid, dt: f64) -> Result<Self> {
        let lam = coeffs.lambda_plus;
        let mu = coeffs.mu;
        let vmax = lam.iter().fold(mu, |m, l| m.max(l.abs()));
        let courant = vmax * dt / grid.dx;
        if !(dt > 0.0) || courant > 1.0 + 1e-12 {
            return Err(Error::CflViolation { courant });
        }
        Ok(Self {
            dx: grid.dx,
            dt,
            lam,
            mu,
            coup: grid.x.iter().map(|&x| coeffs.couplings_at(x)).collect(),
            q0: coeffs.q0,
            r1: coeffs.r1,
        })
    }

    pub fn len(&self) -> usize {
        self.coup.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coup.is_empty()
    }

    /// One step of `w` into `out`; returns the design input `U_bar` that
    /// was applied at the outlet. `inlet_w4` replaces the updated `w4(0)` in
    /// the inlet condition when given.
    pub(crate) fn advance(
        &self,
        w: &[Vec<f64>; 4],
        out: &mut [Vec<f64>; 4],
        outlet: Outlet<'_>,
        inlet_w4: Option<f64>,
        injection: Option<&Injection<'_>>,
    ) -> f64 {
        let n = self.len();
        let dt = self.dt;
        for c in 0..3 {
            let r = self.lam[c] * dt / self.dx;
            for k in 1..n {
                let cp = &self.coup[k];
                let mut src = cp.pm[c] * w[3][k];
                for a in 0..3 {
                    src += cp.pp[(c, a)] * w[a][k];
                }
                if let Some(inj) = injection {
                    src -= inj.p_plus[k][c] * inj.error;
                }
                out[c][k] = w[c][k] - r * (w[c][k] - w[c][k - 1]) + dt * src;
            }
        }
        let r = self.mu * dt / self.dx;
        for k in 0..n - 1 {
            let cp = &self.coup[k];
            let mut src = cp.mp[0] * w[0][k] + cp.mp[1] * w[1][k] + cp.mp[2] * w[2][k];
            if let Some(inj) = injection {
                src -= inj.p_minus[k] * inj.error;
            }
            out[3][k] = w[3][k] + r * (w[3][k + 1] - w[3][k]) + dt * src;
        }
        let w4_in = inlet_w4.unwrap_or(out[3][0]);
        for c in 0..3 {
            out[c][0] = self.q0[c] * w4_in;
        }
        let last = n - 1;
        out[3][last] = self.r1[0] * out[0][last] + self.r1[1] * out[1][last] + self.r1[2] * out[2][last];
        let u_bar = match outlet {
            Outlet::Input(u) => u,
            Outlet::Feedback(gains) => gains.closed_loop_input(out),
        };
        out[3][last] += u_bar;
        u_bar
    }

    /// Plant step in place; returns the applied `U_bar`.
    pub fn step(&self, w: &mut [Vec<f64>; 4], scratch: &mut [Vec<f64>; 4], outlet: Outlet<'_>) -> f64 {
        let u = self.advance(w, scratch, outlet, None, None);
        core::mem::swap(w, scratch);
        u
    }
}

/// What drives the outlet condition `w4(L) = R1 w+(L) + U_bar`.
#[derive(Debug, Clone, Copy)]
pub enum Outlet<'a> {
    /// Prescribed design input.
    Input(f64),
    /// The feedback law evaluated on the new time level. The law contains
    /// `w4(L)` itself through the `L11(L, L)` quadrature weight; that
    /// scalar equation is solved exactly, so the boundary value and the
    /// input always belong to the same state.
    Feedback(&'a FeedbackGains),
}

/// Single plant step of a field with physical input `u` [veh/s].
pub fn step(
    field: &TrafficField,
    grid: &SimGrid,
    coeffs: &DesignCoefficients,
    transform: &CombinedTransform,
    u: f64,
    dt: f64,
) -> Result<TrafficField> {
    check_len(grid, field.len())?;
    let stepper = Stepper::new(coeffs, grid, dt)?;
    let mut w = field.w.clone();
    let mut scratch = field.w.clone();
    let u_bar = u / transform.input_gain();
    stepper.step(&mut w, &mut scratch, Outlet::Input(u_bar));
    let time = field.time + dt;
    if w.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { time });
    }
    TrafficField::from_design(grid, time, &w)
}

/// Recorded run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub scenario: Scenario,
    pub dt: f64,
    /// `L / v2* + L / (-lambda4)`.
    pub t_f: f64,
    pub times: Vec<f64>,
    pub sup_norm: Vec<f64>,
    pub l2_norm: Vec<f64>,
    /// Physical control input `U(t)` [veh/s], the feedback law evaluated
    /// on the state (or estimate) at `t`. From the second entry on this is
    /// the input that set the outlet value at `t`.
    pub control: Vec<f64>,
    /// Normalized sup-norm of the estimation error, output feedback only.
    pub observer_error: Option<Vec<f64>>,
    pub snapshots: Vec<TrafficField>,
}

impl Trajectory {
    pub fn t_f2(&self) -> f64 {
        2.0 * self.t_f
    }

    pub fn initial_sup(&self) -> f64 {
        self.sup_norm[0]
    }

    /// Series value at `t`, linearly interpolated (clamped to the run).
    pub fn value_at(&self, series: &[f64], t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return series[0];
        }
        if t >= self.times[n - 1] {
            return series[n - 1];
        }
        let s = (t - self.times[0]) / self.dt;
        let i = (s as usize).min(n - 2);
        let a = (t - self.times[i]) / (self.times[i + 1] - self.times[i]);
        series[i] * (1.0 - a) + series[i + 1] * a
    }

    pub fn sup_at(&self, t: f64) -> f64 {
        self.value_at(&self.sup_norm, t)
    }
}

/// Convergence summary of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceReport {
    pub t_f: f64,
    pub t_f2: f64,
    pub initial_sup: f64,
    pub final_sup: f64,
    /// `sup(t) / sup(0)` at `1.1 t_F` and `1.1 * 2 t_F`.
    pub ratio_at_t_f: f64,
    pub ratio_at_t_f2: f64,
    /// First time the sup-norm drops below `threshold * sup(0)` and stays
    /// below for the rest of the run.
    pub time_to_threshold: Option<f64>,
    pub threshold: f64,
}

pub fn convergence_metrics(traj: &Trajectory, threshold: f64) -> ConvergenceReport {
    let s0 = traj.initial_sup();
    let ratio = |t: f64| if s0 > 0.0 { traj.sup_at(t) / s0 } else { 0.0 };
    let limit = threshold * s0;
    let mut hit = None;
    for (k, &s) in traj.sup_norm.iter().enumerate().rev() {
        if s < limit || s == 0.0 {
            hit = Some(traj.times[k]);
        } else {
            break;
        }
    }
    ConvergenceReport {
        t_f: traj.t_f,
        t_f2: traj.t_f2(),
        initial_sup: s0,
        final_sup: *traj.sup_norm.last().unwrap_or(&0.0),
        ratio_at_t_f: ratio(1.1 * traj.t_f),
        ratio_at_t_f2: ratio(1.1 * traj.t_f2()),
        time_to_threshold: hit,
        threshold,
    }
}

/// Run `config.scenario` from the sinusoidal initial profile.
pub fn run_scenario(pipeline: &Pipeline, config: &SimConfig) -> Result<Trajectory> {
    config.validate()?;
    let grid = SimGrid::new(config.n, &pipeline.design.transform)?;
    let init = initial_profiles(&grid, &pipeline.equilibrium, config)?;
    run_from(pipeline, config, &grid, &init)
}

/// Run `config.scenario` from an arbitrary initial field on `grid`.
pub fn run_from(pipeline: &Pipeline, config: &SimConfig, grid: &SimGrid, init: &TrafficField) -> Result<Trajectory> {
    config.validate()?;
    check_len(grid, init.len())?;
    let design = &pipeline.design;
    let eq = &pipeline.equilibrium;
    let t_f = pipeline.t_f();
    let t_end = config.t_end.unwrap_or(match config.scenario {
        Scenario::OutputFeedback => 1.1 * 2.0 * t_f,
        _ => 1.1 * t_f,
    });
    let dt_cfl = cfl_timestep(&design.lambdas, grid.dx, config.cfl_fraction)?;
    let steps = (ceil(t_end / dt_cfl) as usize).max(1);
    let dt = t_end / steps as f64;
    let stepper = Stepper::new(&design.coeffs, grid, dt)?;
    let gain = design.transform.input_gain();

    let feedback = match config.scenario {
        Scenario::OpenLoop => None,
        _ => Some(FeedbackGains::new(design, &pipeline.controller, grid)),
    };
    let mut observer = match config.scenario {
        Scenario::OutputFeedback => Some((
            Observer::new(design, &pipeline.observer, grid, &stepper),
            ObserverState::zeros(grid.len()),
        )),
        _ => None,
    };

    let mut w = init.w.clone();
    let mut scratch = w.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut sup = Vec::with_capacity(steps + 1);
    let mut l2 = Vec::with_capacity(steps + 1);
    let mut control = Vec::with_capacity(steps + 1);
    let mut obs_err = observer.as_ref().map(|_| Vec::with_capacity(steps + 1));
    let snaps = config.snapshots.max(2).min(steps + 1);
    // Nearest steps to evenly spaced snapshot times.
    let mut snap_steps: Vec<usize> = (0..snaps).map(|s| (s * steps + (snaps - 1) / 2) / (snaps - 1)).collect();
    snap_steps.dedup();
    let mut next_snap = 0;
    let mut snapshots = Vec::with_capacity(snaps);

    let law = |w: &[Vec<f64>; 4], obs: &Option<(Observer, ObserverState)>| -> f64 {
        match (&feedback, obs) {
            (None, _) => 0.0,
            (Some(fb), Some((_, st))) => fb.design_control(&st.w_hat) * gain,
            (Some(fb), None) => fb.design_control(w) * gain,
        }
    };

    for k in 0..=steps {
        let t = k as f64 * dt;
        let field = TrafficField::from_design(grid, t, &w)?;
        times.push(t);
        sup.push(field.sup_norm(eq));
        l2.push(field.l2_norm(eq));
        control.push(law(&w, &observer));
        if let (Some(errs), Some((_, st))) = (obs_err.as_mut(), observer.as_ref()) {
            let est = TrafficField::from_design(grid, t, &st.w_hat)?;
            let mut e = 0.0_f64;
            for j in 0..grid.len() {
                let d = field.physical_at(j) - est.physical_at(j);
                for v in normalized(&d, eq) {
                    e = e.max(v.abs());
                }
            }
            errs.push(e);
        }
        if next_snap < snap_steps.len() && snap_steps[next_snap] == k {
            snapshots.push(field);
            next_snap += 1;
        }
        if k == steps {
            break;
        }
        match (&feedback, observer.as_mut()) {
            (None, _) => {
                stepper.step(&mut w, &mut scratch, Outlet::Input(0.0));
            }
            (Some(fb), None) => {
                stepper.step(&mut w, &mut scratch, Outlet::Feedback(fb));
            }
            (Some(fb), Some((obs, st))) => {
                // The plant outlet waits for the input computed from the
                // estimate at the new time level.
                let y_now = w[3][0];
                stepper.step(&mut w, &mut scratch, Outlet::Input(0.0));
                let u_bar = obs.step(st, &Measurement::design(y_now), &Measurement::design(w[3][0]), Outlet::Feedback(fb));
                let last = w[3].len() - 1;
                w[3][last] += u_bar;
            }
        }
        if w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { time: t + dt });
        }
    }

    Ok(Trajectory {
        scenario: config.scenario,
        dt,
        t_f,
        times,
        sup_norm: sup,
        l2_norm: l2,
        control,
        observer_error: obs_err,
        snapshots,
    })
}
