//! Two-class AR model primitives.
//!
//! Area occupancy couples the classes: both the traffic pressure and the
//! Greenshields-type equilibrium speed of each class are functions of the
//! fraction of road surface covered by vehicles of either class.

use alloc::vec::Vec;

use nalgebra::Matrix4;

use crate::error::{Error, Result};
use crate::math::{powf, sqrt};
use crate::units::{kmh_to_ms, per_km_to_per_m};

/// Default tolerance (m/s) used to classify the sign of `lambda_4`.
pub const REGIME_TOL: f64 = 1e-9;

/// Physical parameters of one vehicle class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleClassParams {
    /// Relaxation time [s].
    pub tau: f64,
    /// Pressure exponent, `> 1`.
    pub gamma: f64,
    /// Free-flow velocity [m/s].
    pub v_free: f64,
    /// Maximum area occupancy, in `(0, 1]`.
    pub ao_max: f64,
    /// Occupied surface per vehicle [m^2].
    pub area: f64,
}

impl VehicleClassParams {
    pub fn new(tau: f64, gamma: f64, v_free: f64, ao_max: f64, area: f64) -> Result<Self> {
        let p = Self {
            tau,
            gamma,
            v_free,
            ao_max,
            area,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.tau > 0.0, "tau", self.tau, "tau > 0")?;
        check(self.gamma > 1.0, "gamma", self.gamma, "gamma > 1")?;
        check(self.v_free > 0.0, "v_free", self.v_free, "v_free > 0")?;
        check(
            self.ao_max > 0.0 && self.ao_max <= 1.0,
            "ao_max",
            self.ao_max,
            "0 < ao_max <= 1",
        )?;
        check(self.area > 0.0, "area", self.area, "area > 0")
    }
}

/// Width and length of the track section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadParams {
    /// Track width `W` [m].
    pub width: f64,
    /// Track length `L` [m].
    pub length: f64,
}

impl RoadParams {
    pub fn new(width: f64, length: f64) -> Result<Self> {
        let r = Self { width, length };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        check(self.width > 0.0, "width", self.width, "width > 0")?;
        check(self.length > 0.0, "length", self.length, "length > 0")
    }
}

/// Both vehicle classes plus the road.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrafficParams {
    pub classes: [VehicleClassParams; 2],
    pub road: RoadParams,
}

impl TrafficParams {
    pub fn new(classes: [VehicleClassParams; 2], road: RoadParams) -> Result<Self> {
        let t = Self { classes, road };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.classes[0].validate()?;
        self.classes[1].validate()?;
        self.road.validate()
    }

    /// Reference congested scenario: passenger cars (class 1) and trucks
    /// (class 2) on a 1 km, 6.5 m wide section.
    pub fn congested_reference() -> Self {
        Self {
            classes: [
                VehicleClassParams {
                    tau: 30.0,
                    gamma: 2.5,
                    v_free: kmh_to_ms(80.0),
                    ao_max: 0.9,
                    area: 10.0,
                },
                VehicleClassParams {
                    tau: 60.0,
                    gamma: 2.0,
                    v_free: kmh_to_ms(60.0),
                    ao_max: 0.85,
                    area: 40.0,
                },
            ],
            road: RoadParams {
                width: 6.5,
                length: 1000.0,
            },
        }
    }

    /// Equilibrium densities of the reference scenario [veh/m].
    pub fn congested_reference_densities() -> [f64; 2] {
        [per_km_to_per_m(150.0), per_km_to_per_m(75.0)]
    }
}

fn check(ok: bool, name: &'static str, value: f64, requirement: &'static str) -> Result<()> {
    // NaN fails every comparison and is rejected here as well.
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            requirement,
        })
    }
}

/// Area occupancy `(a1 rho1 + a2 rho2) / W`. Not clamped; callers decide
/// whether values above one are acceptable.
pub fn area_occupancy(rho: [f64; 2], params: &TrafficParams) -> Result<f64> {
    check(rho[0] >= 0.0, "rho1", rho[0], "density >= 0")?;
    check(rho[1] >= 0.0, "rho2", rho[1], "density >= 0")?;
    Ok(occupancy_unchecked(rho, params))
}

fn occupancy_unchecked(rho: [f64; 2], params: &TrafficParams) -> f64 {
    (params.classes[0].area * rho[0] + params.classes[1].area * rho[1]) / params.road.width
}

fn check_occupancy(ao: f64) -> Result<()> {
    if (0.0..=1.0).contains(&ao) {
        Ok(())
    } else {
        Err(Error::OccupancyOutOfRange(ao))
    }
}

/// Traffic pressure `V (AO / AO_max)^gamma` [m/s].
pub fn pressure(ao: f64, class: &VehicleClassParams) -> Result<f64> {
    check_occupancy(ao)?;
    Ok(class.v_free * powf(ao / class.ao_max, class.gamma))
}

/// Equilibrium speed `V (1 - (AO / AO_max)^gamma)` [m/s]. Negative above
/// `AO_max` (jammed class).
pub fn equilibrium_speed(ao: f64, class: &VehicleClassParams) -> Result<f64> {
    Ok(class.v_free - pressure(ao, class)?)
}

/// Uniform equilibrium of both classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumState {
    /// Densities [veh/m].
    pub rho_star: [f64; 2],
    /// Velocities [m/s].
    pub v_star: [f64; 2],
    /// Flows `rho* v*` [veh/s].
    pub q_star: [f64; 2],
    /// Area occupancy at the equilibrium.
    pub ao_star: f64,
}

pub fn compute_equilibrium(rho_star: [f64; 2], params: &TrafficParams) -> Result<EquilibriumState> {
    check(rho_star[0] > 0.0, "rho_star_1", rho_star[0], "equilibrium density > 0")?;
    check(rho_star[1] > 0.0, "rho_star_2", rho_star[1], "equilibrium density > 0")?;
    let ao = area_occupancy(rho_star, params)?;
    check_occupancy(ao)?;
    let mut v_star = [0.0; 2];
    for (i, class) in params.classes.iter().enumerate() {
        v_star[i] = equilibrium_speed(ao, class)?;
    }
    // Report a class with non-positive speed first, else the class whose
    // occupancy limit is exceeded.
    let bad = (0..2)
        .find(|&i| v_star[i] <= 0.0)
        .or_else(|| (0..2).find(|&i| ao >= params.classes[i].ao_max));
    if let Some(i) = bad {
        return Err(Error::InfeasibleEquilibrium {
            class: i + 1,
            speed: v_star[i],
            occupancy: ao,
        });
    }
    Ok(EquilibriumState {
        rho_star,
        v_star,
        q_star: [rho_star[0] * v_star[0], rho_star[1] * v_star[1]],
        ao_star: ao,
    })
}

/// `beta_ij = d p_i(AO(rho)) / d rho_j` at the equilibrium. Rank one:
/// `beta_ij = c_i a_j`.
pub fn pressure_gradients(eq: &EquilibriumState, params: &TrafficParams) -> [[f64; 2]; 2] {
    let ao = eq.ao_star;
    let w = params.road.width;
    let mut beta = [[0.0; 2]; 2];
    for (i, ci) in params.classes.iter().enumerate() {
        let c = ci.gamma * ci.v_free * powf(ao, ci.gamma - 1.0) / (w * powf(ci.ao_max, ci.gamma));
        for (j, cj) in params.classes.iter().enumerate() {
            beta[i][j] = c * cj.area;
        }
    }
    beta
}

/// Free/congested classification from the sign of `lambda_4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// All four characteristic speeds positive.
    Free,
    /// `lambda_4 < 0`, the other three positive.
    Congested,
    /// `|lambda_4|` within tolerance of zero.
    Boundary,
}

/// Linearization of the two-class model about a uniform equilibrium, in the
/// time-decoupled form `u_t + J_x u_x = J u` with `u = (rho1, v1, rho2, v2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub equilibrium: EquilibriumState,
    /// Pressure gradients `beta_ij`.
    pub beta: [[f64; 2]; 2],
    /// Diagonal `beta_ii` (named `pressure_gradient_diag` elsewhere).
    pub alpha: [f64; 2],
    /// Convection Jacobian.
    pub jac_x: Matrix4<f64>,
    /// Source Jacobian (relaxation terms).
    pub jac_src: Matrix4<f64>,
    /// Characteristic speeds `lambda_1..lambda_4` [m/s].
    pub lambdas: [f64; 4],
    /// Discriminant [m/s].
    pub delta: f64,
    pub regime: Regime,
    /// Relaxation times the source Jacobian was built with.
    pub tau: [f64; 2],
}

pub fn linearize(eq: &EquilibriumState, beta: [[f64; 2]; 2], params: &TrafficParams) -> Result<Linearization> {
    let [r1, r2] = eq.rho_star;
    let [v1, v2] = eq.v_star;
    let [[b11, b12], [b21, b22]] = beta;
    let (t1, t2) = (params.classes[0].tau, params.classes[1].tau);

    #[rustfmt::skip]
    let jac_x = Matrix4::new(
        v1,               r1,        0.0,              0.0,
        0.0,              v1 - b11 * r1, b12 * (v1 - v2), -b12 * r2,
        0.0,              0.0,       v2,               r2,
        b21 * (v2 - v1), -b21 * r1,  0.0,              v2 - b22 * r2,
    );
    #[rustfmt::skip]
    let jac_src = Matrix4::new(
        0.0,       0.0,       0.0,       0.0,
        -b11 / t1, -1.0 / t1, -b12 / t1, 0.0,
        0.0,       0.0,       0.0,       0.0,
        -b21 / t2, 0.0,       -b22 / t2, -1.0 / t2,
    );

    let (lambdas, delta) = characteristic_speeds(eq, [b11, b22]);
    let regime = classify_regime(lambdas, REGIME_TOL)?;
    Ok(Linearization {
        equilibrium: *eq,
        beta,
        alpha: [b11, b22],
        jac_x,
        jac_src,
        lambdas,
        delta,
        regime,
        tau: [t1, t2],
    })
}

/// Closed-form eigenvalues of the convection Jacobian. The pair
/// `lambda_3, lambda_4` are the roots of the 2x2 block acting on the
/// pressure modes; its trace is `v1 + v2 - alpha1 rho1 - alpha2 rho2`.
pub fn characteristic_speeds(eq: &EquilibriumState, alpha: [f64; 2]) -> ([f64; 4], f64) {
    let [r1, r2] = eq.rho_star;
    let [v1, v2] = eq.v_star;
    let (s1, s2) = (alpha[0] * r1, alpha[1] * r2);
    let d = s2 - s1 + v1 - v2;
    let delta = sqrt(d * d + 4.0 * s1 * s2);
    let mean = 0.5 * (v1 + v2 - s1 - s2);
    ([v1, v2, mean + 0.5 * delta, mean - 0.5 * delta], delta)
}

/// Convenience: equilibrium plus linearization at `rho_star`.
pub fn analyze(rho_star: [f64; 2], params: &TrafficParams) -> Result<(EquilibriumState, Linearization)> {
    params.validate()?;
    let eq = compute_equilibrium(rho_star, params)?;
    let beta = pressure_gradients(&eq, params);
    let lin = linearize(&eq, beta, params)?;
    Ok((eq, lin))
}

pub fn classify_regime(lambdas: [f64; 4], tol: f64) -> Result<Regime> {
    if lambdas[..3].iter().any(|&l| !(l > tol)) {
        return Err(Error::DegenerateSpeeds { lambdas, tol });
    }
    let l4 = lambdas[3];
    if l4.abs() <= tol {
        Ok(Regime::Boundary)
    } else if l4 < 0.0 {
        Ok(Regime::Congested)
    } else {
        Ok(Regime::Free)
    }
}

/// `lambda_4` at `rho_star`, or `None` where the equilibrium is infeasible.
pub fn lambda4_at(rho_star: [f64; 2], params: &TrafficParams) -> Option<f64> {
    let eq = compute_equilibrium(rho_star, params).ok()?;
    let beta = pressure_gradients(&eq, params);
    Some(characteristic_speeds(&eq, [beta[0][0], beta[1][1]]).0[3])
}

/// `lambda_4` sampled over a rectangle of equilibrium densities, plus the
/// extracted zero contour.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeScan {
    /// Class-1 densities [veh/m] (columns).
    pub rho1: Vec<f64>,
    /// Class-2 densities [veh/m] (rows).
    pub rho2: Vec<f64>,
    /// Row-major `lambda4[row * rho1.len() + col]`; `None` where infeasible.
    pub lambda4: Vec<Option<f64>>,
    /// Zero-contour polylines as `[rho1, rho2]` vertices.
    pub contour: Vec<Vec<[f64; 2]>>,
    /// `|lambda_4|` bound met by every contour vertex [m/s].
    pub contour_tol: f64,
}

impl RegimeScan {
    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        self.lambda4[row * self.rho1.len() + col]
    }
}

/// Vertex accuracy of the refined contour [m/s].
pub const CONTOUR_TOL: f64 = 1e-9;

/// Sample `lambda_4` on a `resolution.0 x resolution.1` grid (rho1 x rho2)
/// and extract `lambda_4 = 0` with marching squares. Edge crossings start
/// from linear interpolation and are refined along the edge until
/// `|lambda_4| < CONTOUR_TOL`.
pub fn congestion_boundary_scan(
    params: &TrafficParams,
    rho1_range: (f64, f64),
    rho2_range: (f64, f64),
    resolution: (usize, usize),
) -> Result<RegimeScan> {
    params.validate()?;
    let (n1, n2) = resolution;
    if n1 < 2 || n2 < 2 {
        return Err(Error::InvalidParameter {
            name: "resolution",
            value: n1.min(n2) as f64,
            requirement: "at least 2 samples per axis",
        });
    }
    for (name, (lo, hi)) in [("rho1_range", rho1_range), ("rho2_range", rho2_range)] {
        check(lo >= 0.0 && hi > lo, name, lo, "0 <= min < max")?;
    }
    let axis = |(lo, hi): (f64, f64), n: usize| -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    };
    let rho1 = axis(rho1_range, n1);
    let rho2 = axis(rho2_range, n2);
    let mut lambda4 = Vec::with_capacity(n1 * n2);
    for &r2 in &rho2 {
        for &r1 in &rho1 {
            lambda4.push(lambda4_at([r1, r2], params));
        }
    }

    let mut segments: Vec<[[f64; 2]; 2]> = Vec::new();
    let value = |row: usize, col: usize| lambda4[row * n1 + col];
    for row in 0..n2 - 1 {
        for col in 0..n1 - 1 {
            let corners = [(row, col), (row, col + 1), (row + 1, col + 1), (row + 1, col)];
            let vals: Option<Vec<f64>> = corners.iter().map(|&(r, c)| value(r, c)).collect();
            let Some(vals) = vals else { continue };
            let pts: Vec<[f64; 2]> = corners.iter().map(|&(r, c)| [rho1[c], rho2[r]]).collect();
            let mut crossings: Vec<[f64; 2]> = Vec::new();
            for e in 0..4 {
                let (a, b) = (e, (e + 1) % 4);
                let (fa, fb) = (vals[a], vals[b]);
                if (fa < 0.0) != (fb < 0.0) {
                    crossings.push(refine_crossing(params, pts[a], pts[b], fa, fb));
                }
            }
            match crossings.len() {
                2 => segments.push([crossings[0], crossings[1]]),
                4 => {
                    // Saddle cell: pair edges by the sign of the cell centre.
                    let centre = vals.iter().sum::<f64>() / 4.0;
                    if (centre < 0.0) == (vals[0] < 0.0) {
                        segments.push([crossings[0], crossings[3]]);
                        segments.push([crossings[1], crossings[2]]);
                    } else {
                        segments.push([crossings[0], crossings[1]]);
                        segments.push([crossings[2], crossings[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    let contour = chain_segments(segments);
    Ok(RegimeScan {
        rho1,
        rho2,
        lambda4,
        contour,
        contour_tol: CONTOUR_TOL,
    })
}

/// Regula falsi (Illinois variant) on the segment `a -> b`, started from the
/// linear interpolant of the corner values.
fn refine_crossing(params: &TrafficParams, a: [f64; 2], b: [f64; 2], fa: f64, fb: f64) -> [f64; 2] {
    let point = |t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let (mut t0, mut t1, mut f0, mut f1) = (0.0, 1.0, fa, fb);
    let mut side = 0i8;
    let mut best = point(fa / (fa - fb));
    for _ in 0..100 {
        let t = (t0 * f1 - t1 * f0) / (f1 - f0);
        let p = point(t);
        best = p;
        // Interior of a feasible cell edge is feasible (occupancy is linear).
        let f = lambda4_at(p, params).unwrap_or(0.0);
        if f.abs() < 0.1 * CONTOUR_TOL {
            break;
        }
        if (f < 0.0) == (f0 < 0.0) {
            t0 = t;
            f0 = f;
            if side == -1 {
                f1 *= 0.5;
            }
            side = -1;
        } else {
            t1 = t;
            f1 = f;
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
    }
    best
}

fn chain_segments(mut segments: Vec<[[f64; 2]; 2]>) -> Vec<Vec<[f64; 2]>> {
    let close = |p: [f64; 2], q: [f64; 2]| {
        let scale = p[0].abs().max(p[1].abs()).max(1e-12);
        (p[0] - q[0]).abs() <= 1e-9 * scale && (p[1] - q[1]).abs() <= 1e-9 * scale
    };
    let mut lines = Vec::new();
    while let Some([a, b]) = segments.pop() {
        let mut line = alloc::collections::VecDeque::from([a, b]);
        loop {
            let front = line[0];
            let back = line[line.len() - 1];
            let found = segments.iter().position(|s| {
                close(s[0], back) || close(s[1], back) || close(s[0], front) || close(s[1], front)
            });
            let Some(k) = found else { break };
            let [p, q] = segments.swap_remove(k);
            if close(p, back) {
                line.push_back(q);
            } else if close(q, back) {
                line.push_back(p);
            } else if close(p, front) {
                line.push_front(q);
            } else {
                line.push_front(p);
            }
        }
        lines.push(line.into_iter().collect());
    }
    lines
}
