//! Riemann coordinates and the design-model transform.
//!
//! The convection Jacobian is diagonalized (`w_bar = V^-1 u`), the Riemann
//! states are reordered so the positive speeds ascend (`v2* < lambda_3 <
//! v1*`), and each state is scaled by `exp(-J_ii x / lambda_i)` to remove
//! the diagonal of the source matrix. The result is the 3+1 design model
//!
//! ```text
//! w+_t + Lambda+ w+_x = S++(x) w+ + S+-(x) w4
//! w4_t - mu w4_x      = S-+(x) w+
//! w+(0) = Q0 w4(0),  w4(L) = R1 w+(L) + U_bar
//! ```
//!
//! with `mu = -lambda_4 > 0`.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, RowVector3, RowVector4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::math::exp;
use crate::model::{Linearization, Regime, RoadParams};

/// Riemann state feeding design state `k`: `w1 = w_bar2`, `w2 = w_bar3`,
/// `w3 = w_bar1`, `w4 = w_bar4` (zero-based).
pub const DESIGN_ORDER: [usize; 4] = [1, 2, 0, 3];

/// Relative eigenvalue-gap threshold below which the basis is rejected.
pub const EIGEN_GAP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    /// Eigenvectors of the convection Jacobian as columns, ordered like
    /// `lambdas`.
    pub v: Matrix4<f64>,
    pub v_inv: Matrix4<f64>,
    pub lambdas: [f64; 4],
    /// Source matrix in Riemann coordinates, `V^-1 J V`.
    pub j_hat: Matrix4<f64>,
    /// Flow weights of the eigenvectors, `kappa_i = v1* V_1i + rho1* V_2i +
    /// v2* V_3i + rho2* V_4i`.
    pub kappa: [f64; 4],
    /// Inlet reflection in Riemann coordinates.
    pub q0_hat: Vector3<f64>,
    /// Outlet reflection in Riemann coordinates.
    pub r1_hat: RowVector3<f64>,
}

/// Diagonalize with the default eigenvector gauge (unit columns, largest
/// entry positive).
pub fn diagonalize(lin: &Linearization) -> Result<SpectralDecomposition> {
    diagonalize_with_gauge(lin, [1.0; 4])
}

/// Like [`diagonalize`] but multiplies column `i` of `V` by `gauge[i] > 0`
/// after normalization. Physical outputs must not depend on the gauge.
pub fn diagonalize_with_gauge(lin: &Linearization, gauge: [f64; 4]) -> Result<SpectralDecomposition> {
    if lin.regime != Regime::Congested {
        return Err(Error::NotCongested(lin.regime));
    }
    for &g in &gauge {
        if !(g > 0.0) || !g.is_finite() {
            return Err(Error::InvalidParameter {
                name: "gauge",
                value: g,
                requirement: "positive finite column scale",
            });
        }
    }
    let lambdas = lin.lambdas;
    let scale = lambdas.iter().fold(0.0_f64, |m, l| m.max(l.abs()));
    let mut gap = f64::INFINITY;
    for i in 0..4 {
        for j in i + 1..4 {
            gap = gap.min((lambdas[i] - lambdas[j]).abs());
        }
    }
    let threshold = EIGEN_GAP_TOL * scale;
    if !(gap > threshold) {
        return Err(Error::NearDefectiveEigenbasis { gap, threshold });
    }

    // Cross-check the closed forms against a general eigen-solver.
    let numeric = lin.jac_x.eigenvalues().ok_or(Error::EigenSolverFailed)?;
    for &l in &lambdas {
        let nearest = numeric
            .iter()
            .copied()
            .min_by(|a, b| (a - l).abs().total_cmp(&(b - l).abs()))
            .ok_or(Error::EigenSolverFailed)?;
        if (nearest - l).abs() > 1e-9 * scale {
            return Err(Error::EigenvalueMismatch {
                numeric: nearest,
                closed_form: l,
            });
        }
    }

    let mut v = Matrix4::zeros();
    for (k, &l) in lambdas.iter().enumerate() {
        let col = null_vector(&(lin.jac_x - Matrix4::identity() * l));
        v.set_column(k, &(col * gauge[k]));
    }
    let v_inv = v.try_inverse().ok_or(Error::NearDefectiveEigenbasis { gap, threshold })?;
    let j_hat = v_inv * lin.jac_src * v;

    let eq = &lin.equilibrium;
    let flow = RowVector4::new(eq.v_star[0], eq.rho_star[0], eq.v_star[1], eq.rho_star[1]);
    let kappa_row = flow * v;
    let kappa = [kappa_row[0], kappa_row[1], kappa_row[2], kappa_row[3]];
    let kappa_scale = kappa.iter().fold(0.0_f64, |m, k| m.max(k.abs()));
    if !(kappa[3].abs() > 1e-12 * kappa_scale) {
        return Err(Error::SingularKappa4(kappa[3]));
    }

    // Inlet: rho1 = 0, rho2 = 0 and zero total flow, i.e. rows 1 and 3 of V
    // and the kappa row, split into the w_bar1..3 block and the w_bar4 column.
    #[rustfmt::skip]
    let b = Matrix3::new(
        v[(0, 0)], v[(0, 1)], v[(0, 2)],
        v[(2, 0)], v[(2, 1)], v[(2, 2)],
        kappa[0], kappa[1], kappa[2],
    );
    let c = Vector3::new(v[(0, 3)], v[(2, 3)], kappa[3]);
    let q0_hat = -(b.try_inverse().ok_or(Error::SingularBoundarySystem)? * c);
    let r1_hat = RowVector3::new(kappa[0], kappa[1], kappa[2]) * (-1.0 / kappa[3]);

    Ok(SpectralDecomposition {
        v,
        v_inv,
        lambdas,
        j_hat,
        kappa,
        q0_hat,
        r1_hat,
    })
}

/// Unit-norm right null vector of a rank-deficient 4x4 matrix, sign chosen
/// so its largest-magnitude entry is positive.
fn null_vector(m: &Matrix4<f64>) -> Vector4<f64> {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("four singular values");
    let mut col: Vector4<f64> = v_t.row(k).transpose();
    col /= col.norm();
    let big = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
    if big < 0.0 {
        col = -col;
    }
    col
}

/// Source couplings of the design model evaluated at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Couplings {
    /// `S++(x)`, zero diagonal.
    pub pp: Matrix3<f64>,
    /// `S+-(x)`.
    pub pm: Vector3<f64>,
    /// `S-+(x)`.
    pub mp: RowVector3<f64>,
}

impl Couplings {
    pub fn zero() -> Self {
        Self {
            pp: Matrix3::zeros(),
            pm: Vector3::zeros(),
            mp: RowVector3::zeros(),
        }
    }
}

/// Coefficient interface shared by the kernel solvers. [`DesignCoefficients`]
/// implements it directly; [`crate::kernels::Swapped`] reflects a problem so
/// the observer kernels take the controller form.
pub trait KernelCoefficients {
    fn length(&self) -> f64;
    /// Positive speeds, ascending.
    fn lambda_plus(&self) -> [f64; 3];
    /// `-lambda_4 > 0`.
    fn mu(&self) -> f64;
    fn couplings_at(&self, x: f64) -> Couplings;
    fn q0(&self) -> Vector3<f64>;
    fn r1(&self) -> RowVector3<f64>;
}

/// The data of the design model: speeds, exponential couplings and the two
/// reflection matrices. Every coupling has the form
/// `J_bar_ij(x) = c_ij exp((rate_j - rate_i) x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignCoefficients {
    pub length: f64,
    /// `(v2*, lambda_3, v1*)`.
    pub lambda_plus: [f64; 3],
    pub mu: f64,
    /// `c_ij`: entries of `J_hat` permuted into design order. Diagonal unused.
    pub couplings: Matrix4<f64>,
    /// Exponential rates `J_hat_kk / lambda_k` in design order [1/m].
    pub rates: [f64; 4],
    /// Inlet reflection `Q0_bar`.
    pub q0: Vector3<f64>,
    /// Outlet reflection `R1_bar`.
    pub r1: RowVector3<f64>,
}

impl DesignCoefficients {
    /// `J_bar_ij(x)` with zero-based design indices; zero on the diagonal.
    pub fn jbar(&self, i: usize, j: usize, x: f64) -> f64 {
        if i == j {
            0.0
        } else {
            self.couplings[(i, j)] * exp((self.rates[j] - self.rates[i]) * x)
        }
    }

    pub fn sigma_pp(&self, x: f64) -> Matrix3<f64> {
        self.couplings_at(x).pp
    }

    pub fn sigma_pm(&self, x: f64) -> Vector3<f64> {
        self.couplings_at(x).pm
    }

    pub fn sigma_mp(&self, x: f64) -> RowVector3<f64> {
        self.couplings_at(x).mp
    }

    /// Copy with every source coupling removed.
    pub fn without_couplings(&self) -> Self {
        Self {
            couplings: Matrix4::zeros(),
            ..self.clone()
        }
    }

    /// Copy with both boundary reflections removed.
    pub fn without_reflections(&self) -> Self {
        Self {
            q0: Vector3::zeros(),
            r1: RowVector3::zeros(),
            ..self.clone()
        }
    }
}

impl KernelCoefficients for DesignCoefficients {
    fn length(&self) -> f64 {
        self.length
    }

    fn lambda_plus(&self) -> [f64; 3] {
        self.lambda_plus
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn couplings_at(&self, x: f64) -> Couplings {
        let e = [
            exp(self.rates[0] * x),
            exp(self.rates[1] * x),
            exp(self.rates[2] * x),
            exp(self.rates[3] * x),
        ];
        let c = &self.couplings;
        let j = |a: usize, b: usize| if a == b { 0.0 } else { c[(a, b)] * e[b] / e[a] };
        Couplings {
            pp: Matrix3::new(j(0, 0), j(0, 1), j(0, 2), j(1, 0), j(1, 1), j(1, 2), j(2, 0), j(2, 1), j(2, 2)),
            pm: Vector3::new(j(0, 3), j(1, 3), j(2, 3)),
            mp: RowVector3::new(j(3, 0), j(3, 1), j(3, 2)),
        }
    }

    fn q0(&self) -> Vector3<f64> {
        self.q0
    }

    fn r1(&self) -> RowVector3<f64> {
        self.r1
    }
}

/// `T(x)` and `T^-1(x)` between physical perturbations
/// `(rho1, v1, rho2, v2)` and design states `w`, plus the input scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedTransform {
    pub v: Matrix4<f64>,
    pub v_inv: Matrix4<f64>,
    /// Design-order exponential rates.
    pub rates: [f64; 4],
    pub length: f64,
    pub kappa4: f64,
}

impl CombinedTransform {
    /// `w = T^-1(x) u`: row `k` is `exp(-rate_k x)` times row
    /// `DESIGN_ORDER[k]` of `V^-1`.
    pub fn t_inv(&self, x: f64) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for k in 0..4 {
            let s = exp(-self.rates[k] * x);
            m.set_row(k, &(self.v_inv.row(DESIGN_ORDER[k]) * s));
        }
        m
    }

    /// `u = T(x) w`.
    pub fn t(&self, x: f64) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for k in 0..4 {
            let s = exp(self.rates[k] * x);
            m.set_column(k, &(self.v.column(DESIGN_ORDER[k]) * s));
        }
        m
    }

    /// First three rows of `T^-1(x)`.
    pub fn t_u_inv(&self, x: f64) -> Matrix3x4<f64> {
        self.t_inv(x).fixed_rows::<3>(0).into_owned()
    }

    /// Last row of `T^-1(x)`.
    pub fn t_l_inv(&self, x: f64) -> RowVector4<f64> {
        self.t_inv(x).row(3).into_owned()
    }

    /// `U = gain * U_bar` with `gain = kappa4 exp(rate_4 L)`.
    pub fn input_gain(&self) -> f64 {
        self.kappa4 * exp(self.rates[3] * self.length)
    }

    pub fn to_design(&self, x: f64, state: &Vector4<f64>) -> Result<Vector4<f64>> {
        self.check_x(x)?;
        Ok(self.t_inv(x) * state)
    }

    pub fn to_physical(&self, x: f64, w: &Vector4<f64>) -> Result<Vector4<f64>> {
        self.check_x(x)?;
        Ok(self.t(x) * w)
    }

    fn check_x(&self, x: f64) -> Result<()> {
        let slack = 1e-12 * self.length;
        if x >= -slack && x <= self.length + slack {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x, length: self.length })
        }
    }
}

/// Design model together with the transform back to physical variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignModel {
    pub coeffs: DesignCoefficients,
    pub transform: CombinedTransform,
    /// Characteristic speeds `lambda_1..lambda_4` of the linearization.
    pub lambdas: [f64; 4],
}

pub fn build_design_model(dec: &SpectralDecomposition, lin: &Linearization, road: &RoadParams) -> Result<DesignModel> {
    let [v1, v2] = lin.equilibrium.v_star;
    if !(v1 > v2) {
        return Err(Error::OrderingViolation { v1, v2 });
    }
    let lambdas = dec.lambdas;
    let rates_riemann = [
        dec.j_hat[(0, 0)] / lambdas[0],
        dec.j_hat[(1, 1)] / lambdas[1],
        dec.j_hat[(2, 2)] / lambdas[2],
        dec.j_hat[(3, 3)] / lambdas[3],
    ];
    let rates = DESIGN_ORDER.map(|k| rates_riemann[k]);
    let mut couplings = Matrix4::zeros();
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                couplings[(i, j)] = dec.j_hat[(DESIGN_ORDER[i], DESIGN_ORDER[j])];
            }
        }
    }
    // Q0_bar = P^-1 Q0_hat with P the cyclic permutation taking
    // (w1, w2, w3) to (w_bar1, w_bar2, w_bar3).
    let q0 = Vector3::new(dec.q0_hat[1], dec.q0_hat[2], dec.q0_hat[0]);
    let length = road.length;
    let r1 = RowVector3::new(
        dec.r1_hat[1] * exp((rates[0] - rates[3]) * length),
        dec.r1_hat[2] * exp((rates[1] - rates[3]) * length),
        dec.r1_hat[0] * exp((rates[2] - rates[3]) * length),
    );

    Ok(DesignModel {
        coeffs: DesignCoefficients {
            length,
            lambda_plus: [lambdas[1], lambdas[2], lambdas[0]],
            mu: -lambdas[3],
            couplings,
            rates,
            q0,
            r1,
        },
        transform: CombinedTransform {
            v: dec.v,
            v_inv: dec.v_inv,
            rates,
            length,
            kappa4: dec.kappa[3],
        },
        lambdas,
    })
}

impl DesignModel {
    /// Physical flow perturbation `U` [veh/s] to the design input.
    pub fn input_to_design(&self, u: f64) -> f64 {
        u / self.transform.input_gain()
    }

    pub fn input_to_physical(&self, u_bar: f64) -> f64 {
        u_bar * self.transform.input_gain()
    }

    pub fn length(&self) -> f64 {
        self.coeffs.length
    }

    /// Same transform, different coefficients (used to switch couplings or
    /// reflections off in experiments).
    pub fn with_coefficients(&self, coeffs: DesignCoefficients) -> Self {
        Self {
            coeffs,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{analyze, TrafficParams};

    fn setup() -> (Linearization, SpectralDecomposition, DesignModel) {
        let p = TrafficParams::congested_reference();
        let (_, lin) = analyze(TrafficParams::congested_reference_densities(), &p).unwrap();
        let dec = diagonalize(&lin).unwrap();
        let design = build_design_model(&dec, &lin, &p.road).unwrap();
        (lin, dec, design)
    }

    fn max_abs(m: &Matrix4<f64>) -> f64 {
        m.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
    }

    #[test]
    fn spectral_residuals() {
        let (lin, dec, _) = setup();
        let diag = Matrix4::from_diagonal(&Vector4::from(dec.lambdas));
        let res = lin.jac_x * dec.v - dec.v * diag;
        assert!(max_abs(&res) < 1e-9 * max_abs(&lin.jac_x));
        let sim = dec.v_inv * lin.jac_x * dec.v - diag;
        assert!(max_abs(&sim) < 1e-9 * max_abs(&lin.jac_x));
        assert!(max_abs(&(dec.v * dec.v_inv - Matrix4::identity())) < 1e-10);
        for k in 0..4 {
            assert!((dec.v.column(k).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inlet_system_reproduced() {
        let (_, dec, _) = setup();
        let v = &dec.v;
        let k = dec.kappa;
        #[rustfmt::skip]
        let b = Matrix3::new(
            v[(0, 0)], v[(0, 1)], v[(0, 2)],
            v[(2, 0)], v[(2, 1)], v[(2, 2)],
            k[0], k[1], k[2],
        );
        let rhs = -Vector3::new(v[(0, 3)], v[(2, 3)], k[3]);
        assert!((b * dec.q0_hat - rhs).amax() < 1e-10);
    }

    #[test]
    fn gauge_leaves_source_diagonal() {
        let (lin, dec, _) = setup();
        let g = diagonalize_with_gauge(&lin, [2.0, 0.3, 5.0, 1.7]).unwrap();
        for i in 0..4 {
            assert!((g.j_hat[(i, i)] - dec.j_hat[(i, i)]).abs() < 1e-12);
        }
        // Gauge scales kappa column-wise.
        assert!((g.kappa[0] - 2.0 * dec.kappa[0]).abs() < 1e-12);
    }

    #[test]
    fn rejects_free_flow_and_bad_gauge() {
        let p = TrafficParams::congested_reference();
        let (_, lin) = analyze([0.015, 0.0075], &p).unwrap();
        assert!(matches!(diagonalize(&lin), Err(Error::NotCongested(Regime::Free))));
        let (_, lin) = analyze([0.15, 0.075], &p).unwrap();
        assert!(diagonalize_with_gauge(&lin, [1.0, -1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn rejects_wrong_class_order() {
        let mut p = TrafficParams::congested_reference();
        p.classes.swap(0, 1);
        let (_, lin) = analyze([0.075, 0.15 * 10.0 / 40.0], &p).unwrap();
        if lin.regime == Regime::Congested {
            let dec = diagonalize(&lin).unwrap();
            assert!(matches!(
                build_design_model(&dec, &lin, &p.road),
                Err(Error::OrderingViolation { .. })
            ));
        }
    }

    #[test]
    fn coupling_structure() {
        let (_, _, design) = setup();
        let c = &design.coeffs;
        for k in 0..10 {
            let x = c.length * k as f64 / 9.0;
            let s = c.sigma_pp(x);
            assert_eq!((s[(0, 0)], s[(1, 1)], s[(2, 2)]), (0.0, 0.0, 0.0));
            // Exponents cancel pairwise.
            let prod = c.jbar(0, 1, x) * c.jbar(1, 0, x);
            let expect = c.couplings[(0, 1)] * c.couplings[(1, 0)];
            assert!((prod - expect).abs() <= 1e-12 * expect.abs().max(1e-30));
        }
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(c.jbar(i, j, 0.0), c.couplings[(i, j)]);
                }
            }
        }
        assert!(c.lambda_plus[0] < c.lambda_plus[1] && c.lambda_plus[1] < c.lambda_plus[2]);
        assert!(c.mu > 0.0);
    }

    #[test]
    fn transform_inverse_pair() {
        let (_, _, design) = setup();
        let t = &design.transform;
        for k in 0..11 {
            let x = t.length * k as f64 / 10.0;
            let prod = t.t(x) * t.t_inv(x);
            assert!(max_abs(&(prod - Matrix4::identity())) < 1e-10, "x = {x}");
        }
        let s = Vector4::new(0.01, -1.0, 0.004, 0.5);
        let back = t.to_physical(300.0, &t.to_design(300.0, &s).unwrap()).unwrap();
        assert!((back - s).amax() < 1e-10 * s.amax());
        assert_eq!(t.to_design(10.0, &Vector4::zeros()).unwrap(), Vector4::zeros());
        assert!(t.to_design(t.length * 1.01, &s).is_err());
    }

    #[test]
    fn transform_matches_sequential_maps() {
        let (_, dec, design) = setup();
        let t = &design.transform;
        let s = Vector4::new(0.02, 0.3, -0.01, -0.7);
        let x = 420.0;
        let w_bar = dec.v_inv * s;
        let w = t.to_design(x, &s).unwrap();
        for k in 0..4 {
            let r = DESIGN_ORDER[k];
            let expect = (-dec.j_hat[(r, r)] / dec.lambdas[r] * x).exp() * w_bar[r];
            assert!((w[k] - expect).abs() < 1e-10 * expect.abs().max(1e-12));
        }
    }

    #[test]
    fn inlet_constraints_map_to_q0() {
        let (lin, _, design) = setup();
        let eq = lin.equilibrium;
        // rho1 = rho2 = 0 and v1 rho1* + v2 rho2* = 0.
        let s = Vector4::new(0.0, eq.rho_star[1], 0.0, -eq.rho_star[0]);
        let w = design.transform.to_design(0.0, &s).unwrap();
        let q = design.coeffs.q0 * w[3];
        for k in 0..3 {
            assert!((w[k] - q[k]).abs() < 1e-9 * w.amax());
        }
    }

    #[test]
    fn input_maps() {
        let (_, dec, design) = setup();
        assert_eq!(design.input_to_design(0.0), 0.0);
        let u = 0.37;
        assert!((design.input_to_physical(design.input_to_design(u)) - u).abs() < 1e-12);
        let g = dec.kappa[3] * (dec.j_hat[(3, 3)] / dec.lambdas[3] * design.length()).exp();
        assert!((design.transform.input_gain() - g).abs() < 1e-14);
    }
}
