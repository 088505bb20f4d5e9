use crate::model::Regime;

/// Errors raised by the numerical pipeline.
///
/// Every variant carries the offending value so messages can name it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {requirement}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        requirement: &'static str,
    },
    #[error("area occupancy {0} outside [0, 1]")]
    OccupancyOutOfRange(f64),
    #[error(
        "infeasible equilibrium: class {class} speed {speed} m/s at area occupancy {occupancy} (needs v* > 0 and AO < min AO_max)"
    )]
    InfeasibleEquilibrium {
        class: usize,
        speed: f64,
        occupancy: f64,
    },
    #[error("degenerate characteristic speeds {lambdas:?}: lambda_1..lambda_3 must exceed {tol}")]
    DegenerateSpeeds { lambdas: [f64; 4], tol: f64 },
    #[error("equilibrium is not congested (regime {0:?}); the design needs lambda_4 < 0")]
    NotCongested(Regime),
    #[error("eigenvalue solver failed on the convection Jacobian")]
    EigenSolverFailed,
    #[error("numerical eigenvalue {numeric} does not match closed-form speed {closed_form}")]
    EigenvalueMismatch { numeric: f64, closed_form: f64 },
    #[error("near-defective eigenbasis: min eigenvalue gap {gap} below {threshold}")]
    NearDefectiveEigenbasis { gap: f64, threshold: f64 },
    #[error("kappa_4 = {0} is numerically zero")]
    SingularKappa4(f64),
    #[error("inlet boundary system (rows v_1i, v_3i, kappa_i) is singular")]
    SingularBoundarySystem,
    #[error("class ordering violated: v1* = {v1} m/s must exceed v2* = {v2} m/s")]
    OrderingViolation { v1: f64, v2: f64 },
    #[error("no convergence after {iterations} iterations (last change {residual})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("grid mismatch: kernel length {kernel_length} m vs field length {field_length} m")]
    GridMismatch {
        kernel_length: f64,
        field_length: f64,
    },
    #[error("CFL violation: Courant number {courant} exceeds 1")]
    CflViolation { courant: f64 },
    #[error("non-finite state at t = {time} s")]
    NonFiniteState { time: f64 },
    #[error("position {x} m outside [0, {length}] m")]
    OutOfDomain { x: f64, length: f64 },
}

pub type Result<T> = core::result::Result<T, Error>;
