//! Backstepping kernels on the triangle `{0 <= xi <= x <= L}`.
//!
//! Controller kernels `K = (k11, k12, k13)` and `L11` solve
//!
//! ```text
//! lambda4 K_x + K_xi Lambda+ = -K S++(xi) - L11 S-+(xi)
//! lambda4 (L11_x + L11_xi)   = -K S+-(xi)
//! k1c(x, x) = S-+_c(x) / (lambda4 - lambda_c),  L11(x, 0) = K(x, 0) Lambda+ Q0 / mu
//! ```
//!
//! and observer kernels `M = (m11, m21, m31)^T`, `N11` solve
//!
//! ```text
//! Lambda+ M_x + lambda4 M_xi = S++(x) M + S+-(x) N11
//! lambda4 (N11_x + N11_xi)   = S-+(x) M
//! mc1(x, x) = S+-_c(x) / (lambda_c - lambda4),  N11(L, xi) = R1 M(L, xi)
//! ```
//!
//! `L11` and `N11` are eliminated along their diagonal characteristics, so
//! each solver iterates on the three remaining kernels only. Every `K` and
//! `M` characteristic starts on the diagonal, which keeps all quadrature
//! points inside the triangle.

mod controller;
mod grid;
mod observer;
mod residual;
mod target;

pub use controller::{solve_controller_kernels, solve_controller_kernels_marching, ControllerKernels};
pub use grid::{TriField, TriangularGrid};
pub use observer::{observer_from_swapped, solve_observer_kernels, ObserverGains, ObserverKernels};
pub use residual::{controller_residual, observer_residual, ControllerResidual, ObserverResidual};
pub use target::{c_minus_resolvent, target_coefficients, TargetCoefficients};

use nalgebra::{Matrix4, RowVector3, Vector3};

use crate::error::{Error, Result};
use crate::riemann::{Couplings, DesignCoefficients, KernelCoefficients};

/// Kernel solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSettings {
    /// Nodes per triangle edge.
    pub n: usize,
    /// Stop when the sup-norm change between iterates is at most
    /// `tol * sup|kernel|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Reject solutions whose sup-norm exceeds this bound.
    pub cap: f64,
}

impl Default for KernelSettings {
    fn default() -> Self {
        Self {
            n: 101,
            tol: 1e-8,
            max_iter: 200,
            cap: 1e8,
        }
    }
}

impl KernelSettings {
    pub fn with_n(n: usize) -> Self {
        Self {
            n,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidParameter {
                name: "kernel_n",
                value: self.n as f64,
                requirement: "at least 3 nodes per edge",
            });
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "kernel_tol",
                value: self.tol,
                requirement: "positive tolerance",
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "kernel_max_iter",
                value: 0.0,
                requirement: "at least one iteration",
            });
        }
        Ok(())
    }
}

/// Converged iff the change is zero or small against the iterate size.
pub(crate) fn converged(change: f64, size: f64, tol: f64) -> bool {
    change == 0.0 || change <= tol * size
}

/// Mirror image of a problem that turns the observer kernel equations into
/// controller kernel equations: `x' = L - xi`, `xi' = L - x`, couplings
/// transposed with `S+-` and `S-+` exchanged, and
/// `Q0' = mu Lambda+^-1 R1^T`. Then `M(x, xi) = -K'(L - xi, L - x)^T` and
/// `N11(x, xi) = -L11'(L - xi, L - x)`.
#[derive(Debug, Clone, Copy)]
pub struct Swapped<'a, C>(pub &'a C);

impl<C: KernelCoefficients> KernelCoefficients for Swapped<'_, C> {
    fn length(&self) -> f64 {
        self.0.length()
    }

    fn lambda_plus(&self) -> [f64; 3] {
        self.0.lambda_plus()
    }

    fn mu(&self) -> f64 {
        self.0.mu()
    }

    fn couplings_at(&self, x: f64) -> Couplings {
        let c = self.0.couplings_at(self.0.length() - x);
        Couplings {
            pp: c.pp.transpose(),
            pm: c.mp.transpose(),
            mp: c.pm.transpose(),
        }
    }

    fn q0(&self) -> Vector3<f64> {
        let lam = self.0.lambda_plus();
        let r1 = self.0.r1();
        let mu = self.0.mu();
        Vector3::new(mu * r1[0] / lam[0], mu * r1[1] / lam[1], mu * r1[2] / lam[2])
    }

    fn r1(&self) -> RowVector3<f64> {
        let lam = self.0.lambda_plus();
        let q0 = self.0.q0();
        let mu = self.0.mu();
        RowVector3::new(lam[0] * q0[0] / mu, lam[1] * q0[1] / mu, lam[2] * q0[2] / mu)
    }
}

/// Same speeds, reflections and length as `base`, but with every source
/// coupling present and of fixed sign, plus non-trivial exponential rates.
/// Useful for exercising kernel terms that vanish for the AR model (whose
/// relaxation term leaves `S+-` identically zero).
pub fn dense_coupling_example(base: &DesignCoefficients) -> DesignCoefficients {
    #[rustfmt::skip]
    let couplings = Matrix4::new(
        0.0,     0.004,  -0.003,   0.006,
        -0.005,  0.0,     0.002,   0.004,
        0.003,   0.006,   0.0,    -0.005,
        0.007,  -0.004,   0.005,   0.0,
    );
    let scale = 1.0 / base.length;
    DesignCoefficients {
        couplings,
        rates: [0.4 * scale, -0.3 * scale, 0.2 * scale, -0.5 * scale],
        ..base.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{analyze, TrafficParams};
    use crate::riemann::{build_design_model, diagonalize};

    #[test]
    fn swap_is_an_involution_on_couplings() {
        let p = TrafficParams::congested_reference();
        let (_, lin) = analyze(TrafficParams::congested_reference_densities(), &p).unwrap();
        let dec = diagonalize(&lin).unwrap();
        let d = dense_coupling_example(&build_design_model(&dec, &lin, &p.road).unwrap().coeffs);
        let s = Swapped(&d);
        let ss = Swapped(&s);
        for &x in &[0.0, 250.0, 1000.0] {
            let a = d.couplings_at(x);
            let b = ss.couplings_at(x);
            assert!((a.pp - b.pp).amax() < 1e-15);
            assert!((a.pm - b.pm).amax() < 1e-15);
            assert!((a.mp - b.mp).amax() < 1e-15);
        }
        assert!((ss.q0() - d.q0()).amax() < 1e-14);
        assert!((ss.r1() - d.r1()).amax() < 1e-14);
    }
}
