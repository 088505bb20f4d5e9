//! Discrete residuals of the kernel equations: backward difference in `x`,
//! forward difference in `xi`, evaluated at every node below the diagonal.
//! For smooth kernels they are `O(h)`.

use super::controller::ControllerKernels;
use super::observer::ObserverKernels;
use crate::riemann::KernelCoefficients;

/// Sup-norm residuals of the controller kernel system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerResidual {
    /// `lambda4 K_x + K_xi Lambda+ + K S++ + L11 S-+`.
    pub k_pde: f64,
    /// `lambda4 (L11_x + L11_xi) + K S+-`.
    pub l_pde: f64,
    /// Diagonal data of `K`.
    pub diagonal: f64,
    /// `L11(x, 0) - K(x, 0) Lambda+ Q0 / mu`.
    pub base: f64,
}

/// Sup-norm residuals of the observer kernel system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverResidual {
    /// `Lambda+ M_x + lambda4 M_xi - S++ M - S+- N11`.
    pub m_pde: f64,
    /// `lambda4 (N11_x + N11_xi) - S-+ M`.
    pub n_pde: f64,
    pub diagonal: f64,
    /// `N11(L, xi) - R1 M(L, xi)`.
    pub top: f64,
}

pub fn controller_residual<C: KernelCoefficients>(coeffs: &C, k: &ControllerKernels) -> ControllerResidual {
    let g = k.grid;
    let h = g.h;
    let lam = coeffs.lambda_plus();
    let mu = coeffs.mu();
    let q0 = coeffs.q0();
    let mut out = ControllerResidual {
        k_pde: 0.0,
        l_pde: 0.0,
        diagonal: 0.0,
        base: 0.0,
    };
    for i in 0..g.n {
        let cx = coeffs.couplings_at(g.coord(i));
        for c in 0..3 {
            let expect = cx.mp[c] / (-mu - lam[c]);
            out.diagonal = out.diagonal.max((k.k[c].get(i, i) - expect).abs());
        }
        let lb: f64 = (0..3).map(|c| k.k[c].get(i, 0) * lam[c] * q0[c] / mu).sum();
        out.base = out.base.max((k.l11.get(i, 0) - lb).abs());
        for j in 0..i {
            let cp = coeffs.couplings_at(g.coord(j));
            let kv = |a: usize| k.k[a].get(i, j);
            let lv = k.l11.get(i, j);
            for c in 0..3 {
                let dx = (k.k[c].get(i, j) - k.k[c].get(i - 1, j)) / h;
                let dxi = (k.k[c].get(i, j + 1) - k.k[c].get(i, j)) / h;
                let src: f64 = (0..3).map(|a| kv(a) * cp.pp[(a, c)]).sum::<f64>() + lv * cp.mp[c];
                out.k_pde = out.k_pde.max((-mu * dx + lam[c] * dxi + src).abs());
            }
            let dx = (lv - k.l11.get(i - 1, j)) / h;
            let dxi = (k.l11.get(i, j + 1) - lv) / h;
            let src: f64 = (0..3).map(|a| kv(a) * cp.pm[a]).sum();
            out.l_pde = out.l_pde.max((-mu * (dx + dxi) + src).abs());
        }
    }
    out
}

pub fn observer_residual<C: KernelCoefficients>(coeffs: &C, m: &ObserverKernels) -> ObserverResidual {
    let g = m.grid;
    let h = g.h;
    let lam = coeffs.lambda_plus();
    let mu = coeffs.mu();
    let r1 = coeffs.r1();
    let top = g.n - 1;
    let mut out = ObserverResidual {
        m_pde: 0.0,
        n_pde: 0.0,
        diagonal: 0.0,
        top: 0.0,
    };
    for i in 0..g.n {
        let cx = coeffs.couplings_at(g.coord(i));
        for c in 0..3 {
            let expect = cx.pm[c] / (lam[c] + mu);
            out.diagonal = out.diagonal.max((m.m[c].get(i, i) - expect).abs());
        }
        let nt: f64 = (0..3).map(|c| r1[c] * m.m[c].get(top, i)).sum();
        out.top = out.top.max((m.n11.get(top, i) - nt).abs());
        for j in 0..i {
            let mv = |a: usize| m.m[a].get(i, j);
            let nv = m.n11.get(i, j);
            for c in 0..3 {
                let dx = (m.m[c].get(i, j) - m.m[c].get(i - 1, j)) / h;
                let dxi = (m.m[c].get(i, j + 1) - m.m[c].get(i, j)) / h;
                let src: f64 = (0..3).map(|a| cx.pp[(c, a)] * mv(a)).sum::<f64>() + cx.pm[c] * nv;
                out.m_pde = out.m_pde.max((lam[c] * dx - mu * dxi - src).abs());
            }
            let dx = (nv - m.n11.get(i - 1, j)) / h;
            let dxi = (m.n11.get(i, j + 1) - nv) / h;
            let src: f64 = (0..3).map(|a| cx.mp[a] * mv(a)).sum();
            out.n_pde = out.n_pde.max((-mu * (dx + dxi) - src).abs());
        }
    }
    out
}
