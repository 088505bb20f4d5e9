//! Coefficients of the target systems, for verification only.
//!
//! ```text
//! C-(x, xi) = S+-(x) L11(x, xi) + int_xi^x C-(x, s) L11(s, xi) ds
//! C+(x, xi) = S+-(x) K(x, xi)   + int_xi^x C-(x, s) K(s, xi) ds
//! D-(x, xi) = -N11(x, xi) S-+(xi) - int_xi^x N11(x, s) D-(s, xi) ds
//! D+(x, xi) = -M(x, xi) S-+(xi)   - int_xi^x M(x, s) D-(s, xi) ds
//! ```
//!
//! The Volterra equations for `C-` and `D-` are solved by successive
//! approximation with the trapezoid rule on the kernel grid.

use alloc::vec::Vec;

use super::controller::ControllerKernels;
use super::grid::{TriField, TriangularGrid};
use super::observer::ObserverKernels;
use super::converged;
use crate::error::{Error, Result};
use crate::riemann::{Couplings, KernelCoefficients};

#[derive(Debug, Clone, PartialEq)]
pub struct TargetCoefficients {
    /// `C+`, entry `[r][c]`.
    pub c_plus: [[TriField; 3]; 3],
    pub c_minus: [TriField; 3],
    pub d_plus: [[TriField; 3]; 3],
    pub d_minus: [TriField; 3],
    pub iterations: usize,
}

fn zeros3(g: TriangularGrid) -> [TriField; 3] {
    [TriField::zeros(g), TriField::zeros(g), TriField::zeros(g)]
}

fn zeros33(g: TriangularGrid) -> [[TriField; 3]; 3] {
    [zeros3(g), zeros3(g), zeros3(g)]
}

/// Trapezoid weight of node `k` on `[j, i]`.
#[inline]
fn tw(k: usize, j: usize, i: usize, h: f64) -> f64 {
    if k == j || k == i {
        0.5 * h
    } else {
        h
    }
}

fn sup3(f: &[TriField; 3]) -> f64 {
    f.iter().map(TriField::sup).fold(0.0, f64::max)
}

fn diff3(a: &[TriField; 3], b: &[TriField; 3]) -> f64 {
    (0..3).map(|c| a[c].max_diff(&b[c])).fold(0.0, f64::max)
}

pub fn target_coefficients<C: KernelCoefficients>(
    coeffs: &C,
    ctrl: &ControllerKernels,
    obs: &ObserverKernels,
    tol: f64,
    max_iter: usize,
) -> Result<TargetCoefficients> {
    let g = ctrl.grid;
    if obs.grid != g {
        return Err(Error::GridMismatch {
            kernel_length: g.length,
            field_length: obs.grid.length,
        });
    }
    let h = g.h;
    let nodes: Vec<Couplings> = (0..g.n).map(|i| coeffs.couplings_at(g.coord(i))).collect();
    let mut iterations = 0;

    // C-: for each x_i, a Volterra equation in xi.
    let mut cm = zeros3(g);
    for i in 0..g.n {
        for j in 0..=i {
            for r in 0..3 {
                cm[r].set(i, j, nodes[i].pm[r] * ctrl.l11.get(i, j));
            }
        }
    }
    let forcing = cm.clone();
    let mut done = false;
    for it in 1..=max_iter {
        let mut next = forcing.clone();
        for i in 0..g.n {
            for j in 0..i {
                for r in 0..3 {
                    let mut acc = 0.0;
                    for k in j..=i {
                        acc += tw(k, j, i, h) * cm[r].get(i, k) * ctrl.l11.get(k, j);
                    }
                    next[r].set(i, j, forcing[r].get(i, j) + acc);
                }
            }
        }
        let change = diff3(&next, &cm);
        cm = next;
        iterations = iterations.max(it);
        if converged(change, sup3(&cm), tol) {
            done = true;
            break;
        }
    }
    if !done {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            residual: f64::NAN,
        });
    }

    let mut cp = zeros33(g);
    for i in 0..g.n {
        for j in 0..=i {
            for r in 0..3 {
                for c in 0..3 {
                    let mut v = nodes[i].pm[r] * ctrl.k[c].get(i, j);
                    if j < i {
                        for k in j..=i {
                            v += tw(k, j, i, h) * cm[r].get(i, k) * ctrl.k[c].get(k, j);
                        }
                    }
                    cp[r][c].set(i, j, v);
                }
            }
        }
    }

    // D-: for each xi_j, a Volterra equation in x.
    let mut dm = zeros3(g);
    for i in 0..g.n {
        for j in 0..=i {
            for c in 0..3 {
                dm[c].set(i, j, -obs.n11.get(i, j) * nodes[j].mp[c]);
            }
        }
    }
    let forcing = dm.clone();
    done = false;
    for it in 1..=max_iter {
        let mut next = forcing.clone();
        for i in 0..g.n {
            for j in 0..i {
                for c in 0..3 {
                    let mut acc = 0.0;
                    for k in j..=i {
                        acc += tw(k, j, i, h) * obs.n11.get(i, k) * dm[c].get(k, j);
                    }
                    next[c].set(i, j, forcing[c].get(i, j) - acc);
                }
            }
        }
        let change = diff3(&next, &dm);
        dm = next;
        iterations = iterations.max(it);
        if converged(change, sup3(&dm), tol) {
            done = true;
            break;
        }
    }
    if !done {
        return Err(Error::NoConvergence {
            iterations: max_iter,
            residual: f64::NAN,
        });
    }

    let mut dp = zeros33(g);
    for i in 0..g.n {
        for j in 0..=i {
            for r in 0..3 {
                for c in 0..3 {
                    let mut v = -obs.m[r].get(i, j) * nodes[j].mp[c];
                    if j < i {
                        for k in j..=i {
                            v -= tw(k, j, i, h) * obs.m[r].get(i, k) * dm[c].get(k, j);
                        }
                    }
                    dp[r][c].set(i, j, v);
                }
            }
        }
    }

    Ok(TargetCoefficients {
        c_plus: cp,
        c_minus: cm,
        d_plus: dp,
        d_minus: dm,
        iterations,
    })
}

/// `C-` through the resolvent of `L11`: since `S+-(x)` does not depend on
/// the integration variable, `C-(x, xi) = S+-(x) R(x, xi)` with
/// `R = L11 + int R L11`. `R` is obtained by direct marching in `xi`
/// (implicit in the trapezoid end weight), with no iteration.
pub fn c_minus_resolvent<C: KernelCoefficients>(coeffs: &C, ctrl: &ControllerKernels) -> [TriField; 3] {
    let g = ctrl.grid;
    let h = g.h;
    let l = &ctrl.l11;
    let mut r = TriField::zeros(g);
    for i in 0..g.n {
        r.set(i, i, l.get(i, i));
        for j in (0..i).rev() {
            let mut acc = 0.5 * h * r.get(i, i) * l.get(i, j);
            for k in j + 1..i {
                acc += h * r.get(i, k) * l.get(k, j);
            }
            let v = (l.get(i, j) + acc) / (1.0 - 0.5 * h * l.get(j, j));
            r.set(i, j, v);
        }
    }
    let mut out = zeros3(g);
    for i in 0..g.n {
        let pm = coeffs.couplings_at(g.coord(i)).pm;
        for j in 0..=i {
            for c in 0..3 {
                out[c].set(i, j, pm[c] * r.get(i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense_coupling_example, solve_controller_kernels, solve_observer_kernels, KernelSettings};
    use crate::model::{analyze, TrafficParams};
    use crate::riemann::{build_design_model, diagonalize, DesignCoefficients};

    fn reference_set() -> DesignCoefficients {
        let p = TrafficParams::congested_reference();
        let (_, lin) = analyze(TrafficParams::congested_reference_densities(), &p).unwrap();
        let dec = diagonalize(&lin).unwrap();
        build_design_model(&dec, &lin, &p.road).unwrap().coeffs
    }

    fn solve(d: &DesignCoefficients, n: usize) -> (ControllerKernels, ObserverKernels, TargetCoefficients) {
        let s = KernelSettings::with_n(n);
        let k = solve_controller_kernels(d, &s).unwrap();
        let m = solve_observer_kernels(d, &s).unwrap();
        let t = target_coefficients(d, &k, &m, 1e-12, 200).unwrap();
        (k, m, t)
    }

    #[test]
    fn diagonal_values() {
        let d = dense_coupling_example(&reference_set());
        let (k, m, t) = solve(&d, 31);
        let g = k.grid;
        for i in 0..g.n {
            let x = g.coord(i);
            for r in 0..3 {
                let cm = d.jbar(r, 3, x) * k.l11.get(i, i);
                assert!((t.c_minus[r].get(i, i) - cm).abs() < 1e-15);
                for c in 0..3 {
                    let dp = -m.m[r].get(i, i) * d.jbar(3, c, x);
                    assert!((t.d_plus[r][c].get(i, i) - dp).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn resolvent_agrees() {
        let d = dense_coupling_example(&reference_set());
        let (k, _, t) = solve(&d, 41);
        let r = c_minus_resolvent(&d, &k);
        let scale = sup3(&t.c_minus);
        assert!(scale > 0.0);
        assert!(diff3(&r, &t.c_minus) < 1e-9 * scale);
    }

    #[test]
    fn ar_model_controller_target_vanishes() {
        let d = reference_set();
        let (_, _, t) = solve(&d, 21);
        assert!(sup3(&t.c_minus) < 1e-12);
        assert!(t.c_plus.iter().map(sup3).fold(0.0, f64::max) < 1e-12);
    }
}
