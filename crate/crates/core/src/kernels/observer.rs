use alloc::vec::Vec;

use nalgebra::Vector3;

use super::controller::{ControllerKernels, Setup};
use super::grid::{interp_uniform, Cell, TriField, TriangularGrid};
use super::{converged, KernelSettings};
use crate::error::{Error, Result};
use crate::math::ceil;
use crate::riemann::{Couplings, KernelCoefficients};

/// Observer kernels `M = (m11, m21, m31)^T` and `N11` on the triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverKernels {
    pub grid: TriangularGrid,
    pub m: [TriField; 3],
    pub n11: TriField,
    pub iterations: usize,
    pub change: f64,
}

/// Output-injection gains `P+(x) = mu M(x, 0)` and `P11-(x) = mu N11(x, 0)`
/// sampled at the kernel grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverGains {
    pub h: f64,
    pub p_plus: [Vec<f64>; 3],
    pub p_minus: Vec<f64>,
}

impl ObserverGains {
    pub fn at(&self, x: f64) -> (Vector3<f64>, f64) {
        (
            Vector3::new(
                interp_uniform(&self.p_plus[0], self.h, x),
                interp_uniform(&self.p_plus[1], self.h, x),
                interp_uniform(&self.p_plus[2], self.h, x),
            ),
            interp_uniform(&self.p_minus, self.h, x),
        )
    }
}

impl ObserverKernels {
    pub fn m_at(&self, x: f64, xi: f64) -> Vector3<f64> {
        let cell = Cell::locate(&self.grid, x, xi);
        Vector3::new(
            cell.apply(|i, j| self.m[0].get(i, j)),
            cell.apply(|i, j| self.m[1].get(i, j)),
            cell.apply(|i, j| self.m[2].get(i, j)),
        )
    }

    pub fn n11_at(&self, x: f64, xi: f64) -> f64 {
        self.n11.eval(x, xi)
    }

    pub fn sup(&self) -> f64 {
        self.m.iter().map(TriField::sup).fold(self.n11.sup(), f64::max)
    }

    pub fn gains(&self, mu: f64) -> ObserverGains {
        let n = self.grid.n;
        let col = |f: &TriField| (0..n).map(|i| mu * f.get(i, 0)).collect::<Vec<_>>();
        ObserverGains {
            h: self.grid.h,
            p_plus: [col(&self.m[0]), col(&self.m[1]), col(&self.m[2])],
            p_minus: col(&self.n11),
        }
    }
}

fn diag_m<C: KernelCoefficients>(s: &Setup<'_, C>, comp: usize, cp: &Couplings) -> f64 {
    cp.pm[comp] / (s.lam[comp] + s.mu)
}

/// `N11` from `M` along `xi - x = const`, starting from the top edge.
fn n_from_m<C: KernelCoefficients>(s: &Setup<'_, C>, m: &[TriField; 3]) -> TriField {
    let g = s.grid;
    let r1 = s.c.r1();
    let top = g.n - 1;
    let src = |i: usize, j: usize| -> f64 { (0..3).map(|c| s.nodes[i].mp[c] * m[c].get(i, j)).sum() };
    let half = 0.5 * g.h / s.mu;
    let mut out = TriField::zeros(g);
    for j in 0..=top {
        out.set(top, j, (0..3).map(|c| r1[c] * m[c].get(top, j)).sum());
    }
    for i in (0..top).rev() {
        for j in 0..=i {
            let v = out.get(i + 1, j + 1) + half * (src(i, j) + src(i + 1, j + 1));
            out.set(i, j, v);
        }
    }
    out
}

fn sweep<C: KernelCoefficients>(s: &Setup<'_, C>, m: &[TriField; 3], nf: &TriField) -> [TriField; 3] {
    let g = s.grid;
    let mut out = [TriField::zeros(g), TriField::zeros(g), TriField::zeros(g)];
    for i in 0..g.n {
        let x = g.coord(i);
        for c in 0..3 {
            out[c].set(i, i, diag_m(s, c, &s.nodes[i]));
        }
        for j in 0..i {
            let xi = g.coord(j);
            for c in 0..3 {
                let speed = s.lam[c] + s.mu;
                let s_star = (x - xi) / speed;
                let y = (s.mu * x + s.lam[c] * xi) / speed;
                let steps = (ceil((x - xi) / g.h) as usize).max(1);
                let ds = s_star / steps as f64;
                let mut acc = 0.0;
                for q in 0..=steps {
                    let sigma = q as f64 * ds;
                    let px = y + s.lam[c] * sigma;
                    let pxi = y - s.mu * sigma;
                    let cp = s.c.couplings_at(px);
                    let cell = Cell::locate(&g, px, pxi);
                    let mut rhs = cp.pm[c] * cell.apply(|a, b| nf.get(a, b));
                    for a in 0..3 {
                        rhs += cp.pp[(c, a)] * cell.apply(|u, v| m[a].get(u, v));
                    }
                    let w = if q == 0 || q == steps { 0.5 } else { 1.0 };
                    acc += w * rhs;
                }
                let foot = diag_m(s, c, &s.c.couplings_at(y));
                out[c].set(i, j, foot + ds * acc);
            }
        }
    }
    out
}

/// Successive approximation on the reduced `M` system in its own
/// orientation; `N11` is recomputed from the final `M`.
pub fn solve_observer_kernels<C: KernelCoefficients>(coeffs: &C, settings: &KernelSettings) -> Result<ObserverKernels> {
    let s = Setup::new(coeffs, settings)?;
    let g = s.grid;
    let mut m = [TriField::zeros(g), TriField::zeros(g), TriField::zeros(g)];
    let mut nf = TriField::zeros(g);
    let mut change = f64::INFINITY;
    for it in 1..=settings.max_iter {
        let next = sweep(&s, &m, &nf);
        change = (0..3).map(|c| next[c].max_diff(&m[c])).fold(0.0, f64::max);
        let size = next.iter().map(TriField::sup).fold(0.0, f64::max);
        m = next;
        nf = n_from_m(&s, &m);
        if !change.is_finite() {
            break;
        }
        if converged(change, size, settings.tol) {
            let out = ObserverKernels {
                grid: g,
                m,
                n11: nf,
                iterations: it,
                change,
            };
            let sup = out.sup();
            if !(sup <= settings.cap) {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: sup,
                });
            }
            return Ok(out);
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: change,
    })
}

/// Observer kernels from controller kernels of the [`super::Swapped`]
/// problem: `M(x, xi) = -K'(L - xi, L - x)^T`, `N11 = -L11'(L - xi, L - x)`.
pub fn observer_from_swapped(k: &ControllerKernels) -> ObserverKernels {
    let g = k.grid;
    let top = g.n - 1;
    let mut m = [TriField::zeros(g), TriField::zeros(g), TriField::zeros(g)];
    let mut n11 = TriField::zeros(g);
    for i in 0..g.n {
        for j in 0..=i {
            let (a, b) = (top - j, top - i);
            for c in 0..3 {
                m[c].set(i, j, -k.k[c].get(a, b));
            }
            n11.set(i, j, -k.l11.get(a, b));
        }
    }
    ObserverKernels {
        grid: g,
        m,
        n11,
        iterations: k.iterations,
        change: k.change,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{dense_coupling_example, solve_controller_kernels, Swapped};
    use crate::model::{analyze, TrafficParams};
    use crate::riemann::{build_design_model, diagonalize, DesignCoefficients};

    fn reference_set() -> DesignCoefficients {
        let p = TrafficParams::congested_reference();
        let (_, lin) = analyze(TrafficParams::congested_reference_densities(), &p).unwrap();
        let dec = diagonalize(&lin).unwrap();
        build_design_model(&dec, &lin, &p.road).unwrap().coeffs
    }

    #[test]
    fn boundary_relations_hold() {
        let d = dense_coupling_example(&reference_set());
        let ok = solve_observer_kernels(&d, &KernelSettings::with_n(41)).unwrap();
        let g = ok.grid;
        let top = g.n - 1;
        for i in 0..g.n {
            let x = g.coord(i);
            for c in 0..3 {
                let expect = d.jbar(c, 3, x) / (d.lambda_plus[c] + d.mu);
                assert!((ok.m[c].get(i, i) - expect).abs() < 1e-14);
            }
            let r: f64 = (0..3).map(|c| d.r1[c] * ok.m[c].get(top, i)).sum();
            assert!((ok.n11.get(top, i) - r).abs() < 1e-14);
        }
        let gains = ok.gains(d.mu);
        assert_eq!(gains.p_minus[5], d.mu * ok.n11.get(5, 0));
        assert_eq!(gains.p_plus[1][7], d.mu * ok.m[1].get(7, 0));
    }

    #[test]
    fn ar_model_observer_kernels_vanish() {
        // The relaxation source leaves S+- at round-off level, so M and N11
        // vanish with it.
        let d = reference_set();
        let ok = solve_observer_kernels(&d, &KernelSettings::with_n(31)).unwrap();
        assert!(ok.sup() < 1e-12);
        let z = solve_observer_kernels(&d.without_couplings(), &KernelSettings::with_n(31)).unwrap();
        assert_eq!(z.sup(), 0.0);
        assert!(z.gains(d.mu).p_minus.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn swap_duality() {
        let d = dense_coupling_example(&reference_set());
        let mut prev = f64::INFINITY;
        for &n in &[26, 51] {
            let s = KernelSettings::with_n(n);
            let direct = solve_observer_kernels(&d, &s).unwrap();
            let swapped = observer_from_swapped(&solve_controller_kernels(&Swapped(&d), &s).unwrap());
            let diff = (0..3)
                .map(|c| direct.m[c].max_diff(&swapped.m[c]))
                .fold(direct.n11.max_diff(&swapped.n11), f64::max);
            assert!(diff < 1e-6 * direct.sup().max(1.0) || diff < prev, "n {n}: {diff}");
            prev = diff;
        }
    }
}
