use alloc::vec;
use alloc::vec::Vec;

use nalgebra::RowVector3;

use super::grid::{interp_uniform, Cell, TriField, TriangularGrid};
use super::{converged, KernelSettings};
use crate::error::{Error, Result};
use crate::math::ceil;
use crate::riemann::{Couplings, KernelCoefficients};

/// Controller kernels `K = (k11, k12, k13)` and `L11` on the triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerKernels {
    pub grid: TriangularGrid,
    pub k: [TriField; 3],
    pub l11: TriField,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub change: f64,
    /// Quadrature points that had to be projected back onto the triangle.
    pub clamped: usize,
}

impl ControllerKernels {
    pub fn k_at(&self, x: f64, xi: f64) -> RowVector3<f64> {
        let cell = Cell::locate(&self.grid, x, xi);
        RowVector3::new(
            cell.apply(|i, j| self.k[0].get(i, j)),
            cell.apply(|i, j| self.k[1].get(i, j)),
            cell.apply(|i, j| self.k[2].get(i, j)),
        )
    }

    pub fn l11_at(&self, x: f64, xi: f64) -> f64 {
        self.l11.eval(x, xi)
    }

    /// `K(L, xi)` and `L11(L, xi)` linearly interpolated at `xi`.
    pub fn top_at(&self, xi: f64) -> (RowVector3<f64>, f64) {
        let top = self.grid.n - 1;
        let h = self.grid.h;
        (
            RowVector3::new(
                interp_uniform(self.k[0].row(top), h, xi),
                interp_uniform(self.k[1].row(top), h, xi),
                interp_uniform(self.k[2].row(top), h, xi),
            ),
            interp_uniform(self.l11.row(top), h, xi),
        )
    }

    pub fn sup(&self) -> f64 {
        self.k.iter().map(TriField::sup).fold(self.l11.sup(), f64::max)
    }
}

pub(crate) struct Setup<'a, C> {
    pub c: &'a C,
    pub grid: TriangularGrid,
    pub lam: [f64; 3],
    pub mu: f64,
    /// Couplings at the grid coordinates.
    pub nodes: Vec<Couplings>,
}

impl<'a, C: KernelCoefficients> Setup<'a, C> {
    pub fn new(c: &'a C, settings: &KernelSettings) -> Result<Self> {
        settings.validate()?;
        let grid = TriangularGrid::new(settings.n, c.length())?;
        let nodes = (0..grid.n).map(|i| c.couplings_at(grid.coord(i))).collect();
        Ok(Self {
            c,
            grid,
            lam: c.lambda_plus(),
            mu: c.mu(),
            nodes,
        })
    }
}

fn zero_fields(grid: TriangularGrid) -> [TriField; 3] {
    [TriField::zeros(grid), TriField::zeros(grid), TriField::zeros(grid)]
}

fn diag_k<C: KernelCoefficients>(s: &Setup<'_, C>, comp: usize, cp: &Couplings) -> f64 {
    cp.mp[comp] / (-s.mu - s.lam[comp])
}

/// `L11` from `K` along `xi - x = const`, starting from the base relation.
fn l_from_k<C: KernelCoefficients>(s: &Setup<'_, C>, k: &[TriField; 3]) -> TriField {
    let g = s.grid;
    let q0 = s.c.q0();
    let base = [s.lam[0] * q0[0] / s.mu, s.lam[1] * q0[1] / s.mu, s.lam[2] * q0[2] / s.mu];
    let src = |i: usize, j: usize| -> f64 { (0..3).map(|c| k[c].get(i, j) * s.nodes[j].pm[c]).sum() };
    let half = 0.5 * g.h / s.mu;
    let mut l = TriField::zeros(g);
    for i in 0..g.n {
        l.set(i, 0, (0..3).map(|c| k[c].get(i, 0) * base[c]).sum());
        for j in 1..=i {
            let v = l.get(i - 1, j - 1) + half * (src(i, j) + src(i - 1, j - 1));
            l.set(i, j, v);
        }
    }
    l
}

/// One Picard sweep: integrate each `k1c` along its characteristic from
/// the diagonal using the previous iterate in the right-hand side.
fn sweep<C: KernelCoefficients>(s: &Setup<'_, C>, k: &[TriField; 3], l: &TriField) -> ([TriField; 3], usize) {
    let g = s.grid;
    let mut out = zero_fields(g);
    let mut clamped = 0;
    for i in 0..g.n {
        let x = g.coord(i);
        for c in 0..3 {
            out[c].set(i, i, diag_k(s, c, &s.nodes[i]));
        }
        for j in 0..i {
            let xi = g.coord(j);
            for c in 0..3 {
                let speed = s.lam[c] + s.mu;
                let s_star = (x - xi) / speed;
                let y = (s.lam[c] * x + s.mu * xi) / speed;
                let m = (ceil((x - xi) / g.h) as usize).max(1);
                let ds = s_star / m as f64;
                let mut acc = 0.0;
                for q in 0..=m {
                    let sigma = q as f64 * ds;
                    let px = y + s.mu * sigma;
                    let pxi = y - s.lam[c] * sigma;
                    if pxi < -1e-9 * g.h || pxi > px + 1e-9 * g.h {
                        clamped += 1;
                    }
                    let cp = s.c.couplings_at(pxi);
                    let cell = Cell::locate(&g, px, pxi);
                    let mut rhs = cell.apply(|a, b| l.get(a, b)) * cp.mp[c];
                    for a in 0..3 {
                        rhs += cell.apply(|u, v| k[a].get(u, v)) * cp.pp[(a, c)];
                    }
                    let w = if q == 0 || q == m { 0.5 } else { 1.0 };
                    acc += w * rhs;
                }
                let foot = diag_k(s, c, &s.c.couplings_at(y));
                out[c].set(i, j, foot + ds * acc);
            }
        }
    }
    (out, clamped)
}

fn finish(
    grid: TriangularGrid,
    k: [TriField; 3],
    l11: TriField,
    iterations: usize,
    change: f64,
    clamped: usize,
    cap: f64,
) -> Result<ControllerKernels> {
    let out = ControllerKernels {
        grid,
        k,
        l11,
        iterations,
        change,
        clamped,
    };
    let ok = out.k.iter().all(TriField::is_finite) && out.l11.is_finite();
    let sup = out.sup();
    if !ok || sup > cap {
        return Err(Error::NoConvergence {
            iterations,
            residual: sup,
        });
    }
    Ok(out)
}

/// Successive approximation on the reduced `K` system; `L11` is recomputed
/// from the final `K`, so its base relation holds to round-off.
pub fn solve_controller_kernels<C: KernelCoefficients>(
    coeffs: &C,
    settings: &KernelSettings,
) -> Result<ControllerKernels> {
    let s = Setup::new(coeffs, settings)?;
    let mut k = zero_fields(s.grid);
    let mut l = TriField::zeros(s.grid);
    let mut change = f64::INFINITY;
    for it in 1..=settings.max_iter {
        let (next, clamped) = sweep(&s, &k, &l);
        change = (0..3).map(|c| next[c].max_diff(&k[c])).fold(0.0, f64::max);
        let size = next.iter().map(TriField::sup).fold(0.0, f64::max);
        k = next;
        l = l_from_k(&s, &k);
        if !(change.is_finite()) {
            break;
        }
        if converged(change, size, settings.tol) {
            return finish(s.grid, k, l, it, change, clamped, settings.cap);
        }
    }
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: change,
    })
}

/// Independent route on the unreduced system: march in `x` one row at a
/// time with a Heun step along each `K` characteristic and the trapezoid
/// rule for `L11`. No iteration.
pub fn solve_controller_kernels_marching<C: KernelCoefficients>(
    coeffs: &C,
    settings: &KernelSettings,
) -> Result<ControllerKernels> {
    let s = Setup::new(coeffs, settings)?;
    let g = s.grid;
    let h = g.h;
    let q0 = coeffs.q0();
    let base = [s.lam[0] * q0[0] / s.mu, s.lam[1] * q0[1] / s.mu, s.lam[2] * q0[2] / s.mu];
    let mut k = zero_fields(g);
    let mut l = TriField::zeros(g);
    let rhs = |kv: [f64; 3], lv: f64, cp: &Couplings, c: usize| -> f64 {
        lv * cp.mp[c] + (0..3).map(|a| kv[a] * cp.pp[(a, c)]).sum::<f64>()
    };
    let src = |kv: [f64; 3], cp: &Couplings| -> f64 { (0..3).map(|c| kv[c] * cp.pm[c]).sum() };

    for c in 0..3 {
        k[c].set(0, 0, diag_k(&s, c, &s.nodes[0]));
    }
    l.set(0, 0, (0..3).map(|c| k[c].get(0, 0) * base[c]).sum());

    let mut foot_val = Vec::new();
    let mut foot_rhs = Vec::new();
    let mut step = Vec::new();
    for i in 1..g.n {
        let x = g.coord(i);
        let xp = g.coord(i - 1);
        let prev: [&[f64]; 3] = [k[0].row(i - 1), k[1].row(i - 1), k[2].row(i - 1)];
        let prev_l = l.row(i - 1);
        foot_val.clear();
        foot_rhs.clear();
        step.clear();
        // Predictor.
        let mut pred = vec![[0.0; 3]; i + 1];
        for j in 0..=i {
            let xi = g.coord(j);
            for c in 0..3 {
                let (val, r, ds) = if j == i {
                    (diag_k(&s, c, &s.nodes[i]), 0.0, 0.0)
                } else {
                    let ds_full = h / s.mu;
                    let fxi = xi + s.lam[c] * ds_full;
                    if fxi <= xp {
                        let kv = [
                            interp_uniform(prev[0], h, fxi),
                            interp_uniform(prev[1], h, fxi),
                            interp_uniform(prev[2], h, fxi),
                        ];
                        let lv = interp_uniform(prev_l, h, fxi);
                        let cp = coeffs.couplings_at(fxi);
                        (kv[c], rhs(kv, lv, &cp, c), ds_full)
                    } else {
                        let speed = s.lam[c] + s.mu;
                        let ds = (x - xi) / speed;
                        let y = (s.lam[c] * x + s.mu * xi) / speed;
                        let cp = coeffs.couplings_at(y);
                        let kv = [diag_k(&s, 0, &cp), diag_k(&s, 1, &cp), diag_k(&s, 2, &cp)];
                        let lv = prev_l[i - 1];
                        (kv[c], rhs(kv, lv, &cp, c), ds)
                    }
                };
                foot_val.push(val);
                foot_rhs.push(r);
                step.push(ds);
                pred[j][c] = val + ds * r;
            }
        }
        // L11 on the predicted row, then the corrector, then L11 again.
        let l_row = |kr: &[[f64; 3]]| -> Vec<f64> {
            let mut out = Vec::with_capacity(i + 1);
            out.push((0..3).map(|c| kr[0][c] * base[c]).sum());
            for j in 1..=i {
                let kprev = [k[0].get(i - 1, j - 1), k[1].get(i - 1, j - 1), k[2].get(i - 1, j - 1)];
                let v = l.get(i - 1, j - 1)
                    + 0.5 * h / s.mu * (src(kr[j], &s.nodes[j]) + src(kprev, &s.nodes[j - 1]));
                out.push(v);
            }
            out
        };
        let lp = l_row(&pred);
        let mut corr = pred.clone();
        for j in 0..i {
            for c in 0..3 {
                let idx = 3 * j + c;
                let r_node = rhs(pred[j], lp[j], &s.nodes[j], c);
                corr[j][c] = foot_val[idx] + 0.5 * step[idx] * (foot_rhs[idx] + r_node);
            }
        }
        let lc = l_row(&corr);
        for j in 0..=i {
            for c in 0..3 {
                k[c].set(i, j, corr[j][c]);
            }
            l.set(i, j, lc[j]);
        }
    }
    finish(g, k, l, 1, 0.0, 0, settings.cap)
}
