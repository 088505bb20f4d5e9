use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::floor;

/// Uniform node set on `{0 <= xi <= x <= L}` with `n` nodes per edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularGrid {
    pub n: usize,
    pub h: f64,
    pub length: f64,
}

impl TriangularGrid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter {
                name: "kernel_n",
                value: n as f64,
                requirement: "at least 2 nodes per edge",
            });
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidParameter {
                name: "length",
                value: length,
                requirement: "positive finite road length",
            });
        }
        Ok(Self {
            n,
            h: length / (n - 1) as f64,
            length,
        })
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.length
        } else {
            i as f64 * self.h
        }
    }

    pub fn len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i < self.n);
        i * (i + 1) / 2 + j
    }
}

/// Scalar field sampled at the nodes of a [`TriangularGrid`], row `i`
/// holding `xi_0..=xi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TriField {
    pub grid: TriangularGrid,
    data: Vec<f64>,
}

impl TriField {
    pub fn zeros(grid: TriangularGrid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.grid.index(i, j);
        self.data[k] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn sup(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_diff(&self, other: &TriField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Row `x = x_i` as a slice over `xi_0..=xi_i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let start = self.grid.index(i, 0);
        &self.data[start..=start + i]
    }

    /// Value at an arbitrary point of the closed triangle: bilinear on
    /// square cells, linear on the half cells along the diagonal. Points
    /// outside are projected onto the triangle.
    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        let cell = Cell::locate(&self.grid, x, xi);
        cell.apply(|i, j| self.get(i, j))
    }
}

/// Interpolation stencil of a point: up to four nodes with weights.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Cell {
    nodes: [(usize, usize); 4],
    weights: [f64; 4],
}

impl Cell {
    pub(crate) fn locate(grid: &TriangularGrid, x: f64, xi: f64) -> Self {
        let n = grid.n;
        let top = (n - 1) as f64;
        let mut sx = (x / grid.h).clamp(0.0, top);
        let mut sxi = (xi / grid.h).clamp(0.0, top);
        if sxi > sx {
            let mid = 0.5 * (sx + sxi);
            sx = mid;
            sxi = mid;
        }
        let mut i = floor(sx) as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        let mut j = floor(sxi) as usize;
        if j > i {
            j = i;
        }
        let s = sx - i as f64;
        let t = sxi - j as f64;
        if j < i {
            Self {
                nodes: [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)],
                weights: [(1.0 - s) * (1.0 - t), s * (1.0 - t), (1.0 - s) * t, s * t],
            }
        } else {
            // Lower half of the diagonal cell: vertices (i,i), (i+1,i),
            // (i+1,i+1), with t <= s.
            let t = t.min(s);
            Self {
                nodes: [(i, i), (i + 1, i), (i + 1, i + 1), (i, i)],
                weights: [1.0 - s, s - t, t, 0.0],
            }
        }
    }

    #[inline]
    pub(crate) fn apply(&self, mut f: impl FnMut(usize, usize) -> f64) -> f64 {
        let mut acc = 0.0;
        for k in 0..4 {
            if self.weights[k] != 0.0 {
                acc += self.weights[k] * f(self.nodes[k].0, self.nodes[k].1);
            }
        }
        acc
    }
}

/// Linear interpolation of `values` sampled at `0, h, 2h, ...` (clamped).
pub(crate) fn interp_uniform(values: &[f64], h: f64, x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let s = (x / h).clamp(0.0, (n - 1) as f64);
    let mut i = floor(s) as usize;
    if i >= n - 1 {
        i = n - 2;
    }
    let t = s - i as f64;
    values[i] * (1.0 - t) + values[i + 1] * t
}
