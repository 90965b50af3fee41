//! Spatial grids and the fine evaluation lattice.
//!
//! For exact fields the grid step is snapped to a multiple (or divisor) of
//! the scheme's lattice step `h/√n`, so every point `x + S_k/√n` lands on a
//! common fine lattice. `f` and its derivatives are tabulated there once and
//! each grid value of `u_n` becomes a weighted sum of table entries.

use rayon::prelude::*;
use serde::Serialize;

use super::LatticeScheme;
use crate::distributions::LatticePmf;
use crate::error::{invalid, Result};
use crate::MAX_DIM;

/// Uniform tensor grid `{i · step_a : |i| ≤ N_a}` on `[-L, L]^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    half_width: f64,
    steps: Vec<f64>,
    counts: Vec<usize>,
}

impl Grid {
    /// Grid whose per-axis steps are given; `N_a = ⌈L / step_a⌉`.
    pub fn new(half_width: f64, steps: Vec<f64>) -> Result<Self> {
        if steps.is_empty() || steps.len() > MAX_DIM {
            return Err(invalid("grid dimension must lie in 1..=4"));
        }
        if !(half_width >= 0.0) || !half_width.is_finite() {
            return Err(invalid("grid half-width must be finite and ≥ 0"));
        }
        if steps.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("grid step must be positive"));
        }
        let counts = steps
            .iter()
            .map(|s| (half_width / s - 1e-9).ceil().max(0.0) as usize)
            .collect();
        Ok(Self {
            half_width,
            steps,
            counts,
        })
    }

    pub fn uniform(dim: usize, half_width: f64, step: f64) -> Result<Self> {
        Self::new(half_width, vec![step; dim])
    }

    pub fn dim(&self) -> usize {
        self.steps.len()
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn max_step(&self) -> f64 {
        self.steps.iter().copied().fold(0.0, f64::max)
    }

    /// Points per axis.
    pub fn side(&self, axis: usize) -> usize {
        2 * self.counts[axis] + 1
    }

    pub fn len(&self) -> usize {
        (0..self.dim()).map(|a| self.side(a)).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Signed per-axis indices of flat point `i` (last axis fastest).
    pub fn index(&self, i: usize) -> [i64; MAX_DIM] {
        let mut out = [0i64; MAX_DIM];
        let mut rest = i;
        for a in (0..self.dim()).rev() {
            let side = self.side(a);
            out[a] = (rest % side) as i64 - self.counts[a] as i64;
            rest /= side;
        }
        out
    }

    pub fn point_into(&self, i: usize, out: &mut [f64]) {
        let idx = self.index(i);
        for a in 0..self.dim() {
            out[a] = idx[a] as f64 * self.steps[a];
        }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(i, &mut out);
        out
    }

    /// Flat index of the origin.
    pub fn origin_index(&self) -> usize {
        let mut flat = 0;
        for a in 0..self.dim() {
            flat = flat * self.side(a) + self.counts[a];
        }
        flat
    }

    /// Whether point `i` touches the boundary of the grid box.
    pub fn on_boundary(&self, i: usize) -> bool {
        let idx = self.index(i);
        (0..self.dim()).any(|a| idx[a].unsigned_abs() as usize == self.counts[a])
    }
}

/// Fine lattice `{(lo + i) η}` holding every point `x + S_k/√n` reachable
/// from the grid.
#[derive(Clone, Debug)]
pub(crate) struct FineLattice {
    eta: Vec<f64>,
    grid_ratio: Vec<i64>,
    lattice_ratio: Vec<i64>,
    lo: Vec<i64>,
    ext: Vec<usize>,
    strides: Vec<usize>,
}

impl FineLattice {
    /// Grid aligned with a scheme and the fine lattice covering the grid
    /// shifted by any `S_k/√n`, `k ≤ K`, plus `margin` extra steps.
    pub fn for_scheme(
        scheme: &LatticeScheme,
        half_width: f64,
        step: f64,
        margin: usize,
    ) -> Result<(Grid, Self)> {
        let d = scheme.dim();
        let step_pmf = scheme.distribution().step_pmf()?;
        let mut eta = Vec::with_capacity(d);
        let mut grid_ratio = Vec::with_capacity(d);
        let mut lattice_ratio = Vec::with_capacity(d);
        for &h in step_pmf.spacing() {
            let lambda = h * scheme.step_scale();
            if lambda <= step * (1.0 + 1e-12) {
                let m = ((step / lambda) + 1e-9).floor().max(1.0) as i64;
                eta.push(lambda);
                grid_ratio.push(m);
                lattice_ratio.push(1);
            } else {
                let m = ((lambda / step) - 1e-9).ceil().max(1.0) as i64;
                eta.push(lambda / m as f64);
                grid_ratio.push(1);
                lattice_ratio.push(m);
            }
        }
        let steps: Vec<f64> = (0..d).map(|a| eta[a] * grid_ratio[a] as f64).collect();
        let grid = Grid::new(half_width, steps)?;

        let mut cmin = vec![0i64; d];
        let mut cmax = vec![0i64; d];
        for k in 0..=scheme.k_max() {
            let (lo, hi) = scheme.pmf(k).coord_bounds();
            for a in 0..d {
                cmin[a] = cmin[a].min(lo[a]);
                cmax[a] = cmax[a].max(hi[a]);
            }
        }
        let (slo, shi) = step_pmf.coord_bounds();
        let mut lo = Vec::with_capacity(d);
        let mut ext = Vec::with_capacity(d);
        for a in 0..d {
            let n = grid.counts[a] as i64 * grid_ratio[a];
            let low = -n + (cmin[a] + margin as i64 * slo[a].min(0)) * lattice_ratio[a];
            let high = n + (cmax[a] + margin as i64 * shi[a].max(0)) * lattice_ratio[a];
            lo.push(low);
            ext.push((high - low + 1) as usize);
        }
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * ext[a + 1];
        }
        Ok((
            grid,
            Self {
                eta,
                grid_ratio,
                lattice_ratio,
                lo,
                ext,
                strides,
            },
        ))
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn len(&self) -> usize {
        self.ext.iter().product()
    }

    fn point_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for a in (0..self.dim()).rev() {
            let i = (rest % self.ext[a]) as i64;
            rest /= self.ext[a];
            out[a] = (self.lo[a] + i) as f64 * self.eta[a];
        }
    }

    /// `g` evaluated at every fine point.
    pub fn table<G: Fn(&[f64]) -> f64 + Sync>(&self, g: G) -> Vec<f64> {
        let d = self.dim();
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                let mut x = [0.0; MAX_DIM];
                self.point_into(i, &mut x);
                g(&x[..d])
            })
            .collect()
    }

    /// Flat offset of lattice coordinates (in units of the step-law spacing).
    pub fn offset_of(&self, coords: &[i64]) -> isize {
        coords
            .iter()
            .enumerate()
            .map(|(a, &c)| (c * self.lattice_ratio[a]) as isize * self.strides[a] as isize)
            .sum()
    }

    pub fn offsets(&self, pmf: &LatticePmf) -> Vec<isize> {
        (0..pmf.len())
            .map(|i| self.offset_of(pmf.coords(i)))
            .collect()
    }

    /// Flat fine index of every grid point.
    pub fn grid_bases(&self, grid: &Grid) -> Vec<usize> {
        (0..grid.len())
            .map(|i| {
                let idx = grid.index(i);
                (0..self.dim())
                    .map(|a| {
                        ((idx[a] * self.grid_ratio[a] - self.lo[a]) as usize) * self.strides[a]
                    })
                    .sum()
            })
            .collect()
    }
}

/// `Σ_j m_j table[base + off_j]` for every base.
pub(crate) fn expect_column(
    table: &[f64],
    bases: &[usize],
    offsets: &[isize],
    masses: &[f64],
) -> Vec<f64> {
    bases
        .par_iter()
        .map(|&b| {
            let b = b as isize;
            let mut acc = 0.0;
            for (&o, &m) in offsets.iter().zip(masses) {
                acc += m * table[(b + o) as usize];
            }
            acc
        })
        .collect()
}
