//! Probability mass functions on a rectangular lattice `h ⊙ ℤ^d` and their
//! exact convolution.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numeric::CompensatedSum;

/// Default cap on dense convolution cells.
pub const DEFAULT_BUDGET: usize = 20_000_000;

/// Law of a lattice-valued random vector, typically `S_k = X_1 + … + X_k`.
///
/// Points are stored as integer coordinates on a common grid with per-axis
/// `spacing`, sorted lexicographically, with strictly positive masses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticePmf {
    dim: usize,
    spacing: Vec<f64>,
    coords: Vec<i64>,
    masses: Vec<f64>,
    steps: usize,
}

impl LatticePmf {
    /// Builds a pmf from integer coordinates; merges repeated points and drops
    /// zero masses.
    pub fn from_coords(
        spacing: Vec<f64>,
        points: &[Vec<i64>],
        masses: &[f64],
        steps: usize,
    ) -> Result<Self> {
        let dim = spacing.len();
        if dim == 0 || points.len() != masses.len() || points.is_empty() {
            return Err(invalid(
                "lattice pmf needs matching non-empty points and masses",
            ));
        }
        if spacing.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(invalid("lattice spacing must be positive"));
        }
        let mut entries: Vec<(Vec<i64>, f64)> = Vec::with_capacity(points.len());
        for (p, &m) in points.iter().zip(masses) {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            if !(m >= 0.0) || !m.is_finite() {
                return Err(invalid("lattice masses must be finite and non-negative"));
            }
            entries.push((p.clone(), m));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut coords = Vec::new();
        let mut out_masses: Vec<f64> = Vec::new();
        let mut last: Option<Vec<i64>> = None;
        for (p, m) in entries {
            if last.as_ref() == Some(&p) {
                *out_masses.last_mut().unwrap() += m;
            } else {
                coords.extend_from_slice(&p);
                out_masses.push(m);
                last = Some(p);
            }
        }
        let mut pmf = Self {
            dim,
            spacing,
            coords,
            masses: out_masses,
            steps,
        };
        pmf.drop_zeros();
        Ok(pmf)
    }

    /// Point mass at the origin (`S_0 = 0`).
    pub fn delta(spacing: Vec<f64>) -> Self {
        let dim = spacing.len();
        Self {
            dim,
            spacing,
            coords: vec![0; dim],
            masses: vec![1.0],
            steps: 0,
        }
    }

    fn drop_zeros(&mut self) {
        if self.masses.iter().all(|m| *m > 0.0) {
            return;
        }
        let d = self.dim;
        let mut coords = Vec::with_capacity(self.coords.len());
        let mut masses = Vec::with_capacity(self.masses.len());
        for (i, &m) in self.masses.iter().enumerate() {
            if m > 0.0 {
                coords.extend_from_slice(&self.coords[i * d..(i + 1) * d]);
                masses.push(m);
            }
        }
        self.coords = coords;
        self.masses = masses;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of convolutions that produced this pmf.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn coords(&self, i: usize) -> &[i64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    /// Position of point `i` in `ℝ^d`.
    pub fn point(&self, i: usize) -> Vec<f64> {
        self.coords(i)
            .iter()
            .zip(&self.spacing)
            .map(|(&c, &h)| c as f64 * h)
            .collect()
    }

    pub fn support(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Mass at the lattice point nearest to `x` if `x` lies on the lattice.
    pub fn mass_at(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim {
            return 0.0;
        }
        let mut target = Vec::with_capacity(self.dim);
        for (&xi, &h) in x.iter().zip(&self.spacing) {
            let c = (xi / h).round();
            if (c * h - xi).abs() > 1e-9 * h.max(xi.abs()) {
                return 0.0;
            }
            target.push(c as i64);
        }
        let d = self.dim;
        let idx = (0..self.len()).collect::<Vec<_>>();
        match idx.binary_search_by(|&i| self.coords[i * d..(i + 1) * d].cmp(&target[..])) {
            Ok(i) => self.masses[i],
            Err(_) => 0.0,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.masses
            .iter()
            .copied()
            .collect::<CompensatedSum>()
            .value()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|a| {
                (0..self.len())
                    .map(|i| {
                        self.masses[i] * self.coords[i * self.dim + a] as f64 * self.spacing[a]
                    })
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect()
    }

    /// Covariance about the mean.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let d = self.dim;
        DMatrix::from_fn(d, d, |a, b| {
            (0..self.len())
                .map(|i| {
                    let xa = self.coords[i * d + a] as f64 * self.spacing[a] - mean[a];
                    let xb = self.coords[i * d + b] as f64 * self.spacing[b] - mean[b];
                    self.masses[i] * xa * xb
                })
                .collect::<CompensatedSum>()
                .value()
        })
    }

    /// Exact convolution with another pmf on the same lattice.
    pub fn convolve(&self, other: &LatticePmf, budget: usize) -> Result<LatticePmf> {
        self.check_compatible(other)?;
        let dense = Dense::from_pmf(self);
        let out = dense.convolve(other, budget)?;
        Ok(out.into_pmf(self.spacing.clone(), self.steps + other.steps))
    }

    /// Drops the smallest masses whose total does not exceed `tail`; returns
    /// the pruned pmf and the mass removed.
    pub fn pruned(&self, tail: f64) -> (LatticePmf, f64) {
        if tail <= 0.0 || self.len() <= 1 {
            return (self.clone(), 0.0);
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.masses[a].total_cmp(&self.masses[b]).then(a.cmp(&b)));
        let mut dropped = 0.0;
        let mut keep = vec![true; self.len()];
        for &i in &order {
            if dropped + self.masses[i] > tail {
                break;
            }
            dropped += self.masses[i];
            keep[i] = false;
        }
        let d = self.dim;
        let mut coords = Vec::new();
        let mut masses = Vec::new();
        for i in 0..self.len() {
            if keep[i] {
                coords.extend_from_slice(&self.coords[i * d..(i + 1) * d]);
                masses.push(self.masses[i]);
            }
        }
        let pmf = LatticePmf {
            dim: d,
            spacing: self.spacing.clone(),
            coords,
            masses,
            steps: self.steps,
        };
        (pmf, dropped)
    }

    /// Total-variation distance `½ Σ |p - q|` between pmfs on the same lattice.
    pub fn total_variation(&self, other: &LatticePmf) -> Result<f64> {
        self.check_compatible(other)?;
        let d = self.dim;
        let (mut i, mut j) = (0, 0);
        let mut acc = CompensatedSum::new();
        while i < self.len() || j < other.len() {
            let ord = if i == self.len() {
                std::cmp::Ordering::Greater
            } else if j == other.len() {
                std::cmp::Ordering::Less
            } else {
                self.coords[i * d..(i + 1) * d].cmp(&other.coords[j * d..(j + 1) * d])
            };
            match ord {
                std::cmp::Ordering::Less => {
                    acc.add(self.masses[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    acc.add(other.masses[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    acc.add((self.masses[i] - other.masses[j]).abs());
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(0.5 * acc.value())
    }

    /// Empirical pmf of lattice-valued samples.
    pub fn empirical(spacing: Vec<f64>, samples: &[Vec<f64>], steps: usize) -> Result<LatticePmf> {
        if samples.is_empty() {
            return Err(invalid("empirical pmf needs at least one sample"));
        }
        let w = 1.0 / samples.len() as f64;
        let points: Vec<Vec<i64>> = samples
            .iter()
            .map(|s| {
                s.iter()
                    .zip(&spacing)
                    .map(|(x, h)| (x / h).round() as i64)
                    .collect()
            })
            .collect();
        LatticePmf::from_coords(spacing, &points, &vec![w; samples.len()], steps)
    }

    fn check_compatible(&self, other: &LatticePmf) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if self
            .spacing
            .iter()
            .zip(&other.spacing)
            .any(|(a, b)| (a - b).abs() > 1e-15 * a.abs().max(b.abs()))
        {
            return Err(invalid("pmfs live on different lattices"));
        }
        Ok(())
    }

    pub(crate) fn coord_bounds(&self) -> (Vec<i64>, Vec<i64>) {
        let d = self.dim;
        let mut lo = vec![i64::MAX; d];
        let mut hi = vec![i64::MIN; d];
        for i in 0..self.len() {
            for a in 0..d {
                let c = self.coords[i * d + a];
                lo[a] = lo[a].min(c);
                hi[a] = hi[a].max(c);
            }
        }
        (lo, hi)
    }
}

/// Dense row-major array over a box of lattice coordinates, with a Neumaier
/// compensation term per cell.
#[derive(Debug)]
pub(crate) struct Dense {
    lo: Vec<i64>,
    ext: Vec<usize>,
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl Dense {
    pub fn from_pmf(p: &LatticePmf) -> Self {
        let (lo, hi) = p.coord_bounds();
        let ext: Vec<usize> = lo
            .iter()
            .zip(&hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .collect();
        let size: usize = ext.iter().product();
        let mut sum = vec![0.0; size];
        let strides = strides(&ext);
        for i in 0..p.len() {
            let idx: usize = p
                .coords(i)
                .iter()
                .zip(&lo)
                .zip(&strides)
                .map(|((c, l), s)| (c - l) as usize * s)
                .sum();
            sum[idx] = p.masses[i];
        }
        Self {
            lo,
            ext,
            comp: vec![0.0; size],
            sum,
        }
    }

    /// Cells needed to convolve with `step` `k` more times.
    pub fn projected_cells(&self, step: &LatticePmf, k: usize) -> usize {
        let (slo, shi) = step.coord_bounds();
        self.ext
            .iter()
            .zip(slo.iter().zip(&shi))
            .map(|(e, (l, h))| e + k * (h - l) as usize)
            .fold(1usize, |acc, e| acc.saturating_mul(e))
    }

    pub fn convolve(&self, step: &LatticePmf, budget: usize) -> Result<Dense> {
        let needed = self.projected_cells(step, 1);
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        let d = self.lo.len();
        let (slo, shi) = step.coord_bounds();
        let ext: Vec<usize> = (0..d)
            .map(|a| self.ext[a] + (shi[a] - slo[a]) as usize)
            .collect();
        let lo: Vec<i64> = (0..d).map(|a| self.lo[a] + slo[a]).collect();
        let out_strides = strides(&ext);
        let offsets: Vec<usize> = (0..step.len())
            .map(|j| {
                step.coords(j)
                    .iter()
                    .zip(&slo)
                    .zip(&out_strides)
                    .map(|((c, l), s)| (c - l) as usize * s)
                    .sum()
            })
            .collect();
        let size = ext.iter().product();
        let mut sum = vec![0.0; size];
        let mut comp = vec![0.0; size];
        let mut counter = vec![0usize; d];
        for i in 0..self.sum.len() {
            let m = self.sum[i] + self.comp[i];
            if m != 0.0 {
                let base: usize = counter.iter().zip(&out_strides).map(|(c, s)| c * s).sum();
                for (j, &p) in step.masses.iter().enumerate() {
                    let o = base + offsets[j];
                    let x = m * p;
                    let t = sum[o] + x;
                    if sum[o].abs() >= x.abs() {
                        comp[o] += (sum[o] - t) + x;
                    } else {
                        comp[o] += (x - t) + sum[o];
                    }
                    sum[o] = t;
                }
            }
            // advance the row-major counter (last axis fastest)
            for a in (0..d).rev() {
                counter[a] += 1;
                if counter[a] < self.ext[a] {
                    break;
                }
                counter[a] = 0;
            }
        }
        Ok(Dense { lo, ext, sum, comp })
    }

    pub fn into_pmf(self, spacing: Vec<f64>, steps: usize) -> LatticePmf {
        let d = self.lo.len();
        let mut coords = Vec::new();
        let mut masses = Vec::new();
        let mut counter = vec![0usize; d];
        for i in 0..self.sum.len() {
            let m = self.sum[i] + self.comp[i];
            if m > 0.0 {
                for a in 0..d {
                    coords.push(self.lo[a] + counter[a] as i64);
                }
                masses.push(m);
            }
            for a in (0..d).rev() {
                counter[a] += 1;
                if counter[a] < self.ext[a] {
                    break;
                }
                counter[a] = 0;
            }
        }
        LatticePmf {
            dim: d,
            spacing,
            coords,
            masses,
            steps,
        }
    }

    pub fn to_pmf(&self, spacing: &[f64], steps: usize) -> LatticePmf {
        Dense {
            lo: self.lo.clone(),
            ext: self.ext.clone(),
            sum: self.sum.clone(),
            comp: self.comp.clone(),
        }
        .into_pmf(spacing.to_vec(), steps)
    }
}

fn strides(ext: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; ext.len()];
    for a in (0..ext.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * ext[a + 1];
    }
    s
}

/// Snaps real coordinates onto a common rational grid per axis.
///
/// Each coordinate is approximated by a continued fraction with denominator at
/// most 1000; the axis spacing is `1 / lcm(denominators)`.
pub fn snap_to_lattice(points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<i64>>)> {
    let dim = points.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(invalid("lattice needs at least one point"));
    }
    let mut spacing = Vec::with_capacity(dim);
    for a in 0..dim {
        let mut lcm: i64 = 1;
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: p.len(),
                });
            }
            let (_, den) = rational_approx(p[a], 1000).ok_or_else(|| {
                invalid(format!(
                    "coordinate {} is not a rational with small denominator",
                    p[a]
                ))
            })?;
            lcm = lcm / gcd(lcm, den) * den;
            if lcm > 1_000_000 {
                return Err(invalid(
                    "lattice points do not share a common rational grid",
                ));
            }
        }
        spacing.push(1.0 / lcm as f64);
    }
    let coords = points
        .iter()
        .map(|p| {
            p.iter()
                .zip(&spacing)
                .map(|(x, h)| (x / h).round() as i64)
                .collect()
        })
        .collect();
    Ok((spacing, coords))
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn rational_approx(x: f64, max_den: i64) -> Option<(i64, i64)> {
    if !x.is_finite() {
        return None;
    }
    let tol = 1e-12 * x.abs().max(1.0);
    let (mut h0, mut h1) = (0i64, 1i64);
    let (mut k0, mut k1) = (1i64, 0i64);
    let mut r = x;
    for _ in 0..64 {
        let a = r.floor();
        if a.abs() > 1e15 {
            return None;
        }
        let ai = a as i64;
        let h2 = ai.checked_mul(h1)?.checked_add(h0)?;
        let k2 = ai.checked_mul(k1)?.checked_add(k0)?;
        if k2 > max_den {
            return None;
        }
        if (h2 as f64 / k2 as f64 - x).abs() <= tol {
            return Some((h2, k2));
        }
        (h0, h1, k0, k1) = (h1, h2, k1, k2);
        let frac = r - a;
        if frac.abs() < 1e-300 {
            return None;
        }
        r = 1.0 / frac;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rademacher() -> LatticePmf {
        LatticePmf::from_coords(vec![1.0], &[vec![-1], vec![1]], &[0.5, 0.5], 1).unwrap()
    }

    #[test]
    fn convolution_of_two_steps() {
        let r = rademacher();
        let two = r.convolve(&r, DEFAULT_BUDGET).unwrap();
        assert_eq!(two.support(), vec![vec![-2.0], vec![0.0], vec![2.0]]);
        assert_eq!(two.masses(), &[0.25, 0.5, 0.25]);
        assert_eq!(two.steps(), 2);
    }

    #[test]
    fn pruning_respects_tail() {
        let r = rademacher();
        let mut p = r.clone();
        for _ in 0..9 {
            p = p.convolve(&r, DEFAULT_BUDGET).unwrap();
        }
        // 10 steps: end masses 2^-10 each
        let (q, dropped) = p.pruned(2.0 / 1024.0 + 1e-15);
        assert_eq!(q.len(), p.len() - 2);
        assert!((dropped - 2.0 / 1024.0).abs() < 1e-15);
        let (q, dropped) = p.pruned(1.0 / 1024.0 - 1e-15);
        assert_eq!(q.len(), p.len());
        assert_eq!(dropped, 0.0);
    }

    #[test]
    fn snapping() {
        let (h, c) = snap_to_lattice(&[vec![-0.5], vec![1.0 / 3.0]]).unwrap();
        assert!((h[0] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(c, vec![vec![-3], vec![2]]);
        assert!(snap_to_lattice(&[vec![2f64.sqrt()], vec![-1.0]]).is_err());
    }

    #[test]
    fn budget_is_enforced() {
        let r = rademacher();
        let err = Dense::from_pmf(&r).convolve(&r, 2).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    #[test]
    fn mass_lookup_and_tv() {
        let r = rademacher();
        assert_eq!(r.mass_at(&[1.0]), 0.5);
        assert_eq!(r.mass_at(&[0.0]), 0.0);
        assert_eq!(r.mass_at(&[0.5]), 0.0);
        let other =
            LatticePmf::from_coords(vec![1.0], &[vec![-1], vec![1]], &[0.25, 0.75], 1).unwrap();
        assert!((r.total_variation(&other).unwrap() - 0.25).abs() < 1e-15);
    }
}
