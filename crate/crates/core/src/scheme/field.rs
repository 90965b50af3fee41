use std::io::Write;
use std::sync::Arc;

use super::grid::{expect_column, FineLattice, Grid};
use super::LatticeScheme;
use crate::error::{invalid, Error, Result};
use crate::testfn::multi_indices;
use crate::MAX_DIM;

/// Exact values of `u_n(·, k/n)` on a grid for `k = 0..=K`, optionally with
/// the spatial derivatives `∂^α u_n` for `1 ≤ |α| ≤ 2`.
#[derive(Debug)]
pub struct LatticeField {
    scheme: Arc<LatticeScheme>,
    grid: Grid,
    fine: FineLattice,
    bases: Vec<usize>,
    /// `values[k][i]`
    values: Vec<Vec<f64>>,
    alphas: Vec<Vec<usize>>,
    /// `derivs[a][k][i]` for `alphas[a]`
    derivs: Vec<Vec<Vec<f64>>>,
}

impl LatticeField {
    /// Builds the field on `[-L, L]^d`. The grid step is the largest multiple
    /// of the lattice step `h/√n` not exceeding `step` (or a divisor of it
    /// when `h/√n > step`), so no value ever needs interpolation.
    pub fn build(
        scheme: Arc<LatticeScheme>,
        half_width: f64,
        step: f64,
        max_deriv: usize,
    ) -> Result<Self> {
        if max_deriv > 2 {
            return Err(invalid("field derivatives are available up to order 2"));
        }
        let f = scheme.test_function().clone();
        if max_deriv as u8 > f.smoothness() {
            return Err(Error::Smoothness {
                have: f.smoothness(),
                need: max_deriv as u8,
            });
        }
        let (grid, fine) = FineLattice::for_scheme(&scheme, half_width, step, 1)?;
        let bases = fine.grid_bases(&grid);
        let d = grid.dim();

        let mut alphas = Vec::new();
        for order in 1..=max_deriv {
            alphas.extend(multi_indices(d, order));
        }
        let value_table = fine.table(|x| f.eval(x));
        let deriv_tables: Vec<Vec<f64>> = alphas
            .iter()
            .map(|a| fine.table(|x| f.partial(a, x)))
            .collect();

        let mut values = Vec::with_capacity(scheme.k_max() + 1);
        let mut derivs = vec![Vec::with_capacity(scheme.k_max() + 1); alphas.len()];
        for k in 0..=scheme.k_max() {
            let pmf = scheme.pmf(k);
            let offsets = fine.offsets(pmf);
            values.push(expect_column(&value_table, &bases, &offsets, pmf.masses()));
            for (a, table) in deriv_tables.iter().enumerate() {
                derivs[a].push(expect_column(table, &bases, &offsets, pmf.masses()));
            }
        }
        Ok(Self {
            scheme,
            grid,
            fine,
            bases,
            values,
            alphas,
            derivs,
        })
    }

    pub fn scheme(&self) -> &Arc<LatticeScheme> {
        &self.scheme
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.scheme.n()
    }

    pub fn k_max(&self) -> usize {
        self.scheme.k_max()
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.values[k]
    }

    pub fn value(&self, i: usize, k: usize) -> f64 {
        self.values[k][i]
    }

    /// Largest derivative order stored.
    pub fn max_deriv(&self) -> usize {
        self.alphas
            .iter()
            .map(|a| a.iter().sum::<usize>())
            .max()
            .unwrap_or(0)
    }

    /// Column of `∂^α u_n(·, k/n)`, if stored.
    pub fn deriv_column(&self, alpha: &[usize], k: usize) -> Option<&[f64]> {
        if alpha.iter().all(|&a| a == 0) {
            return Some(&self.values[k]);
        }
        let a = self.alphas.iter().position(|b| b.as_slice() == alpha)?;
        Some(&self.derivs[a][k])
    }

    pub fn alphas(&self) -> &[Vec<usize>] {
        &self.alphas
    }

    /// Column `k + 1` rebuilt from the one-step recurrence
    /// `u_n(x, (k+1)/n) = Σ_j p_j u_n(x + w_j/√n, k/n)`, where each shifted
    /// value is re-expanded through `f` rather than read off the grid.
    pub fn step_once(&self, k: usize) -> Result<Vec<f64>> {
        if k >= self.k_max() {
            return Err(invalid(format!(
                "column {} is beyond the horizon {}",
                k + 1,
                self.k_max()
            )));
        }
        let f = self.scheme.test_function();
        let step = self.scheme.distribution().step_pmf()?;
        let pmf = self.scheme.pmf(k);
        let table = self.fine.table(|x| f.eval(x));
        let mut out = vec![0.0; self.grid.len()];
        for (j, &p) in step.masses().iter().enumerate() {
            let shift = self.fine.offset_of(step.coords(j));
            let offsets: Vec<isize> = self
                .fine
                .offsets(pmf)
                .into_iter()
                .map(|o| o + shift)
                .collect();
            let col = expect_column(&table, &self.bases, &offsets, pmf.masses());
            for (o, c) in out.iter_mut().zip(col) {
                *o += p * c;
            }
        }
        Ok(out)
    }

    /// Discrete generator `n (u_n(x, (k+1)/n) - u_n(x, k/n))` at grid point `i`.
    pub fn generator(&self, i: usize, k: usize) -> Result<f64> {
        if k >= self.k_max() {
            return Err(invalid(format!(
                "generator at k = {k} needs column {}",
                k + 1
            )));
        }
        Ok(self.n() as f64 * (self.values[k + 1][i] - self.values[k][i]))
    }

    fn second_order(&self, k: usize, weight: impl Fn(usize, usize) -> f64) -> Result<Vec<f64>> {
        if self.max_deriv() < 2 {
            return Err(invalid("field was built without second derivatives"));
        }
        let d = self.grid.dim();
        let mut out = vec![0.0; self.grid.len()];
        for a in 0..d {
            for b in 0..d {
                let w = weight(a, b);
                if w == 0.0 {
                    continue;
                }
                let mut alpha = [0usize; MAX_DIM];
                alpha[a] += 1;
                alpha[b] += 1;
                let col = self
                    .deriv_column(&alpha[..d], k)
                    .expect("second derivatives stored");
                for (o, v) in out.iter_mut().zip(col) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }

    /// `tr(Σ D²u_n(·, k/n))` on the grid.
    pub fn hessian_trace(&self, k: usize) -> Result<Vec<f64>> {
        let cov = self.scheme.distribution().covariance();
        self.second_order(k, |a, b| cov.get(a, b))
    }

    /// `tr D²u_n(·, k/n)` on the grid.
    pub fn laplacian(&self, k: usize) -> Result<Vec<f64>> {
        self.second_order(k, |a, b| if a == b { 1.0 } else { 0.0 })
    }

    /// `max |u_n|` over the grid and all stored times.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `x1..xd, k, t, u_n` followed by one column per stored
    /// derivative, named `d_<α>` (e.g. `d_20`).
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.grid.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|a| format!("x{a}")).collect();
        header.extend(["k".into(), "t".into(), "u_n".into()]);
        for alpha in &self.alphas {
            header.push(format!(
                "d_{}",
                alpha.iter().map(|a| a.to_string()).collect::<String>()
            ));
        }
        w.write_record(&header)?;
        let mut x = vec![0.0; d];
        let mut row = Vec::with_capacity(header.len());
        for k in 0..=self.k_max() {
            let t = k as f64 / self.n() as f64;
            for i in 0..self.grid.len() {
                self.grid.point_into(i, &mut x);
                row.clear();
                row.extend(x.iter().map(|v| v.to_string()));
                row.push(k.to_string());
                row.push(t.to_string());
                row.push(self.values[k][i].to_string());
                for a in 0..self.alphas.len() {
                    row.push(self.derivs[a][k][i].to_string());
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::make_step_distribution;
    use crate::scheme::SchemeOptions;
    use crate::testfn::make_test_function;
    use crate::FamilySpec;

    fn field(
        dist: &str,
        f: &str,
        n: usize,
        k_max: usize,
        step: f64,
        derivs: usize,
    ) -> LatticeField {
        let f = Arc::new(make_test_function(&FamilySpec::new(f)).unwrap());
        let d = Arc::new(make_step_distribution(&FamilySpec::new(dist)).unwrap());
        let s = Arc::new(LatticeScheme::new(f, d, n, k_max, SchemeOptions::default()).unwrap());
        LatticeField::build(s, 3.0, step, derivs).unwrap()
    }

    #[test]
    fn first_column_is_f_and_grid_is_aligned() {
        let fld = field("rademacher", "gauss_bump", 16, 4, 0.05, 0);
        // lattice step 1/4 exceeds 0.05, so the grid step divides it
        assert!((fld.grid().steps()[0] - 0.25 / 5.0).abs() < 1e-15);
        let f = fld.scheme().test_function();
        for i in 0..fld.grid().len() {
            let x = fld.grid().point(i);
            assert_eq!(fld.value(i, 0), f.eval(&x));
        }
    }

    #[test]
    fn matches_direct_evaluation() {
        let fld = field("asym_lattice", "sine_bump", 9, 6, 0.1, 2);
        let s = fld.scheme().clone();
        for k in [0, 3, 6] {
            let tr = fld.hessian_trace(k).unwrap();
            for i in (0..fld.grid().len()).step_by(7) {
                let x = fld.grid().point(i);
                assert!((fld.value(i, k) - s.value(&x, k).unwrap()).abs() < 1e-14);
                assert!((tr[i] - s.hessian_trace(&x, k).unwrap()).abs() < 1e-13);
                let dx = fld.deriv_column(&[1], k).unwrap()[i];
                assert!((dx - s.deriv(&[1], &x, k).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn step_once_examples() {
        let fld = field("rademacher", "gauss_bump", 4, 3, 0.1, 0);
        let f = fld.scheme().test_function().clone();
        let col = fld.step_once(0).unwrap();
        for i in 0..fld.grid().len() {
            let x = fld.grid().point(i)[0];
            let two_point = 0.5 * f.eval(&[x - 0.5]) + 0.5 * f.eval(&[x + 0.5]);
            assert!((col[i] - two_point).abs() < 1e-15);
        }
        let asym = field("asym_lattice", "gauss_bump", 4, 3, 0.1, 0);
        let col = asym.step_once(0).unwrap();
        for i in 0..asym.grid().len() {
            let x = asym.grid().point(i)[0];
            let want = 2.0 / 3.0 * f.eval(&[x - 0.5]) + 1.0 / 3.0 * f.eval(&[x + 1.0]);
            assert!((col[i] - want).abs() < 1e-15);
        }
        for k in 0..3 {
            let next = asym.step_once(k).unwrap();
            for (a, b) in next.iter().zip(asym.column(k + 1)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(asym.step_once(3).is_err());
    }

    #[test]
    fn csv_header() {
        let fld = field("rademacher", "gauss_bump", 4, 1, 0.5, 2);
        let mut buf = Vec::new();
        fld.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,k,t,u_n,d_1,d_2\n"));
        assert_eq!(text.lines().count(), 1 + 2 * fld.grid().len());
    }
}
