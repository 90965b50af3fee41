//! The random-walk scheme `u_n(x, k/n) = E f(x + S_k / √n)`.
//!
//! Lattice step laws are handled exactly through the pmf of `S_k`; continuous
//! laws go through Monte Carlo with seeded, chunked streams.

mod field;
mod grid;
mod mc;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use field::LatticeField;
pub use grid::Grid;
pub(crate) use grid::{expect_column, FineLattice};
pub use mc::{mc_field, mc_value, McEstimate, McField};

use crate::distributions::{Dense, LatticePmf, StepDistribution, DEFAULT_BUDGET};
use crate::error::{check_dim, invalid, Error, Result};
use crate::testfn::{Decay, TestFunction};
use crate::MAX_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeOptions {
    /// Largest number of dense cells a convolution may allocate.
    pub budget: usize,
    /// Total mass of the smallest pmf entries that may be discarded per `k`
    /// (ignored for non-decaying test functions).
    pub tail_cut: f64,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            tail_cut: 1e-16,
        }
    }
}

/// Exact scheme for a lattice step law: the laws of `S_0, …, S_K`.
#[derive(Debug)]
pub struct LatticeScheme {
    f: Arc<TestFunction>,
    dist: Arc<StepDistribution>,
    n: usize,
    k_max: usize,
    scale: f64,
    pmfs: Vec<LatticePmf>,
    dropped: Vec<f64>,
}

impl LatticeScheme {
    pub fn new(
        f: Arc<TestFunction>,
        dist: Arc<StepDistribution>,
        n: usize,
        k_max: usize,
        opts: SchemeOptions,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("scale n must be positive"));
        }
        check_dim(dist.dim(), f.dim())?;
        let step = dist.step_pmf()?;
        let mut dense = Dense::from_pmf(&LatticePmf::delta(step.spacing().to_vec()));
        let needed = dense.projected_cells(step, k_max);
        if needed > opts.budget {
            return Err(Error::BudgetExceeded {
                needed,
                budget: opts.budget,
            });
        }
        let tail = if f.decay() == Decay::TestOnlyNonDecaying {
            0.0
        } else {
            opts.tail_cut
        };
        let mut pmfs = Vec::with_capacity(k_max + 1);
        let mut dropped = Vec::with_capacity(k_max + 1);
        for k in 0..=k_max {
            if k > 0 {
                dense = dense.convolve(step, opts.budget)?;
            }
            let (pmf, gone) = dense.to_pmf(step.spacing(), k).pruned(tail);
            pmfs.push(pmf);
            dropped.push(gone);
        }
        Ok(Self {
            scale: 1.0 / (n as f64).sqrt(),
            f,
            dist,
            n,
            k_max,
            pmfs,
            dropped,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn test_function(&self) -> &Arc<TestFunction> {
        &self.f
    }

    pub fn distribution(&self) -> &Arc<StepDistribution> {
        &self.dist
    }

    /// `n^{-1/2}`.
    pub fn step_scale(&self) -> f64 {
        self.scale
    }

    /// Stored (pruned) law of `S_k`.
    pub fn pmf(&self, k: usize) -> &LatticePmf {
        &self.pmfs[k]
    }

    /// Mass removed from the law of `S_k` by pruning.
    pub fn dropped_mass(&self, k: usize) -> f64 {
        self.dropped[k]
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.k_max {
            return Err(invalid(format!(
                "time index {k} beyond the computed horizon {}",
                self.k_max
            )));
        }
        Ok(())
    }

    /// `E g(x + S_k/√n)` for an arbitrary evaluator `g`.
    fn expect_at(&self, k: usize, x: &[f64], g: impl Fn(&[f64]) -> f64) -> f64 {
        let pmf = &self.pmfs[k];
        let d = self.dim();
        let h: Vec<f64> = pmf.spacing().iter().map(|s| s * self.scale).collect();
        let mut z = [0.0; MAX_DIM];
        let mut acc = 0.0;
        for (i, &m) in pmf.masses().iter().enumerate() {
            for (a, &c) in pmf.coords(i).iter().enumerate() {
                z[a] = x[a] + c as f64 * h[a];
            }
            acc += m * g(&z[..d]);
        }
        acc
    }

    /// `u_n(x, k/n)`, evaluated off any grid through `f`.
    pub fn value(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.check_k(k)?;
        Ok(self.expect_at(k, x, |z| self.f.eval(z)))
    }

    /// `∂^α u_n(x, k/n) = E ∂^α f(x + S_k/√n)`.
    pub fn deriv(&self, alpha: &[usize], x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.check_k(k)?;
        self.f.eval_deriv(alpha, &vec![0.0; self.dim()])?;
        Ok(self.expect_at(k, x, |z| self.f.partial(alpha, z)))
    }

    /// `tr(Σ D²u_n(x, k/n))`.
    pub fn hessian_trace(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.check_k(k)?;
        if self.f.smoothness() < 2 {
            return Err(Error::Smoothness {
                have: self.f.smoothness(),
                need: 2,
            });
        }
        let cov = self.dist.covariance();
        let d = self.dim();
        Ok(self.expect_at(k, x, |z| {
            let mut hess = [0.0; MAX_DIM * MAX_DIM];
            self.f.hessian(z, &mut hess[..d * d]);
            cov.trace_product(&hess[..d * d])
        }))
    }

    /// One-step mixture `Σ_j P(X = w_j) u_n(x + w_j/√n, k/n)`.
    pub fn mixture_step(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.check_k(k)?;
        let step = self.dist.step_pmf()?;
        let mut y = vec![0.0; self.dim()];
        let mut acc = 0.0;
        for (j, &p) in step.masses().iter().enumerate() {
            for (a, w) in step.point(j).iter().enumerate() {
                y[a] = x[a] + w * self.scale;
            }
            acc += p * self.expect_at(k, &y, |z| self.f.eval(z));
        }
        Ok(acc)
    }

    /// Discrete generator `n (u_n(x, (k+1)/n) - u_n(x, k/n))`.
    pub fn generator(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.n as f64 * (self.value(x, k + 1)? - self.value(x, k)?))
    }

    /// `n E[u_n(x + X/√n, k/n) - u_n(x, k/n)]`.
    pub fn generator_mixture(&self, x: &[f64], k: usize) -> Result<f64> {
        Ok(self.n as f64 * (self.mixture_step(x, k)? - self.value(x, k)?))
    }

    /// `n E[u_n(x + X/√n, k/n) - u_n(x, k/n)] - ½ tr(Σ D²u_n(x, k/n))`, summed
    /// lattice point by lattice point as a second-order Taylor remainder.
    pub fn consistency_remainder(&self, x: &[f64], k: usize) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        self.check_k(k)?;
        if self.f.smoothness() < 2 {
            return Err(Error::Smoothness {
                have: self.f.smoothness(),
                need: 2,
            });
        }
        let remainder = TaylorRemainder::new(&self.f, &self.dist, self.n)?;
        Ok(self.expect_at(k, x, |z| {
            remainder.at(z, |y| self.f.partial(&[0; MAX_DIM][..y.len()], y))
        }))
    }

    /// `P(|S_k/√n| ≥ ρ)` including pruned mass.
    pub fn tail_probability(&self, k: usize, rho: f64) -> f64 {
        let pmf = &self.pmfs[k];
        let h: Vec<f64> = pmf.spacing().iter().map(|s| s * self.scale).collect();
        let mut acc = self.dropped[k];
        for (i, &m) in pmf.masses().iter().enumerate() {
            let r2: f64 = pmf
                .coords(i)
                .iter()
                .zip(&h)
                .map(|(&c, &s)| (c as f64 * s).powi(2))
                .sum();
            if r2 >= rho * rho {
                acc += m;
            }
        }
        acc.min(1.0)
    }

    /// `max_k P(|S_k/√n| ≥ ρ)` over the computed horizon.
    pub fn max_tail_probability(&self, rho: f64) -> f64 {
        (0..=self.k_max)
            .map(|k| self.tail_probability(k, rho))
            .fold(0.0, f64::max)
    }
}

/// `G(z) = n Σ_j p_j [f(z + w_j) - f(z) - w_j·∇f(z) - ½ w_jᵀ D²f(z) w_j]`
/// with `w_j = X_j/√n`; its expectation under `S_k/√n` is the consistency
/// error of the scheme at `(x, k)`.
pub(crate) struct TaylorRemainder<'a> {
    f: &'a TestFunction,
    n: f64,
    steps: Vec<(f64, Vec<f64>)>,
}

impl<'a> TaylorRemainder<'a> {
    pub fn new(f: &'a TestFunction, dist: &StepDistribution, n: usize) -> Result<Self> {
        let step = dist.step_pmf()?;
        let scale = 1.0 / (n as f64).sqrt();
        let steps = (0..step.len())
            .map(|j| {
                (
                    step.masses()[j],
                    step.point(j).iter().map(|w| w * scale).collect(),
                )
            })
            .collect();
        Ok(Self {
            f,
            n: n as f64,
            steps,
        })
    }

    /// `G(z)` with `value(y)` supplying `f(y)`, so callers can serve `f` from
    /// a precomputed table.
    pub fn at(&self, z: &[f64], value: impl Fn(&[f64]) -> f64) -> f64 {
        let d = z.len();
        let mut grad = [0.0; MAX_DIM];
        let mut alpha = [0usize; MAX_DIM];
        for a in 0..d {
            alpha[a] = 1;
            grad[a] = self.f.partial(&alpha[..d], z);
            alpha[a] = 0;
        }
        let mut hess = [0.0; MAX_DIM * MAX_DIM];
        self.f.hessian(z, &mut hess[..d * d]);
        let fz = value(z);
        let mut y = [0.0; MAX_DIM];
        let mut acc = 0.0;
        for (p, w) in &self.steps {
            for a in 0..d {
                y[a] = z[a] + w[a];
            }
            let mut lin = 0.0;
            let mut quad = 0.0;
            for a in 0..d {
                lin += w[a] * grad[a];
                for b in 0..d {
                    quad += w[a] * hess[a * d + b] * w[b];
                }
            }
            acc += p * (((value(&y[..d]) - fz) - lin) - 0.5 * quad);
        }
        self.n * acc
    }
}
