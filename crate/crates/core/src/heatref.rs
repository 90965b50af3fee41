//! Reference solution `u(x, t) = E f(x + √t ξ)`, `ξ ~ N(0, Σ)`, of
//! `∂_t u = ½ tr(Σ D²u)` with `u(·, 0) = f`.
//!
//! Gaussian bumps and quadratics have closed-form convolutions; everything
//! else goes through tensor Gauss–Hermite quadrature after Cholesky
//! whitening, with the difference against the half-order rule reported as the
//! error estimate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::Covariance;
use crate::numeric::gauss_hermite;
use crate::testfn::{TestFunction, DEFAULT_RULE_ORDER};
use crate::MAX_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatOptions {
    /// Gauss–Hermite order per axis.
    pub quad_order: usize,
    /// Largest accepted quadrature error estimate.
    pub tol: f64,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self {
            quad_order: DEFAULT_RULE_ORDER,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatBackend {
    ClosedForm,
    Quadrature,
}

#[derive(Clone, Debug)]
pub struct HeatReference {
    f: Arc<TestFunction>,
    cov: Covariance,
    opts: HeatOptions,
    backend: HeatBackend,
}

impl HeatReference {
    pub fn new(f: Arc<TestFunction>, cov: Covariance, opts: HeatOptions) -> Result<Self> {
        check_dim(f.dim(), cov.dim())?;
        let backend = if f.has_closed_form_heat() {
            HeatBackend::ClosedForm
        } else {
            if f.dim() > 3 {
                return Err(invalid("quadrature heat reference supports d ≤ 3"));
            }
            gauss_hermite(opts.quad_order)?;
            HeatBackend::Quadrature
        };
        Ok(Self {
            f,
            cov,
            opts,
            backend,
        })
    }

    pub fn test_function(&self) -> &Arc<TestFunction> {
        &self.f
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn backend(&self) -> HeatBackend {
        self.backend
    }

    pub fn options(&self) -> HeatOptions {
        self.opts
    }

    /// `u(·, t)` as a test function; `t = 0` returns `f` itself.
    pub fn slice(&self, t: f64) -> Result<TestFunction> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(invalid(format!("time must be finite and ≥ 0, got {t}")));
        }
        if t == 0.0 {
            return Ok((*self.f).clone());
        }
        self.f
            .mollify_with_order(t, &self.cov, self.opts.quad_order)
    }

    /// `∂^α u(x, t)` together with its quadrature error estimate.
    pub fn deriv_with_error(&self, alpha: &[usize], x: &[f64], t: f64) -> Result<(f64, f64)> {
        check_dim(self.f.dim(), alpha.len())?;
        check_dim(self.f.dim(), x.len())?;
        let order: usize = alpha.iter().sum();
        if order > self.f.smoothness() as usize {
            return Err(Error::Smoothness {
                have: self.f.smoothness(),
                need: order as u8,
            });
        }
        let slice = self.slice(t)?;
        let (v, est) = slice.partial_with_error(alpha, x)?;
        if est > self.opts.tol {
            return Err(Error::QuadratureInsufficient {
                order: self.opts.quad_order,
                estimate: est,
                tol: self.opts.tol,
            });
        }
        Ok((v, est))
    }

    pub fn deriv(&self, alpha: &[usize], x: &[f64], t: f64) -> Result<f64> {
        Ok(self.deriv_with_error(alpha, x, t)?.0)
    }

    pub fn value_with_error(&self, x: &[f64], t: f64) -> Result<(f64, f64)> {
        self.deriv_with_error(&[0; MAX_DIM][..self.f.dim()], x, t)
    }

    /// `u(x, t)`.
    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        Ok(self.value_with_error(x, t)?.0)
    }

    /// `tr(Σ D²u(x, t))`.
    pub fn hessian_trace(&self, x: &[f64], t: f64) -> Result<f64> {
        check_dim(self.f.dim(), x.len())?;
        if self.f.smoothness() < 2 {
            return Err(Error::Smoothness {
                have: self.f.smoothness(),
                need: 2,
            });
        }
        let d = self.f.dim();
        let mut acc = 0.0;
        let mut alpha = [0usize; MAX_DIM];
        for i in 0..d {
            for j in 0..d {
                alpha[i] += 1;
                alpha[j] += 1;
                acc += self.cov.get(i, j) * self.deriv(&alpha[..d], x, t)?;
                alpha[i] -= 1;
                alpha[j] -= 1;
            }
        }
        Ok(acc)
    }

    /// `(u(x, t+h) - u(x, t-h)) / 2h - ½ tr(Σ D²u(x, t))`.
    pub fn pde_residual(&self, x: &[f64], t: f64, h: f64) -> Result<f64> {
        if !(h > 0.0) || !(t - h > 0.0) {
            return Err(invalid(format!(
                "pde residual needs h > 0 and t - h > 0 (t = {t}, h = {h})"
            )));
        }
        let dt = (self.value(x, t + h)? - self.value(x, t - h)?) / (2.0 * h);
        Ok(dt - 0.5 * self.hessian_trace(x, t)?)
    }

    /// `|E u(x + √h ξ', t) - u(x, t + h)|` with the outer expectation taken by
    /// Gauss–Hermite quadrature.
    pub fn semigroup_check(&self, x: &[f64], t: f64, h: f64) -> Result<f64> {
        check_dim(self.f.dim(), x.len())?;
        if !(h >= 0.0) {
            return Err(invalid("semigroup step must be ≥ 0"));
        }
        if h == 0.0 {
            return Ok(0.0);
        }
        let d = self.f.dim();
        if d > 3 {
            return Err(invalid("semigroup check supports d ≤ 3"));
        }
        let inner = self.slice(t)?;
        let spread = self.cov.scaled(h)?;
        let rule = gauss_hermite(self.opts.quad_order)?;
        let mut y = [0.0; MAX_DIM];
        let mut shifted = [0.0; MAX_DIM];
        let outer = rule.expect_tensor(d, |z| {
            spread.transform(z, &mut y[..d]);
            for a in 0..d {
                shifted[a] = x[a] + y[a];
            }
            inner.eval(&shifted[..d])
        });
        Ok((outer - self.value(x, t + h)?).abs())
    }
}
