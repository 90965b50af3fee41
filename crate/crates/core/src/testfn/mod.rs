//! Test functions `f: ℝ^d → ℝ` with analytic partial derivatives up to order
//! 4, certified `C^k` norms, a decay class, and Gaussian mollification
//! `f^t = E f(· + √t ξ)`.

mod factor;
mod norms;

use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;
use serde::Serialize;

pub use factor::Factor;
pub use norms::SupEntry;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{spd_inverse, Covariance};
use crate::numeric::{gauss_hermite, gaussian_norm_tail, GaussHermite};
use crate::params::{FamilySpec, Params};
use crate::MAX_DIM;

/// Highest derivative order handled anywhere in the crate.
pub const MAX_ORDER: usize = 4;

/// Default Gauss–Hermite order per axis for mollified evaluators.
pub const DEFAULT_RULE_ORDER: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `|f(x)| → 0` as `|x| → ∞`.
    Vanishing,
    /// Bounded and uniformly continuous, not vanishing.
    BoundedUniformlyContinuous,
    /// Unbounded polynomial used only for exact identities.
    TestOnlyNonDecaying,
}

type Small = [[f64; MAX_DIM]; MAX_DIM];

#[derive(Clone, Debug)]
pub(crate) enum Shape {
    /// `scale · exp(-½ xᵀ P x)`
    Gaussian { scale: f64, precision: Small },
    /// `Π_a φ_a(x_a)`
    Tensor(Vec<Factor>),
    /// `xᵀ A x + bᵀ x + c` with `A` symmetric
    Quadratic { a: Small, b: [f64; MAX_DIM], c: f64 },
    /// `E base(x + L z)`, `L Lᵀ = cov`, by tensor Gauss–Hermite quadrature
    Mollified {
        base: Arc<TestFunction>,
        cov: Covariance,
        rule: Arc<GaussHermite>,
    },
}

/// An immutable test function; norm tables are filled lazily and shared
/// between clones.
#[derive(Clone, Debug)]
pub struct TestFunction {
    name: String,
    dim: usize,
    shape: Shape,
    smoothness: u8,
    decay: Decay,
    sups: Arc<[OnceLock<Vec<SupEntry>>; MAX_ORDER + 1]>,
}

fn small_from(m: &DMatrix<f64>) -> Small {
    let mut out = [[0.0; MAX_DIM]; MAX_DIM];
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out[i][j] = m[(i, j)];
        }
    }
    out
}

fn small_to(m: &Small, dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, dim, |i, j| m[i][j])
}

/// All multi-indices `α ∈ ℕ^dim` with `|α| = order`, lexicographically
/// descending (`(2,0), (1,1), (0,2)`).
pub fn multi_indices(dim: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, left: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() + 1 == dim {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=left).rev() {
            prefix.push(first);
            rec(dim, left - first, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        rec(dim, order, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Expands `α` into the list of differentiated axes, e.g. `(2,1) → [0,0,1]`.
fn axes_of(alpha: &[usize]) -> ([usize; MAX_ORDER], usize) {
    let mut axes = [0usize; MAX_ORDER];
    let mut m = 0;
    for (a, &k) in alpha.iter().enumerate() {
        for _ in 0..k {
            axes[m] = a;
            m += 1;
        }
    }
    (axes, m)
}

impl TestFunction {
    fn build(
        name: impl Into<String>,
        dim: usize,
        shape: Shape,
        smoothness: u8,
        decay: Decay,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            shape,
            smoothness,
            decay,
            sups: Arc::new(Default::default()),
        }
    }

    /// `c · exp(-½ xᵀ P x)` for a positive definite precision `P`.
    pub fn gaussian(name: impl Into<String>, scale: f64, precision: &DMatrix<f64>) -> Result<Self> {
        let dim = precision.nrows();
        if dim == 0 || dim > MAX_DIM || precision.ncols() != dim {
            return Err(invalid(
                "precision must be a square matrix of dimension 1..=4",
            ));
        }
        spd_inverse(precision)?;
        if !scale.is_finite() {
            return Err(invalid("scale must be finite"));
        }
        let shape = Shape::Gaussian {
            scale,
            precision: small_from(precision),
        };
        Ok(Self::build(name, dim, shape, 4, Decay::Vanishing))
    }

    /// Product `Π_a φ_a(x_a)`; all-Gaussian products are stored as a
    /// Gaussian with diagonal precision.
    pub fn tensor(name: impl Into<String>, factors: Vec<Factor>) -> Result<Self> {
        let dim = factors.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(invalid("tensor test function needs 1..=4 factors"));
        }
        for f in &factors {
            match *f {
                Factor::Gauss { a } if !(a > 0.0 && a.is_finite()) => {
                    return Err(invalid("gauss factor width must be positive"))
                }
                Factor::SineGauss { omega } if !omega.is_finite() => {
                    return Err(invalid("sine frequency must be finite"))
                }
                _ => {}
            }
        }
        if factors.iter().all(|f| matches!(f, Factor::Gauss { .. })) {
            let precision = DMatrix::from_fn(dim, dim, |i, j| match (i == j, factors[i]) {
                (true, Factor::Gauss { a }) => 1.0 / (a * a),
                _ => 0.0,
            });
            return Self::gaussian(name, 1.0, &precision);
        }
        let smoothness = factors.iter().map(Factor::smoothness).min().unwrap_or(4);
        Ok(Self::build(
            name,
            dim,
            Shape::Tensor(factors),
            smoothness,
            Decay::Vanishing,
        ))
    }

    /// `xᵀ A x + bᵀ x + c`.
    pub fn quadratic(name: impl Into<String>, a: &DMatrix<f64>, b: &[f64], c: f64) -> Result<Self> {
        let dim = b.len();
        if dim == 0 || dim > MAX_DIM || a.nrows() != dim || a.ncols() != dim {
            return Err(invalid(
                "quadratic needs a d×d matrix and a length-d vector, d ≤ 4",
            ));
        }
        if (a - a.transpose()).abs().max() > 1e-12 * a.abs().max().max(1.0) {
            return Err(invalid("quadratic form matrix must be symmetric"));
        }
        let mut bb = [0.0; MAX_DIM];
        bb[..dim].copy_from_slice(b);
        let constant = a.iter().all(|v| *v == 0.0) && b.iter().all(|v| *v == 0.0);
        let decay = if constant {
            Decay::BoundedUniformlyContinuous
        } else {
            Decay::TestOnlyNonDecaying
        };
        Ok(Self::build(
            name,
            dim,
            Shape::Quadratic {
                a: small_from(a),
                b: bb,
                c,
            },
            4,
            decay,
        ))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn decay(&self) -> Decay {
        self.decay
    }

    /// Highest order `k ≤ 4` for which all partial derivatives exist and are
    /// continuous.
    pub fn smoothness(&self) -> u8 {
        self.smoothness
    }

    /// Whether the Gaussian convolution of this function has a closed form.
    pub fn has_closed_form_heat(&self) -> bool {
        matches!(self.shape, Shape::Gaussian { .. } | Shape::Quadratic { .. })
    }

    pub fn is_mollified(&self) -> bool {
        matches!(self.shape, Shape::Mollified { .. })
    }

    /// `f(x)`.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.partial(&[0; MAX_DIM][..self.dim], x)
    }

    /// `∂^α f(x)` with `|α| ≤ 4`, smoothness and dimension checked.
    pub fn eval_deriv(&self, alpha: &[usize], x: &[f64]) -> Result<f64> {
        check_dim(self.dim, alpha.len())?;
        check_dim(self.dim, x.len())?;
        let order: usize = alpha.iter().sum();
        if order > MAX_ORDER {
            return Err(Error::DerivativeOrder(order));
        }
        if order > self.smoothness as usize {
            return Err(Error::Smoothness {
                have: self.smoothness,
                need: order as u8,
            });
        }
        Ok(self.partial(alpha, x))
    }

    /// `∂^α f(x)` without argument checks.
    pub(crate) fn partial(&self, alpha: &[usize], x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Gaussian { scale, precision } => {
                gaussian_partial(*scale, precision, self.dim, alpha, x)
            }
            Shape::Tensor(factors) => factors
                .iter()
                .zip(alpha)
                .zip(x)
                .map(|((f, &m), &xa)| f.deriv(m, xa))
                .product(),
            Shape::Quadratic { a, b, c } => quadratic_partial(a, b, *c, self.dim, alpha, x),
            Shape::Mollified { base, cov, rule } => mollified_partial(base, cov, rule, alpha, x),
        }
    }

    /// `∂^α f(x)` with a quadrature error estimate (zero for analytic shapes).
    pub(crate) fn partial_with_error(&self, alpha: &[usize], x: &[f64]) -> Result<(f64, f64)> {
        match &self.shape {
            Shape::Mollified { base, cov, rule } => {
                let full = mollified_partial(base, cov, rule, alpha, x);
                let half = gauss_hermite((rule.order() / 2).max(1))?;
                let coarse = mollified_partial(base, cov, &half, alpha, x);
                Ok((full, (full - coarse).abs()))
            }
            _ => Ok((self.partial(alpha, x), 0.0)),
        }
    }

    /// Row-major Hessian `D²f(x)`.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mut alpha = [0usize; MAX_DIM];
        for i in 0..d {
            for j in i..d {
                alpha[i] += 1;
                alpha[j] += 1;
                let v = self.partial(&alpha[..d], x);
                alpha[i] -= 1;
                alpha[j] -= 1;
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
    }

    /// Certified suprema of `|∂^α f|` for every `|α| = order`.
    pub fn sup_entries(&self, order: usize) -> Result<&[SupEntry]> {
        if order > MAX_ORDER {
            return Err(Error::DerivativeOrder(order));
        }
        Ok(self.sups[order].get_or_init(|| norms::compute(self, order)))
    }

    /// `‖f‖_{C^k} = Σ_{|α| ≤ k} sup |∂^α f|`; `+∞` when `f` is unbounded or
    /// less smooth than `k`.
    pub fn ck_norm(&self, k: usize) -> Result<f64> {
        let mut total = 0.0;
        for m in 0..=k {
            total += self.sup_entries(m)?.iter().map(|e| e.sup).sum::<f64>();
        }
        Ok(total)
    }

    /// Upper bound on the `C^k` norm: grid maximum plus certification slack.
    pub fn ck_norm_upper(&self, k: usize) -> Result<f64> {
        let mut total = 0.0;
        for m in 0..=k {
            total += self
                .sup_entries(m)?
                .iter()
                .map(|e| e.sup + e.slack)
                .sum::<f64>();
        }
        Ok(total)
    }

    /// Certification slack of the `C^k` norm.
    pub fn ck_slack(&self, k: usize) -> Result<f64> {
        Ok(self.ck_norm_upper(k)? - self.ck_norm(k)?)
    }

    /// `sup |f|`.
    pub fn sup_norm(&self) -> f64 {
        self.ck_norm(0).expect("order 0 is always valid")
    }

    /// Bound on `sup_{|x| ≥ r} |f(x)|`.
    pub fn tail_sup(&self, r: f64) -> f64 {
        let r = r.max(0.0);
        match &self.shape {
            Shape::Gaussian { scale, precision } => {
                let p = small_to(precision, self.dim);
                let lmin = nalgebra::SymmetricEigen::new(p).eigenvalues.min();
                scale.abs() * (-0.5 * lmin * r * r).exp()
            }
            Shape::Tensor(factors) => {
                let d = factors.len();
                let u = r / (d as f64).sqrt();
                let sups: Vec<f64> = factors.iter().map(|f| f.sup_abs(0).0).collect();
                (0..d)
                    .map(|a| {
                        let rest: f64 = (0..d).filter(|&b| b != a).map(|b| sups[b]).product();
                        factors[a].envelope(0, u).min(sups[a]) * rest
                    })
                    .fold(0.0, f64::max)
            }
            Shape::Quadratic { c, .. } => match self.decay {
                Decay::TestOnlyNonDecaying => f64::INFINITY,
                _ => c.abs(),
            },
            Shape::Mollified { base, cov, .. } => {
                let sup = base.sup_norm();
                let lmax = cov.lambda_max();
                (1..10)
                    .map(|i| {
                        let rho = r * i as f64 / 10.0;
                        base.tail_sup(r - rho) + sup * gaussian_norm_tail(self.dim, lmax, rho)
                    })
                    .fold(f64::INFINITY, f64::min)
                    .min(sup)
            }
        }
    }

    /// Radius of the box on which norm grids are laid out.
    pub(crate) fn envelope_radius(&self) -> f64 {
        match &self.shape {
            Shape::Gaussian { precision, .. } => {
                let p = small_to(precision, self.dim);
                let lmin = nalgebra::SymmetricEigen::new(p).eigenvalues.min();
                10.0 / lmin.sqrt()
            }
            Shape::Tensor(factors) => factors
                .iter()
                .map(|f| (0..=MAX_ORDER).map(|m| f.radius(m)).fold(0.0, f64::max))
                .fold(0.0, f64::max),
            Shape::Quadratic { .. } => 1.0,
            Shape::Mollified { base, cov, .. } => {
                base.envelope_radius() + 8.0 * cov.lambda_max().sqrt()
            }
        }
    }

    /// Gaussian mollification `f^t(x) = E f(x + √t ξ)`, `ξ ~ N(0, Σ)`.
    pub fn mollify(self: &Arc<Self>, t: f64, cov: &Covariance) -> Result<TestFunction> {
        self.mollify_with_order(t, cov, DEFAULT_RULE_ORDER)
    }

    pub fn mollify_with_order(
        self: &Arc<Self>,
        t: f64,
        cov: &Covariance,
        order: usize,
    ) -> Result<TestFunction> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(invalid(format!(
                "mollification time must be positive, got {t}"
            )));
        }
        check_dim(self.dim, cov.dim())?;
        let spread = cov.scaled(t)?;
        let name = format!("{}^t", self.name);
        match &self.shape {
            Shape::Gaussian { scale, precision } => {
                let p = small_to(precision, self.dim);
                let (p_inv, det_p) = spd_inverse(&p)?;
                let m = p_inv + spread.matrix();
                let (p_new, det_m) = spd_inverse(&m)?;
                TestFunction::gaussian(name, scale / (det_p * det_m).sqrt(), &p_new)
            }
            Shape::Quadratic { a, b, c } => {
                let am = small_to(a, self.dim);
                let shift = (am * spread.matrix()).trace();
                TestFunction::quadratic(name, &small_to(a, self.dim), &b[..self.dim], c + shift)
            }
            Shape::Mollified {
                base, cov: inner, ..
            } => {
                let total = inner.add(&spread)?;
                base.mollified_by(name, total, order)
            }
            Shape::Tensor(_) => self.mollified_by(name, spread, order),
        }
    }

    fn mollified_by(
        self: &Arc<Self>,
        name: String,
        cov: Covariance,
        order: usize,
    ) -> Result<TestFunction> {
        if self.dim > 3 {
            return Err(invalid("quadrature mollification supports d ≤ 3"));
        }
        let rule = gauss_hermite(order)?;
        let decay = self.decay;
        let smoothness = self.smoothness;
        let shape = Shape::Mollified {
            base: self.clone(),
            cov,
            rule,
        };
        Ok(TestFunction::build(
            name, self.dim, shape, smoothness, decay,
        ))
    }
}

fn gaussian_partial(scale: f64, p: &Small, d: usize, alpha: &[usize], x: &[f64]) -> f64 {
    let mut y = [0.0; MAX_DIM];
    let mut quad = 0.0;
    for i in 0..d {
        let mut acc = 0.0;
        for j in 0..d {
            acc += p[i][j] * x[j];
        }
        y[i] = acc;
        quad += x[i] * acc;
    }
    let g = scale * (-0.5 * quad).exp();
    let (ax, m) = axes_of(alpha);
    let [i, j, k, l] = ax;
    let poly = match m {
        0 => 1.0,
        1 => -y[i],
        2 => y[i] * y[j] - p[i][j],
        3 => -y[i] * y[j] * y[k] + p[i][j] * y[k] + p[i][k] * y[j] + p[j][k] * y[i],
        4 => {
            y[i] * y[j] * y[k] * y[l]
                - p[i][j] * y[k] * y[l]
                - p[i][k] * y[j] * y[l]
                - p[i][l] * y[j] * y[k]
                - p[j][k] * y[i] * y[l]
                - p[j][l] * y[i] * y[k]
                - p[k][l] * y[i] * y[j]
                + p[i][j] * p[k][l]
                + p[i][k] * p[j][l]
                + p[i][l] * p[j][k]
        }
        _ => panic!("derivative order {m} > 4"),
    };
    poly * g
}

fn quadratic_partial(
    a: &Small,
    b: &[f64; MAX_DIM],
    c: f64,
    d: usize,
    alpha: &[usize],
    x: &[f64],
) -> f64 {
    let (ax, m) = axes_of(alpha);
    match m {
        0 => {
            let mut v = c;
            for i in 0..d {
                v += b[i] * x[i];
                for j in 0..d {
                    v += a[i][j] * x[i] * x[j];
                }
            }
            v
        }
        1 => {
            let i = ax[0];
            b[i] + 2.0 * (0..d).map(|j| a[i][j] * x[j]).sum::<f64>()
        }
        2 => 2.0 * a[ax[0]][ax[1]],
        _ => 0.0,
    }
}

fn mollified_partial(
    base: &TestFunction,
    cov: &Covariance,
    rule: &GaussHermite,
    alpha: &[usize],
    x: &[f64],
) -> f64 {
    let d = x.len();
    let mut y = [0.0; MAX_DIM];
    let mut shifted = [0.0; MAX_DIM];
    if d == 1 {
        let l = cov.cholesky_lower()[(0, 0)];
        return rule.expect(|z| {
            shifted[0] = x[0] + l * z;
            base.partial(alpha, &shifted[..1])
        });
    }
    rule.expect_tensor(d, |z| {
        cov.transform(z, &mut y[..d]);
        for a in 0..d {
            shifted[a] = x[a] + y[a];
        }
        base.partial(alpha, &shifted[..d])
    })
}

/// Catalog constructor for `{"name": ..., "params": {...}}` specs.
///
/// `gauss_bump {a, dim}`, `sine_bump {omega, dim}`, `tensor_bump {factors}`,
/// `cubic_bump {dim}`, `constant {c, dim}` and the unbounded test-only
/// `quadratic {scale, dim}` (`scale · |x|²`).
pub fn make_test_function(spec: &FamilySpec) -> Result<TestFunction> {
    let mut params = Params::new(spec);
    let dim_of = |params: &mut Params| -> Result<usize> {
        let d = params.usize("dim", 1)?;
        if d == 0 || d > MAX_DIM {
            return Err(params.error(format!("`dim` must lie in 1..={MAX_DIM}")));
        }
        Ok(d)
    };
    let f = match spec.name.as_str() {
        "gauss_bump" => {
            let a = params.f64("a", 1.0)?;
            let d = dim_of(&mut params)?;
            if !(a > 0.0) {
                return Err(params.error("`a` must be positive"));
            }
            TestFunction::gaussian(
                "gauss_bump",
                1.0,
                &DMatrix::from_diagonal_element(d, d, 1.0 / (a * a)),
            )?
        }
        "sine_bump" => {
            let omega = params.f64("omega", 1.0)?;
            let d = dim_of(&mut params)?;
            let mut factors = vec![Factor::SineGauss { omega }];
            factors.extend(std::iter::repeat_n(Factor::Gauss { a: 1.0 }, d - 1));
            TestFunction::tensor("sine_bump", factors)?
        }
        "cubic_bump" => {
            let d = dim_of(&mut params)?;
            TestFunction::tensor("cubic_bump", vec![Factor::CubicBump; d])?
        }
        "tensor_bump" => {
            let list = params
                .list("factors")
                .ok_or_else(|| params.error("`factors` must be a list"))?;
            let mut factors = Vec::with_capacity(list.len());
            for item in list {
                let fs: FamilySpec = serde_json::from_value(item.clone())
                    .map_err(|e| params.error(format!("bad factor entry: {e}")))?;
                let mut fp = Params::new(&fs);
                let factor = match fs.name.as_str() {
                    "gauss" => Factor::Gauss {
                        a: fp.f64("a", 1.0)?,
                    },
                    "sine_gauss" => Factor::SineGauss {
                        omega: fp.f64("omega", 1.0)?,
                    },
                    "cubic" => Factor::CubicBump,
                    other => {
                        return Err(Error::UnknownFamily {
                            kind: "tensor factor",
                            name: other.to_string(),
                        })
                    }
                };
                fp.finish()?;
                factors.push(factor);
            }
            TestFunction::tensor("tensor_bump", factors)?
        }
        "constant" => {
            let c = params.f64("c", 1.0)?;
            let d = dim_of(&mut params)?;
            TestFunction::quadratic("constant", &DMatrix::zeros(d, d), &vec![0.0; d], c)?
        }
        "quadratic" => {
            let s = params.f64("scale", 1.0)?;
            let d = dim_of(&mut params)?;
            TestFunction::quadratic(
                "quadratic",
                &DMatrix::from_diagonal_element(d, d, s),
                &vec![0.0; d],
                0.0,
            )?
        }
        other => {
            return Err(Error::UnknownFamily {
                kind: "test function",
                name: other.to_string(),
            })
        }
    };
    params.finish()?;
    Ok(f)
}
