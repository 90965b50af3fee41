//! Centred step laws `X_i`, their exact convolution powers and reproducible
//! sampling.
//!
//! Lattice laws carry an exact pmf on a common rational grid; continuous laws
//! carry a density and a sampler and are rejected by every exact operation.

mod lattice;
mod sampling;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

pub(crate) use lattice::Dense;
pub use lattice::{snap_to_lattice, LatticePmf, DEFAULT_BUDGET};
pub(crate) use sampling::fold_walks;
pub use sampling::sample_walk;

use crate::error::{invalid, Error, Result};
use crate::linalg::Covariance;
use crate::numeric::{adaptive_simpson, gauss_hermite, half_line_integral, HalfLine};
use crate::params::{FamilySpec, Params};

const CENTER_TOL: f64 = 1e-12;
const MASS_TOL: f64 = 1e-12;

/// Continuous step-law families.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ContinuousLaw {
    /// Uniform on `[-b, b]`.
    Uniform { half_width: f64 },
    /// Density `e^{-|x|/b} / (2b)`.
    Laplace { scale: f64 },
    /// Density `(α x₀^α / 2) |x|^{-α-1}` on `|x| ≥ x₀`.
    ParetoSym { alpha: f64, x0: f64 },
    /// `N(0, Σ)` in any supported dimension.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Lattice(LatticePmf),
    Continuous(ContinuousLaw),
}

/// A centred step law with non-degenerate covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDistribution {
    name: String,
    dim: usize,
    backend: Backend,
    mean: Vec<f64>,
    cov: Covariance,
}

impl StepDistribution {
    /// Lattice law from real support points, snapped to a common rational grid.
    pub fn lattice(name: impl Into<String>, points: &[Vec<f64>], probs: &[f64]) -> Result<Self> {
        let (spacing, coords) = snap_to_lattice(points)?;
        Self::lattice_from_coords(name, spacing, &coords, probs)
    }

    pub fn lattice_from_coords(
        name: impl Into<String>,
        spacing: Vec<f64>,
        coords: &[Vec<i64>],
        probs: &[f64],
    ) -> Result<Self> {
        let name = name.into();
        let mut seen = coords.to_vec();
        seen.sort();
        seen.dedup();
        if seen.len() != coords.len() {
            return Err(Error::InvalidParameter {
                family: name,
                reason: "support points must be distinct".into(),
            });
        }
        let pmf = LatticePmf::from_coords(spacing, coords, probs, 1)?;
        let total = pmf.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter {
                family: name,
                reason: format!("probabilities sum to {total}, not 1"),
            });
        }
        let mean = pmf.mean();
        if mean.iter().any(|m| m.abs() > CENTER_TOL) {
            return Err(Error::NotCentered(mean));
        }
        let cov = Covariance::new(pmf.covariance())?;
        Ok(Self {
            name,
            dim: pmf.dim(),
            backend: Backend::Lattice(pmf),
            mean,
            cov,
        })
    }

    fn continuous(name: impl Into<String>, law: ContinuousLaw, cov: Covariance) -> Self {
        let dim = cov.dim();
        Self {
            name: name.into(),
            dim,
            backend: Backend::Continuous(law),
            mean: vec![0.0; dim],
            cov,
        }
    }

    pub fn gaussian(cov: Covariance) -> Self {
        Self::continuous("gaussian", ContinuousLaw::Gaussian, cov)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn backend(&self) -> &Backend {
        &self.backend
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance {
        &self.cov
    }

    pub fn is_lattice(&self) -> bool {
        matches!(self.backend, Backend::Lattice(_))
    }

    /// Law of a single step, for lattice backends.
    pub fn step_pmf(&self) -> Result<&LatticePmf> {
        match &self.backend {
            Backend::Lattice(p) => Ok(p),
            Backend::Continuous(_) => Err(Error::ContinuousBackend(self.name.clone())),
        }
    }

    /// Exact law of `S_k`; `k = 0` gives the point mass at the origin.
    pub fn convolve_power(&self, k: usize, budget: usize) -> Result<LatticePmf> {
        let step = self.step_pmf()?;
        let mut dense = Dense::from_pmf(&LatticePmf::delta(step.spacing().to_vec()));
        let needed = dense.projected_cells(step, k);
        if needed > budget {
            return Err(Error::BudgetExceeded { needed, budget });
        }
        for _ in 0..k {
            dense = dense.convolve(step, budget)?;
        }
        Ok(dense.into_pmf(step.spacing().to_vec(), k))
    }

    /// `E|X_1|^p` (Euclidean norm); `+∞` when the moment diverges.
    pub fn moment_abs(&self, p: f64) -> Result<f64> {
        if !(p >= 0.0) || !p.is_finite() {
            return Err(invalid(format!(
                "moment order must be finite and ≥ 0, got {p}"
            )));
        }
        if p == 0.0 {
            return Ok(1.0);
        }
        match &self.backend {
            Backend::Lattice(pmf) => Ok((0..pmf.len())
                .map(|i| {
                    let r: f64 = pmf.point(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    pmf.masses()[i] * r.powf(p)
                })
                .sum()),
            Backend::Continuous(law) => continuous_moment(law, &self.cov, p),
        }
    }
}

fn continuous_moment(law: &ContinuousLaw, cov: &Covariance, p: f64) -> Result<f64> {
    let half = |density: &dyn Fn(f64) -> f64, start: f64, width: f64| -> Result<f64> {
        let g = |x: f64| x.powf(p) * density(x);
        match half_line_integral(&g, start, width, 1e-12)? {
            HalfLine::Finite(v) => Ok(2.0 * v),
            HalfLine::Divergent => Ok(f64::INFINITY),
        }
    };
    match *law {
        ContinuousLaw::Uniform { half_width: b } => {
            let g = |x: f64| x.powf(p) / (2.0 * b);
            Ok(2.0 * adaptive_simpson(&g, 0.0, b, 1e-14 * b.powf(p).max(1e-300))?)
        }
        ContinuousLaw::Laplace { scale: b } => half(&|x: f64| (-x / b).exp() / (2.0 * b), 0.0, b),
        ContinuousLaw::ParetoSym { alpha, x0 } => half(
            &|x: f64| 0.5 * alpha * x0.powf(alpha) * x.powf(-alpha - 1.0),
            x0,
            x0,
        ),
        ContinuousLaw::Gaussian if cov.dim() == 1 => {
            let s2 = cov.get(0, 0);
            half(
                &|x: f64| (-x * x / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt(),
                0.0,
                s2.sqrt(),
            )
        }
        ContinuousLaw::Gaussian => {
            let rule = gauss_hermite(64)?;
            let d = cov.dim();
            let mut y = vec![0.0; d];
            Ok(rule.expect_tensor(d, |z| {
                cov.transform(z, &mut y);
                y.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p)
            }))
        }
    }
}

/// Catalog constructor for `{"name": ..., "params": {...}}` specs.
///
/// Lattice: `rademacher`, `asym_lattice`, `lazy_walk {hold}`,
/// `correlated_lattice_2d {rho}`, `lattice {points, probs}`.
/// Continuous: `uniform {half_width}`, `laplace {scale}`,
/// `pareto_sym {alpha, x0}`, `gaussian {variance | cov}`.
pub fn make_step_distribution(spec: &FamilySpec) -> Result<StepDistribution> {
    let mut params = Params::new(spec);
    let dist = match spec.name.as_str() {
        "rademacher" => StepDistribution::lattice_from_coords(
            "rademacher",
            vec![1.0],
            &[vec![-1], vec![1]],
            &[0.5, 0.5],
        )?,
        "asym_lattice" => StepDistribution::lattice_from_coords(
            "asym_lattice",
            vec![1.0],
            &[vec![-1], vec![2]],
            &[2.0 / 3.0, 1.0 / 3.0],
        )?,
        "lazy_walk" => {
            let hold = params.f64("hold", 0.5)?;
            if !(0.0..1.0).contains(&hold) {
                return Err(params.error("`hold` must lie in [0, 1)"));
            }
            let side = 0.5 * (1.0 - hold);
            let mut coords = vec![vec![-1], vec![1]];
            let mut probs = vec![side, side];
            if hold > 0.0 {
                coords.push(vec![0]);
                probs.push(hold);
            }
            StepDistribution::lattice_from_coords("lazy_walk", vec![1.0], &coords, &probs)?
        }
        "correlated_lattice_2d" => {
            let rho = params.f64("rho", 0.5)?;
            if !(rho > -1.0 && rho < 1.0) {
                return Err(params.error("`rho` must lie in (-1, 1)"));
            }
            let same = 0.25 * (1.0 + rho);
            let cross = 0.25 * (1.0 - rho);
            StepDistribution::lattice_from_coords(
                "correlated_lattice_2d",
                vec![1.0, 1.0],
                &[vec![1, 1], vec![-1, -1], vec![1, -1], vec![-1, 1]],
                &[same, same, cross, cross],
            )?
        }
        "lattice" => {
            let points = params
                .matrix("points")?
                .ok_or_else(|| params.error("`points` is required"))?;
            let probs = params
                .vector("probs")?
                .ok_or_else(|| params.error("`probs` is required"))?;
            if points.len() != probs.len() {
                return Err(params.error("`points` and `probs` differ in length"));
            }
            StepDistribution::lattice("lattice", &points, &probs)?
        }
        "uniform" => {
            let b = params.f64("half_width", 3f64.sqrt())?;
            if !(b > 0.0) {
                return Err(params.error("`half_width` must be positive"));
            }
            StepDistribution::continuous(
                "uniform",
                ContinuousLaw::Uniform { half_width: b },
                Covariance::scalar(b * b / 3.0)?,
            )
        }
        "laplace" => {
            let b = params.f64("scale", 0.5f64.sqrt())?;
            if !(b > 0.0) {
                return Err(params.error("`scale` must be positive"));
            }
            StepDistribution::continuous(
                "laplace",
                ContinuousLaw::Laplace { scale: b },
                Covariance::scalar(2.0 * b * b)?,
            )
        }
        "pareto_sym" => {
            let alpha = params.f64("alpha", 2.5)?;
            if !(alpha > 2.0) {
                return Err(params.error("`alpha` must exceed 2 for a finite covariance"));
            }
            let x0 = params.f64("x0", ((alpha - 2.0) / alpha).sqrt())?;
            if !(x0 > 0.0) {
                return Err(params.error("`x0` must be positive"));
            }
            let var = alpha * x0 * x0 / (alpha - 2.0);
            StepDistribution::continuous(
                "pareto_sym",
                ContinuousLaw::ParetoSym { alpha, x0 },
                Covariance::scalar(var)?,
            )
        }
        "gaussian" | "normal" => {
            let cov = match params.matrix("cov")? {
                Some(rows) => Covariance::from_rows(&rows)?,
                None => Covariance::scalar(params.f64("variance", 1.0)?)?,
            };
            StepDistribution::gaussian(cov)
        }
        other => {
            return Err(Error::UnknownFamily {
                kind: "step distribution",
                name: other.to_string(),
            })
        }
    };
    params.finish()?;
    Ok(dist)
}

/// Covariance of an exact pmf as a plain matrix, for tests and reports.
pub fn pmf_covariance(pmf: &LatticePmf) -> DMatrix<f64> {
    pmf.covariance()
}
