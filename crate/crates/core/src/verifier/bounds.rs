use rayon::prelude::*;
use serde::Serialize;

use crate::distributions::StepDistribution;
use crate::error::{check_dim, invalid, Error, Result};
use crate::heatref::HeatReference;
use crate::scheme::{Grid, LatticeField};
use crate::testfn::TestFunction;
use crate::MAX_DIM;

/// Ratios at or below this count as satisfied bounds.
const RATIO_SLACK: f64 = 1e-8;

/// `sup_x |E g(x + Y) - g(x)|` against `‖g‖_{C²} tr Cov(Y) / 2` for
/// `Y = scale · X`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma21Report {
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// `‖g‖_{C²} = ∞`, so the inequality says nothing.
    pub vacuous: bool,
}

pub fn lemma21_check(
    g: &TestFunction,
    dist: &StepDistribution,
    scale: f64,
    grid: &Grid,
) -> Result<Lemma21Report> {
    check_dim(g.dim(), dist.dim())?;
    check_dim(g.dim(), grid.dim())?;
    if g.smoothness() < 2 {
        return Err(Error::Smoothness {
            have: g.smoothness(),
            need: 2,
        });
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid("step scale must be positive"));
    }
    let step = dist.step_pmf()?;
    let d = g.dim();
    let shifts: Vec<(f64, Vec<f64>)> = (0..step.len())
        .map(|j| {
            (
                step.masses()[j],
                step.point(j).iter().map(|w| w * scale).collect(),
            )
        })
        .collect();
    let lhs = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut x = [0.0; MAX_DIM];
            let mut y = [0.0; MAX_DIM];
            grid.point_into(i, &mut x[..d]);
            let base = g.eval(&x[..d]);
            let mut acc = 0.0;
            for (p, w) in &shifts {
                for a in 0..d {
                    y[a] = x[a] + w[a];
                }
                acc += p * (g.eval(&y[..d]) - base);
            }
            acc.abs()
        })
        .reduce(|| 0.0, f64::max);
    let norm = g.ck_norm(2)?;
    let rhs = norm * scale * scale * dist.covariance().trace() / 2.0;
    let vacuous = !norm.is_finite();
    Ok(Lemma21Report {
        lhs,
        rhs,
        pass: vacuous || lhs <= rhs + 1e-10,
        vacuous,
    })
}

/// Largest observed `lhs` of a bound, its right-hand side and their ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundRatio {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

impl BoundRatio {
    fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 || rhs.is_infinite() {
            0.0
        } else {
            lhs / rhs
        };
        Self { lhs, rhs, ratio }
    }

    pub fn holds(&self) -> bool {
        self.ratio <= 1.0 + RATIO_SLACK
    }
}

/// The three time-regularity bounds, checked on a field:
/// - `|u_n(x, (k+1)/n) - u_n(x, k/n)| ≤ ‖f‖_{C²} tr Σ / (2n)`
/// - `|tr D²u_n(x, (k+1)/n) - tr D²u_n(x, k/n)| ≤ d ‖f‖_{C⁴} tr Σ / (2n)`
/// - `|u(x, t+h) - u(x, t)| ≤ h ‖f‖_{C²} tr Σ / 2` at `t = k/n`, `h = 1/n`
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundAudit {
    pub n: usize,
    pub time_step: BoundRatio,
    pub hessian_step: Option<BoundRatio>,
    pub heat_step: BoundRatio,
    /// Some norm on a right-hand side is infinite.
    pub vacuous: bool,
    pub pass: bool,
}

pub fn cor22_audit(field: &LatticeField, heat: &HeatReference) -> Result<BoundAudit> {
    let scheme = field.scheme();
    let f = scheme.test_function();
    check_dim(f.dim(), heat.test_function().dim())?;
    super::check_heat(scheme.distribution(), heat)?;
    let n = field.n();
    let d = f.dim();
    let tr = scheme.distribution().covariance().trace();
    let c2 = f.ck_norm(2)?;
    let k_max = field.k_max();

    let mut time_lhs: f64 = 0.0;
    for k in 0..k_max {
        for (a, b) in field.column(k + 1).iter().zip(field.column(k)) {
            time_lhs = time_lhs.max((a - b).abs());
        }
    }
    let time_step = BoundRatio::new(time_lhs, c2 * tr / (2.0 * n as f64));

    let hessian_step = if field.max_deriv() >= 2 && f.smoothness() >= 4 {
        let c4 = f.ck_norm(4)?;
        let mut lhs: f64 = 0.0;
        let mut prev = field.laplacian(0)?;
        for k in 0..k_max {
            let next = field.laplacian(k + 1)?;
            for (a, b) in next.iter().zip(&prev) {
                lhs = lhs.max((a - b).abs());
            }
            prev = next;
        }
        Some(BoundRatio::new(lhs, d as f64 * c4 * tr / (2.0 * n as f64)))
    } else {
        None
    };

    let grid = field.grid();
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let heat_column = |k: usize| -> Result<Vec<f64>> {
        let slice = heat.slice(k as f64 / n as f64)?;
        Ok(points.par_iter().map(|x| slice.eval(x)).collect())
    };
    let mut heat_lhs: f64 = 0.0;
    let mut prev = heat_column(0)?;
    for k in 0..k_max {
        let next = heat_column(k + 1)?;
        for (a, b) in next.iter().zip(&prev) {
            heat_lhs = heat_lhs.max((a - b).abs());
        }
        prev = next;
    }
    let heat_step = BoundRatio::new(heat_lhs, c2 * tr / (2.0 * n as f64));

    let vacuous = !c2.is_finite() || hessian_step.is_some_and(|h| h.rhs.is_infinite());
    let pass = time_step.holds() && heat_step.holds() && hessian_step.is_none_or(|h| h.holds());
    Ok(BoundAudit {
        n,
        time_step,
        hessian_step,
        heat_step,
        vacuous,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::distributions::make_step_distribution;
    use crate::heatref::HeatOptions;
    use crate::scheme::{LatticeScheme, SchemeOptions};
    use crate::testfn::make_test_function;
    use crate::FamilySpec;

    #[test]
    fn lemma21_examples() {
        let grid = Grid::uniform(1, 6.0, 0.01).unwrap();
        let rad = make_step_distribution(&FamilySpec::new("rademacher")).unwrap();
        let c = make_test_function(&FamilySpec::new("constant").with("c", 2.0)).unwrap();
        let r = lemma21_check(&c, &rad, 0.5, &grid).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.pass && !r.vacuous);

        let g = make_test_function(&FamilySpec::new("gauss_bump")).unwrap();
        let r = lemma21_check(&g, &rad, 0.5, &grid).unwrap();
        // two-point oracle: ½(g(x-½) + g(x+½)) - g(x), largest at x = 0
        let at0 = (-0.125f64).exp() - 1.0;
        assert!((r.lhs - at0.abs()).abs() < 1e-12, "{r:?}");
        assert!((r.rhs - g.ck_norm(2).unwrap() * 0.125).abs() < 1e-15);
        assert!(r.pass);

        let q = make_test_function(&FamilySpec::new("quadratic")).unwrap();
        let r = lemma21_check(&q, &rad, 1.0, &grid).unwrap();
        assert!((r.lhs - 1.0).abs() < 1e-12);
        assert!(r.vacuous && r.pass);
    }

    #[test]
    fn audit_rademacher_gauss_bump() {
        let f = Arc::new(make_test_function(&FamilySpec::new("gauss_bump")).unwrap());
        let d = Arc::new(make_step_distribution(&FamilySpec::new("rademacher")).unwrap());
        let s = Arc::new(
            LatticeScheme::new(f.clone(), d.clone(), 16, 32, SchemeOptions::default()).unwrap(),
        );
        let field = LatticeField::build(s, 8.0, 0.05, 2).unwrap();
        let heat = HeatReference::new(f, d.covariance().clone(), HeatOptions::default()).unwrap();
        let a = cor22_audit(&field, &heat).unwrap();
        assert!(a.pass && !a.vacuous, "{a:?}");
        assert!(a.time_step.ratio > 0.0 && a.time_step.ratio <= 1.0);
        assert!(a.hessian_step.unwrap().ratio <= 1.0);
        assert!(a.heat_step.ratio <= 1.0);
    }

    #[test]
    fn audit_quadratic_is_vacuous() {
        let f = Arc::new(make_test_function(&FamilySpec::new("quadratic")).unwrap());
        let d = Arc::new(make_step_distribution(&FamilySpec::new("rademacher")).unwrap());
        let s = Arc::new(
            LatticeScheme::new(f.clone(), d.clone(), 4, 8, SchemeOptions::default()).unwrap(),
        );
        let field = LatticeField::build(s, 2.0, 0.5, 2).unwrap();
        let heat = HeatReference::new(f, d.covariance().clone(), HeatOptions::default()).unwrap();
        let a = cor22_audit(&field, &heat).unwrap();
        assert!(a.vacuous && a.pass);
        // u_n(x, (k+1)/n) - u_n(x, k/n) = tr Σ / n for x²
        assert!((a.time_step.lhs - 0.25).abs() < 1e-12);
    }
}
