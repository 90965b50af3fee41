use serde::Serialize;

use super::Grid;
use crate::distributions::{fold_walks, StepDistribution};
use crate::error::{check_dim, invalid, Result};
use crate::numeric::RunningMoments;
use crate::testfn::TestFunction;
use crate::MAX_DIM;

/// Monte Carlo estimate of `u_n(x, t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

impl From<RunningMoments> for McEstimate {
    fn from(m: RunningMoments) -> Self {
        Self {
            estimate: m.mean,
            stderr: m.stderr(),
            samples: m.count as usize,
        }
    }
}

/// `k = ⌊nt⌋`, guarded against `t = k/n` rounding just below `k`.
pub(crate) fn time_index(n: usize, t: f64) -> Result<usize> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(invalid(format!("time must be finite and ≥ 0, got {t}")));
    }
    Ok((n as f64 * t + 1e-9).floor() as usize)
}

/// Sample mean of `f(x + S_⌊nt⌋/√n)` over `samples` seeded walks.
pub fn mc_value(
    f: &TestFunction,
    dist: &StepDistribution,
    n: usize,
    x: &[f64],
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_dim(f.dim(), x.len())?;
    check_dim(f.dim(), dist.dim())?;
    if n == 0 {
        return Err(invalid("scale n must be positive"));
    }
    if samples < 100 {
        return Err(invalid(format!(
            "Monte Carlo needs at least 100 samples, got {samples}"
        )));
    }
    let k = time_index(n, t)?;
    if k == 0 {
        return Ok(McEstimate {
            estimate: f.eval(x),
            stderr: 0.0,
            samples,
        });
    }
    let d = f.dim();
    let scale = 1.0 / (n as f64).sqrt();
    let moments = fold_walks(
        dist,
        &[k],
        samples,
        seed,
        RunningMoments::default,
        |acc, _, pos| {
            let mut y = [0.0; MAX_DIM];
            for a in 0..d {
                y[a] = x[a] + pos[a] * scale;
            }
            acc.push(f.eval(&y[..d]));
        },
        |a, b| a.merge(&b),
    )?;
    Ok(moments.into())
}

/// Monte Carlo estimates of `u_n(·, k/n)` on a grid for several `k`, with the
/// same walks reused for every grid point and time.
#[derive(Clone, Debug, Serialize)]
pub struct McField {
    pub n: usize,
    pub ks: Vec<usize>,
    /// `estimates[c][i]` for time `ks[c]` and grid point `i`
    pub estimates: Vec<Vec<McEstimate>>,
}

impl McField {
    pub fn max_stderr(&self) -> f64 {
        self.estimates
            .iter()
            .flatten()
            .fold(0.0, |m, e| m.max(e.stderr))
    }
}

pub fn mc_field(
    f: &TestFunction,
    dist: &StepDistribution,
    n: usize,
    grid: &Grid,
    ks: &[usize],
    samples: usize,
    seed: u64,
) -> Result<McField> {
    check_dim(f.dim(), grid.dim())?;
    check_dim(f.dim(), dist.dim())?;
    if n == 0 {
        return Err(invalid("scale n must be positive"));
    }
    if samples < 100 {
        return Err(invalid(format!(
            "Monte Carlo needs at least 100 samples, got {samples}"
        )));
    }
    let d = f.dim();
    let scale = 1.0 / (n as f64).sqrt();
    let points: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i)).collect();
    let cells = points.len();
    let moments = fold_walks(
        dist,
        ks,
        samples,
        seed,
        || vec![RunningMoments::default(); ks.len() * cells],
        |acc, c, pos| {
            let mut y = [0.0; MAX_DIM];
            for (i, x) in points.iter().enumerate() {
                for a in 0..d {
                    y[a] = x[a] + pos[a] * scale;
                }
                acc[c * cells + i].push(f.eval(&y[..d]));
            }
        },
        |a, b| a.iter().zip(&b).map(|(p, q)| p.merge(q)).collect(),
    )?;
    let estimates = moments
        .chunks(cells)
        .map(|row| row.iter().map(|&m| m.into()).collect())
        .collect();
    Ok(McField {
        n,
        ks: ks.to_vec(),
        estimates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::make_step_distribution;
    use crate::testfn::make_test_function;
    use crate::FamilySpec;

    #[test]
    fn degenerate_time_and_reproducibility() {
        let f = make_test_function(&FamilySpec::new("gauss_bump")).unwrap();
        let d = make_step_distribution(&FamilySpec::new("laplace")).unwrap();
        let e = mc_value(&f, &d, 16, &[0.4], 0.0, 100, 1).unwrap();
        assert_eq!(e.estimate, f.eval(&[0.4]));
        assert_eq!(e.stderr, 0.0);
        let a = mc_value(&f, &d, 16, &[0.0], 1.0, 5000, 3).unwrap();
        let b = mc_value(&f, &d, 16, &[0.0], 1.0, 5000, 3).unwrap();
        assert_eq!(a, b);
        assert!(mc_value(&f, &d, 16, &[0.0], 1.0, 99, 3).is_err());
    }

    #[test]
    fn rademacher_point_within_three_stderr() {
        let f = make_test_function(&FamilySpec::new("gauss_bump")).unwrap();
        let d = make_step_distribution(&FamilySpec::new("rademacher")).unwrap();
        let e = mc_value(&f, &d, 4, &[0.0], 1.0, 200_000, 17).unwrap();
        let exact = (6.0 + 8.0 * (-0.5f64).exp() + 2.0 * (-2.0f64).exp()) / 16.0;
        assert!((e.estimate - exact).abs() <= 3.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn field_agrees_with_point_estimates() {
        let f = make_test_function(&FamilySpec::new("gauss_bump")).unwrap();
        let d = make_step_distribution(&FamilySpec::new("uniform")).unwrap();
        let grid = Grid::uniform(1, 1.0, 0.5).unwrap();
        let fld = mc_field(&f, &d, 8, &grid, &[0, 4, 8], 4096, 5).unwrap();
        assert_eq!(fld.estimates.len(), 3);
        // same seed and a single checkpoint reproduce mc_value exactly
        let single = mc_field(&f, &d, 8, &grid, &[8], 4096, 5).unwrap();
        let point = mc_value(&f, &d, 8, &grid.point(2), 1.0, 4096, 5).unwrap();
        assert_eq!(single.estimates[0][2], point);
        assert_eq!(fld.estimates[0][1].stderr, 0.0);
    }
}
