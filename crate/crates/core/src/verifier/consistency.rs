use std::sync::Arc;

use serde::Serialize;

use super::{build_scheme, lattice_box, BoxChoice, VerifyOptions};
use crate::distributions::StepDistribution;
use crate::error::{Error, Result};
use crate::scheme::{expect_column, FineLattice, TaylorRemainder};
use crate::testfn::TestFunction;

/// Consistency error of the scheme over the box and `k = 0..=⌈nT⌉`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub n: usize,
    pub epsilon: f64,
    pub argmax_x: Vec<f64>,
    pub argmax_k: usize,
    pub k_max: usize,
    pub grid_step: Vec<f64>,
    #[serde(rename = "box")]
    pub box_choice: BoxChoice,
}

/// `ε_n = sup |n E[u_n(x + X/√n, k/n) - u_n(x, k/n)] - ½ tr(Σ D²u_n(x, k/n))|`.
///
/// The bracket is evaluated as `E G(x + S_k/√n)` with `G` the per-point
/// second-order Taylor remainder of `f` (see [`TaylorRemainder`]); summing
/// remainders instead of subtracting two O(1) quantities keeps the O(n^{-1/2})
/// result free of cancellation.
pub fn epsilon_n(
    f: &Arc<TestFunction>,
    dist: &Arc<StepDistribution>,
    n: usize,
    opts: &VerifyOptions,
) -> Result<EpsilonReport> {
    if f.smoothness() < 3 {
        return Err(Error::Smoothness {
            have: f.smoothness(),
            need: 3,
        });
    }
    let scheme = build_scheme(f, dist, n, opts)?;
    let box_choice = lattice_box(&scheme, opts);
    let (grid, fine) = FineLattice::for_scheme(&scheme, box_choice.half_width, box_choice.step, 0)?;
    let remainder = TaylorRemainder::new(f, dist, n)?;
    let table = fine.table(|z| remainder.at(z, |y| f.eval(y)));
    let bases = fine.grid_bases(&grid);

    let mut best = (0.0f64, 0usize, 0usize);
    for k in 0..=scheme.k_max() {
        let pmf = scheme.pmf(k);
        let col = expect_column(&table, &bases, &fine.offsets(pmf), pmf.masses());
        for (i, v) in col.iter().enumerate() {
            if v.abs() > best.0 {
                best = (v.abs(), i, k);
            }
        }
    }
    Ok(EpsilonReport {
        n,
        epsilon: best.0,
        argmax_x: grid.point(best.1),
        argmax_k: best.2,
        k_max: scheme.k_max(),
        grid_step: grid.steps().to_vec(),
        box_choice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::make_step_distribution;
    use crate::testfn::make_test_function;
    use crate::FamilySpec;

    fn parts(dist: &str, f: &str) -> (Arc<TestFunction>, Arc<StepDistribution>) {
        (
            Arc::new(make_test_function(&FamilySpec::new(f)).unwrap()),
            Arc::new(make_step_distribution(&FamilySpec::new(dist)).unwrap()),
        )
    }

    #[test]
    fn quadratic_has_no_consistency_error() {
        for dist in ["rademacher", "asym_lattice", "lazy_walk"] {
            let (f, d) = parts(dist, "quadratic");
            let r = epsilon_n(&f, &d, 8, &VerifyOptions::default()).unwrap();
            assert!(r.epsilon < 1e-12, "{dist}: {}", r.epsilon);
        }
    }

    #[test]
    fn matches_direct_generator_difference() {
        let (f, d) = parts("asym_lattice", "gauss_bump");
        let opts = VerifyOptions::default();
        let r = epsilon_n(&f, &d, 8, &opts).unwrap();
        let s = build_scheme(&f, &d, 8, &opts).unwrap();
        let x = &r.argmax_x;
        let direct = s.generator_mixture(x, r.argmax_k).unwrap()
            - 0.5 * s.hessian_trace(x, r.argmax_k).unwrap();
        assert!((direct.abs() - r.epsilon).abs() < 1e-10);
    }

    #[test]
    fn decreasing_for_rademacher() {
        let (f, d) = parts("rademacher", "gauss_bump");
        let eps: Vec<f64> = [4, 8, 16, 32]
            .iter()
            .map(|&n| {
                epsilon_n(&f, &d, n, &VerifyOptions::default())
                    .unwrap()
                    .epsilon
            })
            .collect();
        assert!(eps.windows(2).all(|w| w[1] < w[0]), "{eps:?}");
    }

    #[test]
    fn needs_third_derivatives() {
        let (f, d) = parts("rademacher", "cubic_bump");
        assert!(matches!(
            epsilon_n(&f, &d, 4, &VerifyOptions::default()),
            Err(Error::Smoothness { .. })
        ));
    }
}
