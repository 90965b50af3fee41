//! Numerical audits of the scheme against the heat reference: the one-step
//! and time-regularity bounds, the consistency error, sup-norm gaps and their
//! rates, and the penalised doubling functional.
//!
//! Every sup over `R^d` is taken over a box `[-L, L]^d` whose half-width is
//! chosen so that mass escaping the box can change the answer by at most a
//! fixed fraction of `‖f‖_∞`; the bound that justified `L` is reported.

mod bounds;
mod consistency;
mod doubling;
mod gap;
mod rate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use bounds::BoundRatio;
pub use bounds::{cor22_audit, lemma21_check, BoundAudit, Lemma21Report};
pub use consistency::{epsilon_n, EpsilonReport};
pub use doubling::{doubling_explore, DoublingCase, DoublingReport};
pub use gap::{
    sup_gap, sup_gap_mc, theorem12_check, GapBackend, GapReport, Theorem12Point, Theorem12Report,
};
pub use rate::{fit_rate, RateFit};

use crate::distributions::{Backend, ContinuousLaw, StepDistribution};
use crate::error::{Error, Result};
use crate::heatref::HeatReference;
use crate::numeric::gaussian_norm_tail;
use crate::scheme::{LatticeScheme, SchemeOptions};
use crate::testfn::{Decay, TestFunction};

/// Explicit `[-L, L]^d` box with grid step `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub half_width: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Time horizon `T`.
    pub horizon: f64,
    /// Requested grid step `δ`; exact fields snap it to the lattice.
    pub grid_step: f64,
    /// Escaping mass allowed, relative to `‖f‖_∞`.
    pub tail_target: f64,
    /// One-sided gaps at or below this are treated as zero.
    pub sigma_tol: f64,
    pub box_override: Option<BoxSpec>,
    pub scheme: SchemeOptions,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            horizon: 2.0,
            grid_step: 0.05,
            tail_target: 1e-6,
            sigma_tol: 1e-9,
            box_override: None,
            scheme: SchemeOptions::default(),
            mc_samples: 100_000,
            seed: 0,
        }
    }
}

impl VerifyOptions {
    /// `⌈nT⌉`
    pub fn k_max(&self, n: usize) -> usize {
        (n as f64 * self.horizon - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailMethod {
    /// Exact law of `S_k` (pruned mass counted as escaping).
    ExactPmf,
    /// Gaussian norm tail via the chi-square law.
    Gaussian,
    /// `P(|S_k/√n| ≥ ρ) ≤ T tr Σ / ρ²`.
    Chebyshev,
    /// Box given in the configuration.
    Override,
    /// Non-decaying test function: no tail bound exists, fixed box.
    Fixed,
}

/// The box a sup was taken over and the bound that justifies it:
/// `‖f‖_∞ P(|Y| ≥ ρ) + sup_{|y| ≥ L-ρ} |f(y)| ≤ tail_bound`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxChoice {
    pub half_width: f64,
    pub step: f64,
    pub rho: f64,
    pub tail_bound: f64,
    pub method: TailMethod,
    /// Whether `tail_bound ≤ tail_target · ‖f‖_∞`.
    pub certified: bool,
}

/// Half-width used for test functions without decay.
const FIXED_HALF_WIDTH: f64 = 2.0;
/// Largest box considered for exact and Gaussian tails.
const MAX_HALF_WIDTH: f64 = 60.0;
/// Largest box for Chebyshev-bounded Monte Carlo runs, where the bound
/// would otherwise ask for thousands of units.
const MC_MAX_HALF_WIDTH: f64 = 8.0;

/// Smallest `x ∈ [0, hi]` with `pred(x)`, assuming `pred` is monotone.
fn bisect(hi: f64, pred: impl Fn(f64) -> bool) -> Option<f64> {
    if !pred(hi) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, hi);
    if pred(lo) {
        return Some(lo);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if pred(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-6 {
            break;
        }
    }
    Some(hi)
}

pub(crate) fn select_box(
    f: &TestFunction,
    tail: impl Fn(f64) -> f64,
    method: TailMethod,
    opts: &VerifyOptions,
) -> BoxChoice {
    let sup = f.sup_norm();
    if let Some(b) = opts.box_override {
        let (rho, bound) = best_split(f, &tail, b.half_width);
        return BoxChoice {
            half_width: b.half_width,
            step: b.step,
            rho,
            tail_bound: bound,
            method: TailMethod::Override,
            certified: bound <= opts.tail_target * sup,
        };
    }
    if f.decay() != Decay::Vanishing || !sup.is_finite() {
        return BoxChoice {
            half_width: FIXED_HALF_WIDTH,
            step: opts.grid_step,
            rho: 0.0,
            tail_bound: f64::INFINITY,
            method: TailMethod::Fixed,
            certified: false,
        };
    }
    let cap = if method == TailMethod::Chebyshev {
        MC_MAX_HALF_WIDTH
    } else {
        MAX_HALF_WIDTH
    };
    let half = 0.5 * opts.tail_target * sup;
    let rho = bisect(cap, |r| sup * tail(r) <= half);
    let reach = bisect(cap, |r| f.tail_sup(r) <= half);
    let half_width = match (rho, reach) {
        (Some(a), Some(b)) if a + b <= cap => a + b,
        _ => cap,
    };
    let (rho, bound) = best_split(f, &tail, half_width);
    BoxChoice {
        half_width,
        step: opts.grid_step,
        rho,
        tail_bound: bound,
        method,
        certified: bound <= opts.tail_target * sup * (1.0 + 1e-9),
    }
}

/// `min_ρ ‖f‖_∞ P(ρ) + sup_{|y| ≥ L-ρ} |f|` over a scan of `ρ ∈ [0, L]`.
fn best_split(f: &TestFunction, tail: &impl Fn(f64) -> f64, half_width: f64) -> (f64, f64) {
    let sup = f.sup_norm();
    (0..=400)
        .map(|i| {
            let rho = half_width * i as f64 / 400.0;
            (rho, sup * tail(rho) + f.tail_sup(half_width - rho))
        })
        .fold((0.0, f64::INFINITY), |best, cur| {
            if cur.1 < best.1 {
                cur
            } else {
                best
            }
        })
}

/// `P(|√t ξ| ≥ ρ)` maximised over `t ≤ T`.
fn heat_tail(cov_lambda_max: f64, dim: usize, horizon: f64) -> impl Fn(f64) -> f64 {
    move |rho| gaussian_norm_tail(dim, horizon * cov_lambda_max, rho)
}

/// Box for an exact lattice scheme: both the walk and the Gaussian limit
/// must keep their escaping mass small.
pub fn lattice_box(scheme: &LatticeScheme, opts: &VerifyOptions) -> BoxChoice {
    let cov = scheme.distribution().covariance();
    let gauss = heat_tail(cov.lambda_max(), scheme.dim(), opts.horizon);
    select_box(
        scheme.test_function(),
        |r| scheme.max_tail_probability(r).max(gauss(r)),
        TailMethod::ExactPmf,
        opts,
    )
}

/// Box for a Monte Carlo run over `[0, T]`.
pub(crate) fn mc_box(f: &TestFunction, dist: &StepDistribution, opts: &VerifyOptions) -> BoxChoice {
    let cov = dist.covariance();
    let gauss = heat_tail(cov.lambda_max(), dist.dim(), opts.horizon);
    match dist.backend() {
        Backend::Continuous(ContinuousLaw::Gaussian) => {
            select_box(f, gauss, TailMethod::Gaussian, opts)
        }
        _ => {
            let tr = cov.trace();
            let t = opts.horizon;
            select_box(
                f,
                move |r| {
                    if r <= 0.0 {
                        1.0
                    } else {
                        (t * tr / (r * r)).min(1.0)
                    }
                },
                TailMethod::Chebyshev,
                opts,
            )
        }
    }
}

/// The reference must diffuse with the step law's covariance.
pub(crate) fn check_heat(dist: &StepDistribution, heat: &HeatReference) -> Result<()> {
    let (a, b) = (dist.covariance(), heat.covariance());
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let diff = (a.matrix() - b.matrix()).abs().max();
    if diff > 1e-12 * a.lambda_max().max(1.0) {
        return Err(Error::Hypothesis(format!(
            "heat reference covariance differs from the covariance of `{}`",
            dist.name()
        )));
    }
    Ok(())
}

/// Exact scheme up to `k = ⌈nT⌉`.
pub fn build_scheme(
    f: &Arc<TestFunction>,
    dist: &Arc<StepDistribution>,
    n: usize,
    opts: &VerifyOptions,
) -> Result<Arc<LatticeScheme>> {
    Ok(Arc::new(LatticeScheme::new(
        f.clone(),
        dist.clone(),
        n,
        opts.k_max(n),
        opts.scheme,
    )?))
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
    fn exact_box_is_certified_and_modest() {
        let (f, d) = parts("asym_lattice", "gauss_bump");
        let opts = VerifyOptions::default();
        let s = build_scheme(&f, &d, 16, &opts).unwrap();
        let b = lattice_box(&s, &opts);
        assert!(b.certified, "{b:?}");
        assert!(b.half_width > 8.0 && b.half_width < 25.0, "{b:?}");
        assert!(b.tail_bound <= 1e-6);
    }

    #[test]
    fn chebyshev_box_is_capped_and_honest() {
        let (f, d) = parts("laplace", "gauss_bump");
        let b = mc_box(&f, &d, &VerifyOptions::default());
        assert_eq!(b.half_width, MC_MAX_HALF_WIDTH);
        assert!(!b.certified);
        assert!(b.tail_bound > 1e-6 && b.tail_bound < 1.0);
        let (f, d) = parts("gaussian", "gauss_bump");
        let b = mc_box(&f, &d, &VerifyOptions::default());
        assert!(b.certified && b.method == TailMethod::Gaussian);
    }

    #[test]
    fn non_decaying_uses_fixed_box_unless_overridden() {
        let (f, d) = parts("rademacher", "quadratic");
        let mut opts = VerifyOptions::default();
        let s = build_scheme(&f, &d, 4, &opts).unwrap();
        assert_eq!(lattice_box(&s, &opts).method, TailMethod::Fixed);
        opts.box_override = Some(BoxSpec {
            half_width: 3.0,
            step: 0.5,
        });
        let b = lattice_box(&s, &opts);
        assert_eq!(
            (b.half_width, b.step, b.method),
            (3.0, 0.5, TailMethod::Override)
        );
    }
}
