use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::gap::{exact_columns, heat_columns};
use super::{build_scheme, check_heat, lattice_box, BoxChoice, VerifyOptions};
use crate::distributions::StepDistribution;
use crate::error::{check_dim, Error, Result};
use crate::heatref::HeatReference;
use crate::testfn::{Decay, TestFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DoublingCase {
    /// `k₀ > 0` and `s₀ > 0`.
    Interior,
    KZero,
    SZero,
    /// `σ_n` is numerically zero; nothing to maximise.
    Degenerate,
}

/// Maximiser of the penalised functional
/// `φ_n(x, k, s) = u_n(x, k/n) - u(x, s) - c_n (k/n + s) - C_n (k/n - s)²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DoublingReport {
    pub n: usize,
    pub sigma_n: f64,
    pub c_n: f64,
    #[serde(rename = "C_n")]
    pub big_c_n: f64,
    pub case: DoublingCase,
    pub x0: Vec<f64>,
    pub k0: usize,
    pub s0: f64,
    /// `φ_n` at the refined maximiser.
    pub sup_phi: f64,
    /// `φ_n` at the best grid point, before refinement.
    pub grid_sup_phi: f64,
    /// `sup φ_n > σ_n / 2`
    pub lower_bound_holds: bool,
    /// `|k₀/n - s₀|`
    pub time_offset: f64,
    /// `|k₀/n - s₀| √n`
    pub scaled_offset: f64,
    /// `2C_n(k₀/n - s₀) - ½ tr(Σ D²u(x₀, s₀)) - c_n`; zero at an interior
    /// maximum in `s`.
    pub residual_s: Option<f64>,
    /// `n (u_n(x₀, k₀/n) - u_n(x₀, (k₀-1)/n)) - c_n - C_n (2(k₀/n - s₀) - 1/n)`;
    /// non-negative when `k₀` beats `k₀ - 1`.
    pub residual_k: Option<f64>,
    /// `tr(Σ D²u_n(x₀, k₀/n))`
    pub hessian_scheme: Option<f64>,
    /// `tr(Σ D²u(x₀, s₀))`
    pub hessian_heat: Option<f64>,
    /// Allowance for `x₀` being a grid point rather than the exact maximiser.
    pub hessian_slack: Option<f64>,
    /// `hessian_scheme ≤ hessian_heat + hessian_slack` (interior `x₀` only).
    pub hessian_ok: Option<bool>,
    /// `(A - c_n)_+² / (4 C_n)`, `A = ‖f‖_{C²} tr Σ / 2`: the bound on `φ_n`
    /// when `k₀ = 0` or `s₀ = 0`.
    pub boundary_bound: f64,
    /// `sup φ_n ≤ boundary_bound` (boundary cases only).
    pub boundary_ok: Option<bool>,
    #[serde(rename = "box")]
    pub box_choice: BoxChoice,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a maximum of `g` on `[a, b]`; returns the best
/// point seen, including both ends.
fn golden_max(g: impl Fn(f64) -> f64, a: f64, b: f64, iters: usize) -> (f64, f64) {
    let mut best = [(a, g(a)), (b, g(b))]
        .into_iter()
        .fold((a, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m });
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut g1, mut g2) = (g(x1), g(x2));
    for _ in 0..iters {
        if g1 > best.1 {
            best = (x1, g1);
        }
        if g2 > best.1 {
            best = (x2, g2);
        }
        if g1 < g2 {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + GOLDEN * (hi - lo);
            g2 = g(x2);
        } else {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - GOLDEN * (hi - lo);
            g1 = g(x1);
        }
    }
    best
}

pub fn doubling_explore(
    f: &Arc<TestFunction>,
    dist: &Arc<StepDistribution>,
    n: usize,
    heat: &HeatReference,
    opts: &VerifyOptions,
) -> Result<DoublingReport> {
    if f.decay() != Decay::Vanishing || f.smoothness() < 4 {
        return Err(Error::Hypothesis(format!(
            "`{}` must be C^4 and vanish at infinity",
            f.name()
        )));
    }
    check_dim(f.dim(), heat.test_function().dim())?;
    check_heat(dist, heat)?;
    let scheme = build_scheme(f, dist, n, opts)?;
    let box_choice = lattice_box(&scheme, opts);
    let (grid, cols) = exact_columns(&scheme, &box_choice)?;
    let k_max = scheme.k_max();
    let nf = n as f64;
    let d = f.dim();

    // the s-grid has step 1/(4n), so s_{4k} = k/n and u on the k-grid is a subset
    let s_count = 4 * k_max;
    let s_ids: Vec<usize> = (0..=s_count).collect();
    let u_s = heat_columns(heat, &grid, 4 * n, &s_ids)?;
    let mut sigma: f64 = 0.0;
    for k in 0..=k_max {
        for (a, b) in cols[k].iter().zip(&u_s[4 * k]) {
            sigma = sigma.max(a - b);
        }
    }

    let cov = dist.covariance();
    let tr = cov.trace();
    let sup = f.sup_norm();
    let c_n = sigma / 8.0;
    let big_c = 2.0 * sup * nf.sqrt();
    let drift = f.ck_norm(2)? * tr / 2.0;
    let boundary_bound = (drift - c_n).max(0.0).powi(2) / (4.0 * big_c);
    let mut report = DoublingReport {
        n,
        sigma_n: sigma,
        c_n,
        big_c_n: big_c,
        case: DoublingCase::Degenerate,
        x0: vec![0.0; d],
        k0: 0,
        s0: 0.0,
        sup_phi: 0.0,
        grid_sup_phi: 0.0,
        lower_bound_holds: true,
        time_offset: 0.0,
        scaled_offset: 0.0,
        residual_s: None,
        residual_k: None,
        hessian_scheme: None,
        hessian_heat: None,
        hessian_slack: None,
        hessian_ok: None,
        boundary_bound,
        boundary_ok: None,
        box_choice,
    };
    if sigma <= opts.sigma_tol {
        return Ok(report);
    }

    let phi = |un: f64, u: f64, t: f64, s: f64| un - u - c_n * (t + s) - big_c * (t - s).powi(2);
    let (grid_best, i0, k0, j0) = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let mut best = (f64::NEG_INFINITY, i, 0, 0);
            for (k, col) in cols.iter().enumerate() {
                let t = k as f64 / nf;
                for (j, us) in u_s.iter().enumerate() {
                    let v = phi(col[i], us[i], t, j as f64 / (4.0 * nf));
                    if v > best.0 {
                        best = (v, i, k, j);
                    }
                }
            }
            best
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 0, 0),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );

    // refine s at fixed (x, k), then x at fixed (k, s), through direct
    // off-grid evaluation of both u_n and u
    let horizon = k_max as f64 / nf;
    let ds = 1.0 / (4.0 * nf);
    let t0 = k0 as f64 / nf;
    let mut x0 = grid.point(i0);
    let mut s0 = j0 as f64 / (4.0 * nf);
    let mut best = grid_best;
    let un0 = cols[k0][i0];
    let along_s = |x: &[f64], s: f64, un: f64| -> f64 {
        heat.value(x, s)
            .map(|u| phi(un, u, t0, s))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (s_new, v) = golden_max(
        |s| along_s(&x0, s, un0),
        (s0 - ds).max(0.0),
        (s0 + ds).min(horizon),
        60,
    );
    if v > best {
        best = v;
        s0 = s_new;
    }
    let steps = grid.steps().to_vec();
    for a in 0..d {
        let g = |xa: f64| -> f64 {
            let mut x = x0.clone();
            x[a] = xa;
            match (scheme.value(&x, k0), heat.value(&x, s0)) {
                (Ok(un), Ok(u)) => phi(un, u, t0, s0),
                _ => f64::NEG_INFINITY,
            }
        };
        let (lo, hi) = (
            (x0[a] - steps[a]).max(-grid.half_width()),
            (x0[a] + steps[a]).min(grid.half_width()),
        );
        let (xa, v) = golden_max(g, lo, hi, 60);
        if v > best {
            best = v;
            x0[a] = xa;
        }
    }
    let un_x0 = scheme.value(&x0, k0)?;
    let (s_new, v) = golden_max(
        |s| along_s(&x0, s, un_x0),
        (s0 - ds).max(0.0),
        (s0 + ds).min(horizon),
        60,
    );
    if v > best {
        best = v;
        s0 = s_new;
    }

    report.case = if k0 == 0 {
        DoublingCase::KZero
    } else if s0 == 0.0 {
        DoublingCase::SZero
    } else {
        DoublingCase::Interior
    };
    report.x0 = x0.clone();
    report.k0 = k0;
    report.s0 = s0;
    report.sup_phi = best;
    report.grid_sup_phi = grid_best;
    report.lower_bound_holds = best > sigma / 2.0;
    report.time_offset = (t0 - s0).abs();
    report.scaled_offset = report.time_offset * nf.sqrt();

    if report.case != DoublingCase::Interior {
        report.boundary_ok = Some(best <= boundary_bound * (1.0 + 1e-12));
    } else {
        let heat_tr = heat.hessian_trace(&x0, s0)?;
        report.residual_s = Some(2.0 * big_c * (t0 - s0) - 0.5 * heat_tr - c_n);
        let gen = nf * (un_x0 - scheme.value(&x0, k0 - 1)?);
        report.residual_k = Some(gen - c_n - big_c * (2.0 * (t0 - s0) - 1.0 / nf));
        let interior = (0..d).all(|a| x0[a].abs() < grid.half_width() - steps[a]);
        if interior {
            let scheme_tr = scheme.hessian_trace(&x0, k0)?;
            let slack = 2.0 * grid.max_step() * cov.abs_sum() * f.ck_norm(3)?;
            report.hessian_scheme = Some(scheme_tr);
            report.hessian_heat = Some(heat_tr);
            report.hessian_slack = Some(slack);
            report.hessian_ok = Some(scheme_tr <= heat_tr + slack);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::make_step_distribution;
    use crate::heatref::HeatOptions;
    use crate::testfn::make_test_function;
    use crate::FamilySpec;

    #[test]
    fn golden_section_finds_parabola_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3).powi(2), 0.0, 1.0, 80);
        assert!((x - 0.3).abs() < 1e-8 && v.abs() < 1e-15);
        let (x, _) = golden_max(|x| x, 0.0, 1.0, 10);
        assert_eq!(x, 1.0);
    }

    #[test]
    fn rademacher_n8() {
        let f = Arc::new(make_test_function(&FamilySpec::new("gauss_bump")).unwrap());
        let d = Arc::new(make_step_distribution(&FamilySpec::new("rademacher")).unwrap());
        let h =
            HeatReference::new(f.clone(), d.covariance().clone(), HeatOptions::default()).unwrap();
        let r = doubling_explore(&f, &d, 8, &h, &VerifyOptions::default()).unwrap();
        assert!(r.sigma_n > 1e-9);
        assert!(r.lower_bound_holds, "{r:?}");
        assert!(r.sup_phi >= r.grid_sup_phi);
        assert!((r.c_n - r.sigma_n / 8.0).abs() < 1e-18);
        assert!((r.big_c_n - 2.0 * 8f64.sqrt()).abs() < 1e-9);
        if let Some(rk) = r.residual_k {
            assert!(rk >= -1e-9, "{r:?}");
        }
    }
}
