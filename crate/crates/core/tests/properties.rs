use std::sync::Arc;

use doubling_clt::distributions::{make_step_distribution, pmf_covariance, StepDistribution};
use doubling_clt::heatref::{HeatOptions, HeatReference};
use doubling_clt::scheme::{Grid, LatticeField, LatticeScheme, SchemeOptions};
use doubling_clt::testfn::{make_test_function, TestFunction};
use doubling_clt::verifier::{fit_rate, lemma21_check};
use doubling_clt::FamilySpec;
use proptest::prelude::*;
use serde_json::json;

/// Centred two-point law on `{a, b}`, `a < 0 < b`.
fn two_point(a: i32, b: i32) -> StepDistribution {
    let p = b as f64 / (b - a) as f64;
    make_step_distribution(
        &FamilySpec::new("lattice")
            .with("points", json!([[a as f64], [b as f64]]))
            .with("probs", json!([p, 1.0 - p])),
    )
    .unwrap()
}

fn bump(a: f64) -> Arc<TestFunction> {
    Arc::new(make_test_function(&FamilySpec::new("gauss_bump").with("a", a)).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolution_powers_keep_mean_and_scale_covariance(a in -4i32..=-1, b in 1i32..=4, k in 1usize..12) {
        let d = two_point(a, b);
        let pmf = d.convolve_power(k, 1 << 20).unwrap();
        prop_assert!((pmf.total_mass() - 1.0).abs() < 1e-12);
        prop_assert!(pmf.mean()[0].abs() < 1e-10);
        // Var X = -ab for the centred two-point law
        let var = -(a as f64) * b as f64;
        prop_assert!((pmf_covariance(&pmf)[(0, 0)] - k as f64 * var).abs() < 1e-9 * (1.0 + k as f64 * var));
    }

    #[test]
    fn ck_norms_are_nondecreasing(a in 0.3f64..3.0, omega in 0.0f64..3.0) {
        let fs = [
            make_test_function(&FamilySpec::new("gauss_bump").with("a", a)).unwrap(),
            make_test_function(&FamilySpec::new("sine_bump").with("omega", omega)).unwrap(),
        ];
        for f in &fs {
            let norms: Vec<f64> = (0..=4).map(|k| f.ck_norm(k).unwrap()).collect();
            prop_assert!(norms.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", norms);
            prop_assert!((norms[0] - f.sup_norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn scheme_is_bounded_by_sup_norm(a in -3i32..=-1, b in 1i32..=3, n in 1usize..16, x in -3.0f64..3.0, a_f in 0.5f64..2.0) {
        let f = bump(a_f);
        let s = LatticeScheme::new(f.clone(), Arc::new(two_point(a, b)), n, 2 * n, SchemeOptions::default()).unwrap();
        for k in 0..=2 * n {
            let v = s.value(&[x], k).unwrap();
            prop_assert!(v >= 0.0 && v <= f.sup_norm() + 1e-12);
        }
    }

    #[test]
    fn one_step_recurrence_reproduces_next_column(a in -2i32..=-1, b in 1i32..=2, n in 2usize..8) {
        let f = bump(1.0);
        let s = Arc::new(LatticeScheme::new(f, Arc::new(two_point(a, b)), n, 2 * n, SchemeOptions::default()).unwrap());
        let field = LatticeField::build(s, 3.0, 0.1, 0).unwrap();
        for k in 0..field.k_max() {
            let next = field.step_once(k).unwrap();
            let diff = next.iter().zip(field.column(k + 1)).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            prop_assert!(diff < 1e-12);
        }
    }

    #[test]
    fn one_step_bound_always_holds(scale in 0.01f64..2.0, a in 0.4f64..2.0, hold in 0.0f64..0.9) {
        let f = bump(a);
        let d = make_step_distribution(&FamilySpec::new("lazy_walk").with("hold", hold)).unwrap();
        let grid = Grid::uniform(1, 5.0, 0.05).unwrap();
        let r = lemma21_check(&f, &d, scale, &grid).unwrap();
        prop_assert!(r.pass && r.lhs <= r.rhs);
    }

    #[test]
    fn rate_fit_recovers_power_laws(c in 0.01f64..100.0, p in -2.0f64..0.5) {
        let pts: Vec<(f64, f64)> = [4.0, 16.0, 64.0, 256.0].iter().map(|&n: &f64| (n, c * n.powf(p))).collect();
        let fit = fit_rate(&pts).unwrap();
        prop_assert!((fit.slope - p).abs() < 1e-10);
        prop_assert!((fit.intercept - c.ln()).abs() < 1e-9);
    }

    #[test]
    fn heat_solution_is_a_contraction_and_solves_the_pde(var in 0.2f64..3.0, x in -2.0f64..2.0, t in 0.2f64..2.0) {
        let f = bump(1.0);
        let d = make_step_distribution(&FamilySpec::new("gaussian").with("variance", var)).unwrap();
        let heat = HeatReference::new(f.clone(), d.covariance().clone(), HeatOptions::default()).unwrap();
        let v = heat.value(&[x], t).unwrap();
        prop_assert!(v > 0.0 && v <= 1.0);
        // exp(-x²/2) under N(0, s) smoothing: (1+s)^{-1/2} exp(-x²/(2(1+s)))
        let s = var * t;
        let closed = (1.0 + s).powf(-0.5) * (-x * x / (2.0 * (1.0 + s))).exp();
        prop_assert!((v - closed).abs() < 1e-10);
        prop_assert!(heat.pde_residual(&[x], t, 1e-3).unwrap().abs() < 1e-5);
    }

    #[test]
    fn grid_covers_the_box(half in 0.5f64..3.0, step in 0.1f64..0.7, dim in 1usize..3) {
        let grid = Grid::uniform(dim, half, step).unwrap();
        let origin = grid.point(grid.origin_index());
        prop_assert!(origin.iter().all(|c| c.abs() < 1e-12));
        // the grid covers the box and overshoots by less than one step
        let mut reach: f64 = 0.0;
        for i in 0..grid.len() {
            let p = grid.point(i);
            prop_assert!(p.iter().all(|c| c.abs() < half + step));
            reach = reach.max(p[0]);
        }
        prop_assert!(reach >= half - 1e-9);
        prop_assert_eq!(grid.len(), grid.side(0).pow(dim as u32));
    }
}
