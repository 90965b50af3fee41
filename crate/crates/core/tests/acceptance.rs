//! End-to-end acceptance run. Every criterion prints one PASS/FAIL line; the
//! test fails at the end if any criterion failed.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use doubling_clt::distributions::{make_step_distribution, StepDistribution};
use doubling_clt::heatref::{HeatOptions, HeatReference};
use doubling_clt::scheme::{mc_value, LatticeField, LatticeScheme, SchemeOptions};
use doubling_clt::testfn::{make_test_function, TestFunction};
use doubling_clt::verifier::{
    build_scheme, cor22_audit, doubling_explore, epsilon_n, fit_rate, lattice_box, sup_gap,
    theorem12_check, DoublingCase, VerifyOptions,
};
use doubling_clt::FamilySpec;
use serde_json::json;

fn func(spec: FamilySpec) -> Arc<TestFunction> {
    Arc::new(make_test_function(&spec).unwrap())
}

fn law(spec: FamilySpec) -> Arc<StepDistribution> {
    Arc::new(make_step_distribution(&spec).unwrap())
}

fn heat_for(f: &Arc<TestFunction>, d: &StepDistribution) -> HeatReference {
    HeatReference::new(f.clone(), d.covariance().clone(), HeatOptions::default()).unwrap()
}

fn dyadic(from: usize, to: usize) -> Vec<usize> {
    std::iter::successors(Some(from), |n| Some(n * 2))
        .take_while(|&n| n <= to)
        .collect()
}

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gaussian_identity() -> Outcome {
    let start = Instant::now();
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("gaussian"));
    // E exp(-ξ²/2) for ξ ~ N(0, 1)
    let exact = 0.5f64.sqrt();
    let heat = heat_for(&f, &d).value(&[0.0], 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut ok = (heat - exact).abs() < 1e-12;
    for seed in [1, 2, 3] {
        let e = mc_value(&f, &d, 16, &[0.0], 1.0, 1_000_000, seed).unwrap();
        let z = (e.estimate - heat).abs() / e.stderr;
        worst = worst.max(z);
        ok &= z <= 3.0;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && secs < 30.0,
        format!("worst |mc - u| / se = {worst:.3}, {secs:.1}s"),
    )
}

fn exact_point() -> Outcome {
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("rademacher"));
    let s = LatticeScheme::new(f.clone(), d.clone(), 4, 4, SchemeOptions::default()).unwrap();
    let u4 = s.value(&[0.0], 4).unwrap();
    let gap = (u4 - heat_for(&f, &d).value(&[0.0], 1.0).unwrap()).abs();
    // S_4 ∈ {0, ±2, ±4} with weights 6, 4, 1 out of 16
    let binomial = (6.0 + 8.0 * (-0.5f64).exp() + 2.0 * (-2.0f64).exp()) / 16.0;
    let ok = (u4 - 0.6951822).abs() <= 1e-6
        && (u4 - binomial).abs() < 1e-14
        && (gap - 0.0119246).abs() <= 1e-6
        && (gap - (binomial - 0.5f64.sqrt()).abs()).abs() < 1e-14;
    outcome(ok, format!("u_4(0,1) = {u4:.9}, gap = {gap:.9}"))
}

fn time_regularity_audit() -> Outcome {
    let start = Instant::now();
    let opts = VerifyOptions::default();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for dist in ["rademacher", "asym_lattice"] {
        for tf in ["gauss_bump", "sine_bump"] {
            let f = func(FamilySpec::new(tf));
            let d = law(FamilySpec::new(dist));
            let heat = heat_for(&f, &d);
            for n in [8, 32, 128] {
                let scheme = build_scheme(&f, &d, n, &opts).unwrap();
                let b = lattice_box(&scheme, &opts);
                let field = LatticeField::build(scheme, b.half_width, b.step, 2).unwrap();
                let a = cor22_audit(&field, &heat).unwrap();
                let Some(h) = a.hessian_step else {
                    ok = false;
                    continue;
                };
                for r in [a.time_step, h, a.heat_step] {
                    worst = worst.max(r.ratio);
                    ok &= r.ratio <= 1.0 + 1e-8;
                }
                ok &= b.certified;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        ok && secs < 120.0,
        format!("largest ratio {worst:.4}, {secs:.1}s"),
    )
}

fn consistency_rate() -> Outcome {
    let start = Instant::now();
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("asym_lattice"));
    let opts = VerifyOptions::default();
    let points: Vec<(f64, f64)> = dyadic(8, 1024)
        .into_iter()
        .map(|n| (n as f64, epsilon_n(&f, &d, n, &opts).unwrap().epsilon))
        .collect();
    let scaled: Vec<f64> = points.iter().map(|(n, e)| e * n.sqrt()).collect();
    let monotone = scaled.windows(2).all(|w| w[1] <= w[0] * 1.05);
    let fit = fit_rate(&points).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        monotone && fit.slope <= -0.4 && secs < 300.0,
        format!(
            "slope {:.4}, ε√n from {:.4} to {:.4}, {secs:.1}s",
            fit.slope,
            scaled[0],
            scaled[scaled.len() - 1]
        ),
    )
}

fn gap_rate() -> Outcome {
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("asym_lattice"));
    let heat = heat_for(&f, &d);
    let opts = VerifyOptions::default();
    let points: Vec<(f64, f64)> = dyadic(8, 1024)
        .into_iter()
        .map(|n| (n as f64, sup_gap(&f, &d, n, &heat, &opts).unwrap().gap_sup))
        .collect();
    let fit = fit_rate(&points).unwrap();
    // steps -1 w.p. 2/3 and 2 w.p. 1/3
    let third = 2.0 / 3.0 + 8.0 / 3.0;
    let consts: Vec<f64> = points.iter().map(|(n, g)| g * n.sqrt() / third).collect();
    let spread = consts.iter().copied().fold(0.0, f64::max)
        / consts.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = (-0.75..=-0.35).contains(&fit.slope) && fit.r2 >= 0.95 && spread < 10.0;
    outcome(
        ok,
        format!(
            "slope {:.4}, r2 {:.4}, constant spread {spread:.3}",
            fit.slope, fit.r2
        ),
    )
}

fn heavy_tail() -> Outcome {
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("pareto_sym").with("alpha", 2.5));
    let heat = heat_for(&f, &d);
    let opts = VerifyOptions {
        mc_samples: 1_000_000,
        seed: 11,
        ..VerifyOptions::default()
    };
    let r = theorem12_check(&f, &d, &heat, &[64, 256, 1024], 0.4, &opts).unwrap();
    // the intervals c ± 3 se must not move apart as n grows
    let overlapping = r.points.windows(2).all(|w| {
        let (a, b) = (&w[0], &w[1]);
        b.constant - 3.0 * b.constant_stderr <= a.constant + 3.0 * a.constant_stderr
    });
    let scaled: Vec<String> = r
        .points
        .iter()
        .map(|p| format!("{:.4}±{:.4}", p.constant, 3.0 * p.constant_stderr))
        .collect();
    outcome(
        r.bounded && overlapping,
        format!("constants {}", scaled.join(", ")),
    )
}

fn doubling() -> Outcome {
    let f = func(FamilySpec::new("gauss_bump"));
    let d = law(FamilySpec::new("rademacher"));
    let heat = heat_for(&f, &d);
    let opts = VerifyOptions::default();
    let mut ok = true;
    let mut offsets = Vec::new();
    for n in [8, 16, 32, 64] {
        let r = doubling_explore(&f, &d, n, &heat, &opts).unwrap();
        if r.sigma_n <= 1e-9 {
            ok &= r.case == DoublingCase::Degenerate;
            continue;
        }
        // recompute φ at the reported maximiser from scratch
        let s = LatticeScheme::new(
            f.clone(),
            d.clone(),
            n,
            r.k0.max(1),
            SchemeOptions::default(),
        )
        .unwrap();
        let tk = r.k0 as f64 / n as f64;
        let phi = s.value(&r.x0, r.k0).unwrap()
            - heat.value(&r.x0, r.s0).unwrap()
            - r.c_n * (tk + r.s0)
            - r.big_c_n * (tk - r.s0).powi(2);
        ok &= (phi - r.sup_phi).abs() < 1e-10;
        ok &= r.sup_phi > r.sigma_n / 2.0;
        offsets.push((n as f64, r.time_offset));
    }
    let fit = fit_rate(&offsets);
    let slope = fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
    outcome(ok && slope <= -0.4, format!("offset slope {slope:.4}"))
}

fn quadratic_triviality() -> Outcome {
    let opts = VerifyOptions::default();
    let laws = [
        FamilySpec::new("rademacher"),
        FamilySpec::new("asym_lattice"),
        FamilySpec::new("lazy_walk").with("hold", 0.3),
        FamilySpec::new("correlated_lattice_2d").with("rho", 0.4),
        FamilySpec::new("lattice")
            .with("points", json!([[-1.0], [0.0], [3.0]]))
            .with("probs", json!([0.6, 0.2, 0.2])),
    ];
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for spec in laws {
        let d = law(spec);
        let f = func(FamilySpec::new("quadratic").with("dim", d.dim()));
        for n in [4, 64] {
            let e = epsilon_n(&f, &d, n, &opts).unwrap().epsilon;
            worst = worst.max(e);
            ok &= e <= 1e-12;
        }
        let heat = heat_for(&f, &d);
        for x in [-1.5, 0.0, 0.7] {
            let r = heat.pde_residual(&vec![x; d.dim()], 1.0, 0.1).unwrap();
            worst = worst.max(r.abs());
            ok &= r.abs() <= 1e-12;
        }
    }
    outcome(ok, format!("largest |ε_n| or residual {worst:.2e}"))
}

fn run_cli(config: &Path, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_doubling-clt"))
        .args(["run", "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(["--seed", "5"])
        .stdout(Stdio::null())
        .status()
        .unwrap()
        .code()
        .unwrap_or(-1)
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let text = json!({"experiments": [
        {"id": "mc", "op": "sup_gap", "distribution": {"name": "uniform"},
         "test_function": {"name": "gauss_bump"}, "n_schedule": [4, 8],
         "box": {"half_width": 3.0, "step": 0.5}, "mc_samples": 2000},
        {"id": "exact", "op": "epsilon_n", "distribution": {"name": "asym_lattice"},
         "test_function": {"name": "gauss_bump"}, "n_schedule": [8, 16, 32]}
    ]});
    std::fs::write(&config, serde_json::to_string_pretty(&text).unwrap()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let codes = (run_cli(&config, &a), run_cli(&config, &b));
    let mut compared = 0;
    let mut same = codes == (0, 0);
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "run_report.json" {
            continue;
        }
        compared += 1;
        same &= std::fs::read(a.join(&name)).unwrap()
            == std::fs::read(b.join(&name)).unwrap_or_default();
    }
    outcome(
        same && compared >= 4,
        format!("{compared} files compared, exit codes {codes:?}"),
    )
}

/// Writes to the real stdout so the lines survive the test harness capture.
fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 9] = [
        ("gaussian steps match the heat solution", gaussian_identity),
        ("exact point value and gap", exact_point),
        ("time-regularity bound audit", time_regularity_audit),
        ("consistency error rate", consistency_rate),
        ("sup-gap rate and bounded constant", gap_rate),
        ("heavy-tailed gap constant bounded", heavy_tail),
        ("doubling functional lower bound and offset rate", doubling),
        ("quadratic triviality oracles", quadratic_triviality),
        ("byte-reproducible CLI outputs", reproducibility),
    ];
    let total = Instant::now();
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        report(&format!(
            "criterion {} {}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        ));
        if !o.pass {
            failed.push(i + 1);
        }
    }
    report(&format!("acceptance total {:.1}s", total.elapsed().as_secs_f64()));
    assert!(total.elapsed() < Duration::from_secs(900));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
