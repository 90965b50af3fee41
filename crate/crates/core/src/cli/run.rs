use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{Expect, ExperimentConfig, ExperimentSpec, Op};
use crate::distributions::{make_step_distribution, StepDistribution};
use crate::error::{Error, Result};
use crate::heatref::HeatReference;
use crate::scheme::{Grid, LatticeField};
use crate::testfn::{make_test_function, TestFunction};
use crate::verifier::{
    build_scheme, cor22_audit, doubling_explore, epsilon_n, fit_rate, lattice_box, lemma21_check,
    sup_gap, theorem12_check, DoublingCase, GapBackend, RateFit, VerifyOptions,
};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Worker threads; `None` lets rayon decide.
    pub jobs: Option<usize>,
    /// Replaces every per-experiment seed.
    pub seed: Option<u64>,
}

/// One line of `summary.csv`. Empty cells mean "not computed by this op".
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment_id: String,
    pub n: Option<usize>,
    pub gap_sup: Option<f64>,
    pub sigma_n: Option<f64>,
    pub sigma_tilde_n: Option<f64>,
    pub epsilon_n: Option<f64>,
    pub c_n: Option<f64>,
    #[serde(rename = "C_n")]
    pub big_c_n: Option<f64>,
    pub k0_over_n_minus_s0: Option<f64>,
    pub slope: Option<f64>,
    pub r2: Option<f64>,
    pub status: String,
}

impl SummaryRow {
    fn new(id: &str, n: Option<usize>) -> Self {
        Self {
            experiment_id: id.to_string(),
            n,
            gap_sup: None,
            sigma_n: None,
            sigma_tilde_n: None,
            epsilon_n: None,
            c_n: None,
            big_c_n: None,
            k0_over_n_minus_s0: None,
            slope: None,
            r2: None,
            status: String::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentStatus {
    pub id: String,
    pub status: String,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
}

/// The only output carrying timings.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub config_sha256: String,
    pub jobs: usize,
    pub seed_override: Option<u64>,
    pub total_seconds: f64,
    pub experiments: Vec<ExperimentStatus>,
    pub exit_code: i32,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        self.exit_code
    }
}

pub fn status_ok(status: &str) -> bool {
    matches!(status, "pass" | "degenerate" | "vacuous")
}

/// What an op produced before the status is decided.
struct Outcome {
    rows: Vec<SummaryRow>,
    reports: Vec<Value>,
    /// `(n, value)` pairs the rate is fitted to.
    rate_points: Vec<(f64, f64)>,
    /// Values compared against `Expect::max_value` and the non-increase check.
    values: Vec<(usize, f64)>,
    /// Ratio checked against `Expect::max_spread`.
    spread: Option<f64>,
    failures: Vec<String>,
    notes: Vec<String>,
    degenerate: bool,
    vacuous: bool,
}

impl Outcome {
    fn new() -> Self {
        Self {
            rows: Vec::new(),
            reports: Vec::new(),
            rate_points: Vec::new(),
            values: Vec::new(),
            spread: None,
            failures: Vec::new(),
            notes: Vec::new(),
            degenerate: false,
            vacuous: false,
        }
    }
}

struct Setup {
    f: Arc<TestFunction>,
    dist: Arc<StepDistribution>,
    heat: HeatReference,
    opts: VerifyOptions,
    ns: Vec<usize>,
}

fn setup(config: &ExperimentConfig, spec: &ExperimentSpec, seed: Option<u64>) -> Result<Setup> {
    let f = Arc::new(make_test_function(&spec.test_function)?);
    let dist = Arc::new(make_step_distribution(&spec.distribution)?);
    let heat = HeatReference::new(f.clone(), dist.covariance().clone(), config.heat)?;
    let t = &config.tolerances;
    let opts = VerifyOptions {
        horizon: t.horizon,
        grid_step: t.grid_step,
        tail_target: t.tail_target,
        sigma_tol: t.sigma_tol,
        box_override: spec.box_spec,
        mc_samples: spec.mc_samples,
        seed: seed.unwrap_or(spec.seed),
        ..VerifyOptions::default()
    };
    Ok(Setup {
        f,
        dist,
        heat,
        opts,
        ns: spec.n_schedule.values(),
    })
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report types serialise")
}

fn run_op(spec: &ExperimentSpec, s: &Setup) -> Result<Outcome> {
    let mut out = Outcome::new();
    let tol = s.opts.sigma_tol;
    match spec.op {
        Op::SupGap => {
            let mut noisy = false;
            for &n in &s.ns {
                let r = sup_gap(&s.f, &s.dist, n, &s.heat, &s.opts)?;
                let mut row = SummaryRow::new(&spec.id, Some(n));
                row.gap_sup = Some(r.gap_sup);
                row.sigma_n = Some(r.sigma_n);
                row.sigma_tilde_n = Some(r.sigma_tilde_n);
                out.rows.push(row);
                if let (Some(z), Some(se)) = (spec.expect.within_stderr, r.max_stderr) {
                    if r.gap_sup > z * se {
                        out.failures.push(format!(
                            "n={n}: gap {:.3e} exceeds {z} stderr ({se:.3e})",
                            r.gap_sup
                        ));
                    }
                }
                if !r.box_choice.certified {
                    out.notes.push(format!(
                        "n={n}: box tail bound {:.3e} not certified",
                        r.box_choice.tail_bound
                    ));
                }
                // Monte Carlo gaps at the noise floor carry no rate information
                noisy |= r.backend == GapBackend::MonteCarlo
                    && r.gap_sup < 5.0 * r.max_stderr.unwrap_or(0.0);
                out.rate_points.push((n as f64, r.gap_sup));
                out.values.push((n, r.gap_sup));
                out.reports.push(to_value(&r));
            }
            if noisy {
                out.rate_points.clear();
            }
            let consts: Vec<f64> = out
                .values
                .iter()
                .map(|&(n, g)| g * (n as f64).powf(spec.gamma / 2.0))
                .collect();
            out.spread = spread(&consts);
            out.degenerate = out.values.iter().all(|&(_, g)| g <= tol);
        }
        Op::EpsilonN => {
            for &n in &s.ns {
                let r = epsilon_n(&s.f, &s.dist, n, &s.opts)?;
                let mut row = SummaryRow::new(&spec.id, Some(n));
                row.epsilon_n = Some(r.epsilon);
                out.rows.push(row);
                out.rate_points.push((n as f64, r.epsilon));
                out.values.push((n, r.epsilon));
                out.reports.push(to_value(&r));
            }
            out.degenerate = out.values.iter().all(|&(_, e)| e <= tol);
        }
        Op::Doubling => {
            let mut cases = Vec::new();
            for &n in &s.ns {
                let r = doubling_explore(&s.f, &s.dist, n, &s.heat, &s.opts)?;
                let mut row = SummaryRow::new(&spec.id, Some(n));
                let signed = r.k0 as f64 / n as f64 - r.s0;
                row.sigma_n = Some(r.sigma_n);
                row.c_n = Some(r.c_n);
                row.big_c_n = Some(r.big_c_n);
                row.k0_over_n_minus_s0 = Some(signed);
                out.rows.push(row);
                if r.case != DoublingCase::Degenerate {
                    if !r.lower_bound_holds {
                        out.failures.push(format!(
                            "n={n}: sup φ {:.3e} ≤ σ_n/2 = {:.3e}",
                            r.sup_phi,
                            r.sigma_n / 2.0
                        ));
                    }
                    if r.hessian_ok == Some(false) {
                        out.failures
                            .push(format!("n={n}: Hessian comparison fails at the maximiser"));
                    }
                    if r.boundary_ok == Some(false) {
                        out.failures
                            .push(format!("n={n}: sup φ exceeds the boundary bound"));
                    }
                    out.rate_points.push((n as f64, r.time_offset));
                }
                out.values.push((n, r.time_offset));
                cases.push(r.case);
                out.reports.push(to_value(&r));
            }
            if out.rate_points.iter().any(|p| p.1 <= 0.0) {
                out.rate_points.clear();
            }
            out.degenerate = cases.iter().all(|c| *c == DoublingCase::Degenerate);
        }
        Op::Theorem12 => {
            let r = theorem12_check(&s.f, &s.dist, &s.heat, &s.ns, spec.gamma, &s.opts)?;
            for p in &r.points {
                let mut row = SummaryRow::new(&spec.id, Some(p.n));
                row.gap_sup = Some(p.gap);
                out.rows.push(row);
                if let Some(z) = spec.expect.within_stderr {
                    if r.backend == GapBackend::MonteCarlo && p.gap > z * p.stderr {
                        out.failures.push(format!(
                            "n={}: gap {:.3e} exceeds {z} stderr ({:.3e})",
                            p.n, p.gap, p.stderr
                        ));
                    }
                }
                out.values.push((p.n, p.gap));
                if r.backend == GapBackend::Exact || p.gap > 5.0 * p.stderr {
                    out.rate_points.push((p.n as f64, p.gap));
                }
            }
            if out.rate_points.len() < r.points.len() {
                out.rate_points.clear();
            }
            if !r.bounded {
                out.failures.push(format!(
                    "normalised constants not bounded (spread {:.3})",
                    r.spread
                ));
            }
            out.spread = Some(r.spread);
            out.degenerate = out.values.iter().all(|&(_, g)| g <= tol);
            out.reports.push(to_value(&r));
        }
        Op::Audits => {
            let mut vacuous = true;
            for &n in &s.ns {
                let scheme = build_scheme(&s.f, &s.dist, n, &s.opts)?;
                let b = lattice_box(&scheme, &s.opts);
                let max_deriv = if s.f.smoothness() >= 4 { 2 } else { 0 };
                let field = LatticeField::build(scheme, b.half_width, b.step, max_deriv)?;
                let audit = cor22_audit(&field, &s.heat)?;
                let grid = Grid::uniform(s.f.dim(), b.half_width, b.step)?;
                let lemma = lemma21_check(&s.f, &s.dist, 1.0 / (n as f64).sqrt(), &grid)?;
                if !audit.pass {
                    out.failures
                        .push(format!("n={n}: time-regularity bound violated"));
                }
                if !lemma.pass {
                    out.failures.push(format!(
                        "n={n}: one-step bound violated ({:.3e} > {:.3e})",
                        lemma.lhs, lemma.rhs
                    ));
                }
                vacuous &= audit.vacuous && lemma.vacuous;
                out.rows.push(SummaryRow::new(&spec.id, Some(n)));
                out.reports
                    .push(json!({ "n": n, "box": b, "one_step": lemma, "time_regularity": audit }));
            }
            out.vacuous = vacuous;
        }
    }
    Ok(out)
}

fn spread(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(0.0, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max > 0.0 && min > 0.0).then(|| max / min)
}

fn check_expectations(expect: &Expect, fit: Option<&RateFit>, out: &mut Outcome) {
    if out.degenerate {
        return;
    }
    let wants_fit =
        expect.slope_min.is_some() || expect.slope_max.is_some() || expect.r2_min.is_some();
    match fit {
        None if wants_fit => out.failures.push("no rate fit available".into()),
        None => {}
        Some(fit) => {
            if expect.slope_min.is_some_and(|m| fit.slope < m)
                || expect.slope_max.is_some_and(|m| fit.slope > m)
            {
                out.failures
                    .push(format!("slope {:.4} outside the expected range", fit.slope));
            }
            if expect.r2_min.is_some_and(|m| fit.r2 < m) {
                out.failures.push(format!(
                    "r2 {:.4} below {}",
                    fit.r2,
                    expect.r2_min.unwrap_or_default()
                ));
            }
        }
    }
    if let Some(max) = expect.max_value {
        for &(n, v) in &out.values {
            if v > max {
                out.failures
                    .push(format!("n={n}: value {v:.3e} above {max:.3e}"));
            }
        }
    }
    if let Some(slack) = expect.nonincreasing_slack {
        let scaled: Vec<(usize, f64)> = out
            .values
            .iter()
            .map(|&(n, v)| (n, v * (n as f64).sqrt()))
            .collect();
        for w in scaled.windows(2) {
            if w[1].1 > w[0].1 * (1.0 + slack) {
                out.failures
                    .push(format!("value·√n grows from n={} to n={}", w[0].0, w[1].0));
            }
        }
    }
    if let Some(max) = expect.max_spread {
        match out.spread {
            Some(s) if s <= max => {}
            Some(s) => out
                .failures
                .push(format!("constant spread {s:.3} above {max}")),
            None => out.failures.push("constant spread undefined".into()),
        }
    }
}

fn status_of(out: &Outcome) -> String {
    if !out.failures.is_empty() {
        format!("fail: {}", out.failures.join("; "))
    } else if out.degenerate {
        "degenerate".into()
    } else if out.vacuous {
        "vacuous".into()
    } else {
        "pass".into()
    }
}

/// Deterministic result of one experiment: summary rows, the JSON record and
/// the rate plot data, if any.
pub struct ExperimentResult {
    pub id: String,
    pub status: String,
    pub rows: Vec<SummaryRow>,
    pub record: Value,
    pub rate: Option<RateFit>,
}

pub fn run_single(
    config: &ExperimentConfig,
    spec: &ExperimentSpec,
    seed: Option<u64>,
) -> ExperimentResult {
    let outcome =
        setup(config, spec, seed).and_then(|s| run_op(spec, &s).map(|o| (o, s.opts.seed)));
    let (mut out, used_seed, error) = match outcome {
        Ok((o, seed)) => (o, Some(seed), None),
        Err(e) => {
            let mut o = Outcome::new();
            o.failures.push(e.to_string());
            (o, None, Some(e.to_string()))
        }
    };
    let fit = if error.is_none() && out.rate_points.len() >= 3 {
        fit_rate(&out.rate_points).ok()
    } else {
        None
    };
    if error.is_none() {
        check_expectations(&spec.expect, fit.as_ref(), &mut out);
    }
    let status = status_of(&out);
    if out.rows.is_empty() {
        out.rows.push(SummaryRow::new(&spec.id, None));
    }
    for row in &mut out.rows {
        row.slope = fit.as_ref().map(|f| f.slope);
        row.r2 = fit.as_ref().map(|f| f.r2);
        row.status = status.clone();
    }
    let record = json!({
        "id": spec.id,
        "op": spec.op,
        "distribution": spec.distribution,
        "test_function": spec.test_function,
        "n_schedule": spec.n_schedule.values(),
        "gamma": spec.gamma,
        "seed": used_seed,
        "status": status,
        "error": error,
        "notes": out.notes,
        "rate": fit,
        "reports": out.reports,
    });
    ExperimentResult {
        id: spec.id.clone(),
        status,
        rows: out.rows,
        record,
        rate: fit,
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn json_bytes<T: Serialize>(x: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(x)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn summary_bytes(results: &[ExperimentResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        for row in &r.rows {
            w.serialize(row)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn rate_bytes(fit: &RateFit) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["log_n", "log_value"])?;
    for (x, y) in fit.log_points() {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let bytes = serde_json::to_vec(config).expect("config serialises");
    hex::encode(Sha256::digest(&bytes))
}

/// Runs every experiment, writes all outputs into `opts.out` and returns the
/// run report (also written as `run_report.json`).
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let started = Instant::now();
    std::fs::create_dir_all(&opts.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = opts.jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let jobs = pool.current_num_threads();
    let timed: Vec<(ExperimentResult, f64)> = pool.install(|| {
        config
            .experiments
            .par_iter()
            .map(|spec| {
                let t = Instant::now();
                log::info!("running {}", spec.id);
                let r = run_single(config, spec, opts.seed);
                log::info!("{}: {}", r.id, r.status);
                (r, t.elapsed().as_secs_f64())
            })
            .collect()
    });

    let mut statuses = Vec::with_capacity(timed.len());
    for (r, secs) in &timed {
        let mut artifacts = vec![format!("{}.json", r.id)];
        write_atomic(&opts.out.join(&artifacts[0]), &json_bytes(&r.record)?)?;
        if let Some(fit) = &r.rate {
            let name = format!("{}_rate.csv", r.id);
            write_atomic(&opts.out.join(&name), &rate_bytes(fit)?)?;
            artifacts.push(name);
        }
        statuses.push(ExperimentStatus {
            id: r.id.clone(),
            status: r.status.clone(),
            artifacts,
            wall_clock_seconds: *secs,
        });
    }
    let results: Vec<ExperimentResult> = timed.into_iter().map(|(r, _)| r).collect();
    write_atomic(&opts.out.join("summary.csv"), &summary_bytes(&results)?)?;

    let exit_code = if statuses.iter().all(|s| status_ok(&s.status)) {
        0
    } else {
        1
    };
    let report = RunReport {
        config_sha256: config_hash(config),
        jobs,
        seed_override: opts.seed,
        total_seconds: started.elapsed().as_secs_f64(),
        experiments: statuses,
        exit_code,
    };
    write_atomic(&opts.out.join("run_report.json"), &json_bytes(&report)?)?;
    Ok(report)
}
