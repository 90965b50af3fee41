use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::distributions::make_step_distribution;
use crate::heatref::HeatOptions;
use crate::testfn::make_test_function;
use crate::verifier::BoxSpec;
use crate::FamilySpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    SupGap,
    EpsilonN,
    Doubling,
    Theorem12,
    Audits,
}

impl Op {
    const NAMES: [&'static str; 5] = ["sup_gap", "epsilon_n", "doubling", "theorem12", "audits"];
}

/// Either a geometric schedule `start · factor^j`, `j < count`, or an
/// explicit strictly increasing list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NSchedule {
    Geometric {
        start: usize,
        factor: usize,
        count: usize,
    },
    List(Vec<usize>),
}

impl NSchedule {
    pub fn values(&self) -> Vec<usize> {
        match self {
            NSchedule::Geometric {
                start,
                factor,
                count,
            } => {
                let mut out = Vec::with_capacity(*count);
                let mut n = *start;
                for _ in 0..*count {
                    out.push(n);
                    n = n.saturating_mul(*factor);
                }
                out
            }
            NSchedule::List(ns) => ns.clone(),
        }
    }
}

/// Optional pass/fail expectations checked after an experiment ran.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub slope_min: Option<f64>,
    pub slope_max: Option<f64>,
    pub r2_min: Option<f64>,
    /// Monte Carlo gaps must stay within this many standard errors.
    pub within_stderr: Option<f64>,
    /// `value · √n` may grow by at most this fraction from one n to the next.
    pub nonincreasing_slack: Option<f64>,
    /// Largest allowed `max / min` of the normalised rate constants.
    pub max_spread: Option<f64>,
    /// Every per-n value must be at most this.
    pub max_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "defaults::tail_target")]
    pub tail_target: f64,
    #[serde(default = "defaults::sigma_tol")]
    pub sigma_tol: f64,
    #[serde(default = "defaults::grid_step")]
    pub grid_step: f64,
    #[serde(default = "defaults::horizon")]
    pub horizon: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tail_target: defaults::tail_target(),
            sigma_tol: defaults::sigma_tol(),
            grid_step: defaults::grid_step(),
            horizon: defaults::horizon(),
        }
    }
}

mod defaults {
    pub fn tail_target() -> f64 {
        1e-6
    }
    pub fn sigma_tol() -> f64 {
        1e-9
    }
    pub fn grid_step() -> f64 {
        0.05
    }
    pub fn horizon() -> f64 {
        2.0
    }
    pub fn gamma() -> f64 {
        1.0
    }
    pub fn mc_samples() -> usize {
        100_000
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: String,
    pub op: Op,
    pub distribution: FamilySpec,
    pub test_function: FamilySpec,
    pub n_schedule: NSchedule,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub box_spec: Option<BoxSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub expect: Expect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub heat: HeatOptions,
    pub experiments: Vec<ExperimentSpec>,
}

/// Every problem found in a configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    pub violations: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "invalid configuration ({} problem(s)):",
            self.violations.len()
        )?;
        for v in &self.violations {
            writeln!(f, "  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

pub fn validate_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        violations: vec![format!("cannot read {}: {e}", path.display())],
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError {
        violations: vec![format!(
            "parse error at line {}, column {}: {e}",
            e.line(),
            e.column()
        )],
    })?;
    let mut v = Vec::new();
    check_root(&value, &mut v);
    if !v.is_empty() {
        return Err(ConfigError { violations: v });
    }
    serde_json::from_value(value).map_err(|e| ConfigError {
        violations: vec![e.to_string()],
    })
}

fn unknown_keys(obj: &Map<String, Value>, allowed: &[&str], at: &str, v: &mut Vec<String>) {
    for key in obj.keys() {
        if !allowed.contains(&key.as_str()) {
            v.push(format!("{at}: unknown key `{key}`"));
        }
    }
}

fn positive_number(
    obj: &Map<String, Value>,
    key: &str,
    at: &str,
    v: &mut Vec<String>,
) -> Option<f64> {
    let x = obj.get(key)?;
    match x.as_f64() {
        Some(x) if x > 0.0 && x.is_finite() => Some(x),
        _ => {
            v.push(format!("{at}.{key}: must be a positive number"));
            None
        }
    }
}

fn check_root(root: &Value, v: &mut Vec<String>) {
    let Some(obj) = root.as_object() else {
        v.push("top level must be a JSON object".into());
        return;
    };
    unknown_keys(
        obj,
        &["output_dir", "tolerances", "heat", "experiments"],
        "config",
        v,
    );
    if let Some(out) = obj.get("output_dir") {
        if !out.is_string() {
            v.push("output_dir: must be a string".into());
        }
    }
    if let Some(t) = obj.get("tolerances") {
        match t.as_object() {
            Some(t) => {
                unknown_keys(
                    t,
                    &["tail_target", "sigma_tol", "grid_step", "horizon"],
                    "tolerances",
                    v,
                );
                for key in ["tail_target", "sigma_tol", "grid_step", "horizon"] {
                    positive_number(t, key, "tolerances", v);
                }
            }
            None => v.push("tolerances: must be an object".into()),
        }
    }
    if let Some(h) = obj.get("heat") {
        match h.as_object() {
            Some(h) => {
                unknown_keys(h, &["quad_order", "tol"], "heat", v);
                if let Some(q) = h.get("quad_order") {
                    if !q.as_u64().is_some_and(|q| (1..=200).contains(&q)) {
                        v.push("heat.quad_order: must be an integer in 1..=200".into());
                    }
                }
                positive_number(h, "tol", "heat", v);
            }
            None => v.push("heat: must be an object".into()),
        }
    }
    let Some(exps) = obj.get("experiments") else {
        v.push("experiments: missing".into());
        return;
    };
    let Some(exps) = exps.as_array() else {
        v.push("experiments: must be an array".into());
        return;
    };
    if exps.is_empty() {
        v.push("experiments: must contain at least one experiment".into());
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for (i, e) in exps.iter().enumerate() {
        let at = format!("experiments[{i}]");
        if let Some(id) = e.get("id").and_then(Value::as_str) {
            if let Some(first) = seen.get(id) {
                v.push(format!(
                    "duplicate id `{id}`: experiments[{first}] and experiments[{i}]"
                ));
            } else {
                seen.insert(id, i);
            }
        }
        check_experiment(e, &at, v);
    }
}

fn check_family(
    value: Option<&Value>,
    key: &str,
    at: &str,
    v: &mut Vec<String>,
) -> Option<FamilySpec> {
    let Some(value) = value else {
        v.push(format!("{at}.{key}: missing"));
        return None;
    };
    match serde_json::from_value::<FamilySpec>(value.clone()) {
        Ok(spec) => Some(spec),
        Err(e) => {
            v.push(format!("{at}.{key}: {e}"));
            None
        }
    }
}

fn check_experiment(e: &Value, at: &str, v: &mut Vec<String>) {
    let Some(obj) = e.as_object() else {
        v.push(format!("{at}: must be an object"));
        return;
    };
    unknown_keys(
        obj,
        &[
            "id",
            "op",
            "distribution",
            "test_function",
            "n_schedule",
            "gamma",
            "box",
            "seed",
            "mc_samples",
            "expect",
        ],
        at,
        v,
    );
    match obj.get("id").map(|id| id.as_str()) {
        Some(Some(id))
            if !id.is_empty()
                && id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || "_-.".contains(c)) => {}
        Some(_) => v.push(format!(
            "{at}.id: must be a non-empty string of letters, digits, `_`, `-` or `.`"
        )),
        None => v.push(format!("{at}.id: missing")),
    }
    match obj.get("op").map(|op| op.as_str()) {
        Some(Some(op)) if Op::NAMES.contains(&op) => {}
        Some(_) => v.push(format!("{at}.op: must be one of {}", Op::NAMES.join(", "))),
        None => v.push(format!("{at}.op: missing")),
    }
    if let Some(spec) = check_family(obj.get("distribution"), "distribution", at, v) {
        if let Err(err) = make_step_distribution(&spec) {
            v.push(format!("{at}.distribution: {err}"));
        }
    }
    if let Some(spec) = check_family(obj.get("test_function"), "test_function", at, v) {
        if let Err(err) = make_test_function(&spec) {
            v.push(format!("{at}.test_function: {err}"));
        }
    }
    match obj.get("n_schedule") {
        None => v.push(format!("{at}.n_schedule: missing")),
        Some(s) => match serde_json::from_value::<NSchedule>(s.clone()) {
            Err(_) => v.push(format!(
                "{at}.n_schedule: must be {{\"start\", \"factor\", \"count\"}} or a list of positive integers"
            )),
            Ok(NSchedule::Geometric { start, factor, count }) => {
                if start == 0 {
                    v.push(format!("{at}.n_schedule.start: must be ≥ 1"));
                }
                if factor < 2 {
                    v.push(format!("{at}.n_schedule.factor: must be ≥ 2 so the schedule strictly increases"));
                }
                if count == 0 {
                    v.push(format!("{at}.n_schedule.count: must be ≥ 1"));
                }
                if start.checked_mul(factor.checked_pow(count.saturating_sub(1) as u32).unwrap_or(usize::MAX)).is_none()
                {
                    v.push(format!("{at}.n_schedule: overflows"));
                }
            }
            Ok(NSchedule::List(ns)) => {
                if ns.is_empty() || ns.contains(&0) {
                    v.push(format!("{at}.n_schedule: must list at least one positive integer"));
                }
                if ns.windows(2).any(|w| w[1] <= w[0]) {
                    v.push(format!("{at}.n_schedule: must be strictly increasing"));
                }
            }
        },
    }
    if let Some(g) = obj.get("gamma") {
        if !g.as_f64().is_some_and(|g| g > 0.0 && g <= 1.0) {
            v.push(format!("{at}.gamma: γ ∈ (0,1] required, got {g}"));
        }
    }
    if let Some(b) = obj.get("box") {
        match b.as_object() {
            Some(b) => {
                unknown_keys(b, &["half_width", "step"], &format!("{at}.box"), v);
                for key in ["half_width", "step"] {
                    if !b.contains_key(key) {
                        v.push(format!("{at}.box.{key}: missing"));
                    }
                    positive_number(b, key, &format!("{at}.box"), v);
                }
            }
            None => v.push(format!("{at}.box: must be an object")),
        }
    }
    if let Some(s) = obj.get("seed") {
        if s.as_u64().is_none() {
            v.push(format!("{at}.seed: must be a non-negative integer"));
        }
    }
    if let Some(m) = obj.get("mc_samples") {
        if !m.as_u64().is_some_and(|m| m >= 100) {
            v.push(format!("{at}.mc_samples: must be an integer ≥ 100"));
        }
    }
    if let Some(x) = obj.get("expect") {
        if let Err(err) = serde_json::from_value::<Expect>(x.clone()) {
            v.push(format!("{at}.expect: {err}"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"experiments": [{"id": "a", "op": "sup_gap",
        "distribution": {"name": "rademacher"}, "test_function": {"name": "gauss_bump"},
        "n_schedule": {"start": 4, "factor": 2, "count": 3}}]}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        let e = &c.experiments[0];
        assert_eq!(e.op, Op::SupGap);
        assert_eq!(e.n_schedule.values(), vec![4, 8, 16]);
        assert_eq!(e.gamma, 1.0);
        assert_eq!(c.tolerances.grid_step, 0.05);
        assert_eq!(c.heat.quad_order, 64);
    }

    #[test]
    fn all_violations_are_reported() {
        let text = r#"{"experiments": [
            {"id": "a", "op": "sup_gap", "distribution": {"name": "rademacher"},
             "test_function": {"name": "gauss_bump"}, "n_schedule": [4, 8], "gamma": 1.5},
            {"id": "a", "op": "nope", "distribution": {"name": "cauchy"},
             "test_function": {"name": "gauss_bump"}, "n_schedule": [8, 4]}]}"#;
        let err = parse_config(text).unwrap_err();
        let all = err.violations.join("\n");
        assert!(all.contains("γ ∈ (0,1]"), "{all}");
        assert!(
            all.contains("duplicate id `a`: experiments[0] and experiments[1]"),
            "{all}"
        );
        assert!(all.contains("experiments[1].op"), "{all}");
        assert!(all.contains("cauchy"), "{all}");
        assert!(all.contains("strictly increasing"), "{all}");
        assert_eq!(err.violations.len(), 5, "{all}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_config("{\n  \"experiments\": [,]\n}").unwrap_err();
        assert!(
            err.violations[0].starts_with("parse error at line 2, column"),
            "{err}"
        );
    }
}
