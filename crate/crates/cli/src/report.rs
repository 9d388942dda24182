//! Machine-readable result files.
//!
//! A report is a JSON object with a `format_version`, the command name, an
//! echo of every parameter in effect, command-specific fields and the wall
//! time. Keys are sorted, so apart from `wall_time_seconds` a report is a
//! deterministic function of its inputs, seed and flags.

use std::fs;
use std::path::Path;

use roml::features::{DEFAULT_KAPPA_N, DEFAULT_KAPPA_R};
use roml::select::{DEFAULT_DELTA, DEFAULT_XI};
use roml::{MatchReport, PartialPermutation, RomlConfig, StackingMode};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::io::ModeName;

pub const FORMAT_VERSION: u32 = 1;

/// Parameters echoed into a report.
#[derive(Debug, Clone)]
pub struct ConfigEcho(Map<String, Value>);

impl ConfigEcho {
    pub fn new(config: &RomlConfig, lambda: f64, norm_constant: f64, mode: StackingMode) -> Self {
        let value = json!({
            "n": config.n,
            "lambda": lambda,
            "lambda_rule": if config.lambda.is_some() { "fixed" } else { "auto" },
            "rho0": config.rho0,
            "rho_factor": config.rho_factor,
            "max_iters": config.max_iters,
            "primal_tol": config.primal_tol,
            "stable_iters": config.stable_iters,
            "mode": ModeName::from_mode(mode),
            "seed": config.seed,
            "parallel": config.threads,
            "norm_constant": norm_constant,
            "defaults": defaults(),
        });
        match value {
            Value::Object(m) => Self(m),
            _ => unreachable!("json! object literal"),
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Self {
        self.0.insert(key.to_string(), json!(value));
        self
    }
}

/// Library defaults of the tunable constants, for reference.
fn defaults() -> Value {
    let d = RomlConfig::descriptor(1);
    let c = RomlConfig::coordinate(1);
    json!({
        "descriptor": { "lambda": "5/sqrt(d n)", "rho0": d.rho0, "rho_factor": d.rho_factor },
        "coordinate": { "lambda": "5/sqrt(d K)", "rho0": c.rho0, "rho_factor": c.rho_factor },
        "max_iters": d.max_iters,
        "delta": DEFAULT_DELTA,
        "xi": DEFAULT_XI,
        "kappa_r": DEFAULT_KAPPA_R,
        "kappa_n": DEFAULT_KAPPA_N,
    })
}

#[derive(Debug, Clone)]
pub struct Report {
    body: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str, echo: ConfigEcho) -> Self {
        Self::with_config(command, Value::Object(echo.0))
    }

    pub fn with_config(command: &str, config: Value) -> Self {
        let mut body = Map::new();
        body.insert("format_version".into(), json!(FORMAT_VERSION));
        body.insert("command".into(), json!(command));
        body.insert("config".into(), config);
        Self { body }
    }

    pub fn field(mut self, key: &str, value: Value) -> Self {
        self.body.insert(key.to_string(), value);
        self
    }

    pub fn finish(mut self, wall_time_seconds: f64) -> Self {
        self.body.insert("wall_time_seconds".into(), json!(wall_time_seconds));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.body).expect("report serializes")
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_json() + "\n")
            .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
    }
}

/// Selected source index of every slot, per image.
pub fn ppm_lists(ids: &[&str], ppms: &[PartialPermutation]) -> Value {
    Value::Array(
        ids.iter()
            .zip(ppms)
            .map(|(id, p)| json!({ "image": id, "sources": p.target_to_source() }))
            .collect(),
    )
}

pub fn residual_series(report: &MatchReport) -> Value {
    let h = &report.residual_history;
    json!({
        "primal": h.iter().map(|r| r.primal).collect::<Vec<_>>(),
        "dual_l": h.iter().map(|r| r.dual_l).collect::<Vec<_>>(),
        "dual_e": h.iter().map(|r| r.dual_e).collect::<Vec<_>>(),
    })
}

pub fn solve_summary(command: &str, report: &MatchReport, metrics: &Value) -> String {
    let mut s = format!(
        "{command}: {} after {} iterations, relative primal {:.2e}, lambda {:.6}",
        if report.converged { "converged" } else { "stopped" },
        report.iterations_used,
        report.relative_primal(),
        report.lambda
    );
    if let Some(r) = metrics["truth"]["recovery_rate"].as_f64() {
        s.push_str(&format!(", recovery rate {r:.4}"));
    }
    s
}
