//! Property suites with a machine-readable report.
//!
//! Each suite returns a list of [`Check`]s. A check aggregates one assertion over
//! many randomized instances and records the worst observed value, the tolerance
//! it was held to and the first failing instance.

mod alternating;
mod comm;
mod degeneration;
mod envelopes;
mod kkt;
mod pl;
mod postlocal;
mod scalar;
mod semigroup;
pub mod surrogate;

use std::time::Instant;

use anyhow::{bail, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Worst value seen; the check passes when every value is `<= tolerance`.
    pub observed: f64,
    pub tolerance: f64,
    pub instances: usize,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub description: String,
    pub passed: bool,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

/// Suite names in acceptance order.
pub const SUITES: [&str; 10] = [
    "scalar",
    "semigroup",
    "kkt",
    "alternating",
    "degeneration",
    "surrogate-domination",
    "pl",
    "envelopes",
    "comm",
    "postlocal",
];

fn describe(name: &str) -> &'static str {
    match name {
        "scalar" => "T_a sandwich, composition, Lipschitz, telescoping, quadratic-linear, linear and Gronwall envelopes",
        "semigroup" => "generator flows: semigroup law, contraction, monotonicity, concavity, slope modulus, conjugacy",
        "kkt" => "threshold weights against an exhaustive 1e-3 simplex grid, with KKT residuals",
        "alternating" => "alternating control solver: nonincreasing trace and benchmark domination",
        "degeneration" => "identical clients reduce every corrected and post-local method to centralized microsteps",
        "surrogate-domination" => "Monte Carlo gap and tracking error stay under the deterministic surrogate state",
        "pl" => "PL contraction identities and the safe-regime rate floor",
        "envelopes" => "closed-form rates dominate exact iteration of their scalar recursions",
        "comm" => "per-round communication increments for every method and regime",
        "postlocal" => "uniform-displacement, server-average and control-variate identities per round",
        _ => "",
    }
}

pub fn run_suite(name: &str) -> Result<SuiteReport> {
    let start = Instant::now();
    let checks = match name {
        "scalar" => scalar::run(),
        "semigroup" => semigroup::run(),
        "kkt" => kkt::run()?,
        "alternating" => alternating::run()?,
        "degeneration" => degeneration::run()?,
        "surrogate-domination" => surrogate::run()?,
        "pl" => pl::run()?,
        "envelopes" => envelopes::run()?,
        "comm" => comm::run()?,
        "postlocal" => postlocal::run()?,
        other => bail!("unknown suite '{other}' (known: {})", SUITES.join(", ")),
    };
    let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
    Ok(SuiteReport {
        suite: name.to_string(),
        description: describe(name).to_string(),
        passed,
        seconds: start.elapsed().as_secs_f64(),
        checks,
    })
}

/// `selector` is `all` or a comma-separated list of suite names.
pub fn run_suites(selector: &str) -> Result<VerifyReport> {
    let names: Vec<&str> = if selector == "all" {
        SUITES.to_vec()
    } else {
        selector.split(',').map(str::trim).filter(|s| !s.is_empty()).collect()
    };
    let suites = names.into_iter().map(run_suite).collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport { passed: suites.iter().all(|s| s.passed), suites })
}

/// Worst-case accumulator for one assertion.
pub(crate) struct Tracker {
    name: String,
    tol: f64,
    worst: f64,
    n: usize,
    fail: Option<String>,
}

impl Tracker {
    pub fn new(name: impl Into<String>, tol: f64) -> Self {
        Self { name: name.into(), tol, worst: f64::NEG_INFINITY, n: 0, fail: None }
    }

    pub fn record(&mut self, value: f64, ctx: impl FnOnce() -> String) {
        self.n += 1;
        let bad = value.is_nan() || value > self.tol;
        if bad && self.fail.is_none() {
            self.fail = Some(format!("value {value:e}: {}", ctx()));
        }
        if value.is_nan() || value > self.worst {
            self.worst = value;
        }
    }

    /// Record an assertion that cannot be expressed as a number.
    pub fn record_bool(&mut self, ok: bool, ctx: impl FnOnce() -> String) {
        self.record(if ok { 0.0 } else { 1.0 }, ctx);
    }

    pub fn finish(self) -> Check {
        Check {
            passed: self.fail.is_none() && self.n > 0,
            observed: if self.n == 0 { f64::NAN } else { self.worst },
            tolerance: self.tol,
            instances: self.n,
            first_failure: self.fail.or_else(|| (self.n == 0).then(|| "no instances".to_string())),
            name: self.name,
        }
    }
}

/// Log-uniform draw on `[lo, hi]`.
pub(crate) fn lu<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

pub(crate) fn unif<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

/// `|a - b| / max(|b|, floor)`.
/// Relative tolerance for iterated recursions dominated by closed-form envelopes.
/// Covers rounding accumulated over up to 1e4 steps.
pub(crate) const DOMINATION_TOL: f64 = 1e-11;

/// Signed excess of `x` over `bound`, relative to the bound's magnitude.
pub(crate) fn excess(x: f64, bound: f64) -> f64 {
    (x - bound) / bound.abs().max(f64::MIN_POSITIVE)
}

pub(crate) fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / b.abs().max(floor)
}
