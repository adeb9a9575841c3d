//! Named pass/fail checks collected by the verification routines.

use std::fmt;

use serde_json::{json, Value};

use crate::series_core::{fmt_rational, OuterSeries, Rational, Series};

/// One named check with its outcome and a short description of the first failure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    /// Stable identifier of the check.
    pub name: String,
    /// Whether the check passed.
    pub ok: bool,
    /// Empty on success; otherwise the first offending term or value.
    pub detail: String,
}

impl Check {
    /// Passes iff the residual series is zero; otherwise names its first monomial.
    pub fn series(name: impl Into<String>, residual: &Series) -> Check {
        let detail = match residual.first_term() {
            None => String::new(),
            Some((m, c)) => format!("residual {} at {}", fmt_rational(c), m),
        };
        Check { name: name.into(), ok: residual.is_zero(), detail }
    }

    /// Passes iff the residual outer series is zero.
    pub fn outer(name: impl Into<String>, residual: &OuterSeries) -> Check {
        let detail = residual.first_entry().map(|e| format!("residual at {e}")).unwrap_or_default();
        Check { name: name.into(), ok: residual.is_zero(), detail }
    }

    /// Passes iff two rationals agree.
    pub fn rational(name: impl Into<String>, got: &Rational, expected: &Rational) -> Check {
        let ok = got == expected;
        let detail = if ok { String::new() } else { format!("got {}, expected {}", fmt_rational(got), fmt_rational(expected)) };
        Check { name: name.into(), ok, detail }
    }

    /// A check whose outcome was decided by the caller.
    pub fn flag(name: impl Into<String>, ok: bool, detail: impl Into<String>) -> Check {
        let detail = if ok { String::new() } else { detail.into() };
        Check { name: name.into(), ok, detail }
    }

    /// JSON form `{"name", "ok", "detail"}`.
    pub fn to_json(&self) -> Value {
        json!({"name": self.name, "ok": self.ok, "detail": self.detail})
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            write!(f, "PASS {}", self.name)
        } else {
            write!(f, "FAIL {}: {}", self.name, self.detail)
        }
    }
}

/// An ordered list of checks.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    /// The checks in the order they were run.
    pub checks: Vec<Check>,
}

impl Report {
    /// Empty report.
    pub fn new() -> Self {
        Report::default()
    }

    /// Appends a check.
    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    /// Appends a residual-series check.
    pub fn series(&mut self, name: impl Into<String>, residual: &Series) {
        self.push(Check::series(name, residual));
    }

    /// Appends every check of another report, prefixing names with `prefix/`.
    pub fn absorb(&mut self, prefix: &str, other: Report) {
        for mut c in other.checks {
            c.name = format!("{prefix}/{}", c.name);
            self.checks.push(c);
        }
    }

    /// True when every check passed.
    pub fn all_ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    /// The failed checks.
    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.ok).collect()
    }

    /// Number of checks.
    pub fn len(&self) -> usize {
        self.checks.len()
    }

    /// True when no checks were recorded.
    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }

    /// JSON array of the checks.
    pub fn to_json(&self) -> Value {
        Value::Array(self.checks.iter().map(Check::to_json).collect())
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}
