//! Self-verification suites shared by the test targets and the CLI.

pub mod gradcheck;
pub mod oracle;

use serde::Serialize;

/// Outcome of one named check. `max_err` is relative or absolute depending on
/// the check; `tolerance` is on the same scale.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub cases: usize,
    pub max_err: f64,
    pub tolerance: f64,
    pub error: Option<String>,
}

impl CheckReport {
    pub fn new(
        name: &str,
        cases: usize,
        max_err: f64,
        tolerance: f64,
        error: Option<String>,
    ) -> Self {
        CheckReport {
            name: name.to_string(),
            cases,
            max_err,
            tolerance,
            error,
        }
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_err <= self.tolerance
    }
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{} {:<28} cases={:<4} err={:.3e} tol={:.0e}",
            status, self.name, self.cases, self.max_err, self.tolerance
        )?;
        if let Some(e) = &self.error {
            write!(f, " error={}", e)?;
        }
        Ok(())
    }
}
