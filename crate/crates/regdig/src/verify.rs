//! Verification suites binding the library's contracts to one entry point.

/// One check line of a criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(label: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check { label: label.into(), pass, detail: detail.into() }
    }
}

/// A named criterion with its check lines.
#[derive(Debug, Clone)]
pub struct CriterionReport {
    pub name: String,
    pub checks: Vec<Check>,
}

impl CriterionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}
