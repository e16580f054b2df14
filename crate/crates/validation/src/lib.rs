//! Acceptance suite for `icsieve`. The runner is `tests/acceptance.rs`
//! (`cargo test -p icsieve-validation --test acceptance`); this library only
//! holds the verdict bookkeeping it prints.

use std::fmt::Write as _;
use std::time::Instant;

/// One quantitative check inside a criterion.
#[derive(Debug, Clone)]
pub struct Check {
    pub label: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn within(label: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            label: label.into(),
            passed: value >= lo && value <= hi,
            detail: format!("{value:.4} in [{lo}, {hi}]"),
        }
    }

    /// `value < bound`.
    pub fn below(label: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { label: label.into(), passed: value < bound, detail: format!("{value:.3e} < {bound:e}") }
    }

    /// `value <= bound`.
    pub fn at_most(label: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { label: label.into(), passed: value <= bound, detail: format!("{value:.4} <= {bound}") }
    }

    /// `value >= bound`.
    pub fn at_least(label: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { label: label.into(), passed: value >= bound, detail: format!("{value:.4} >= {bound}") }
    }

    pub fn holds(label: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { label: label.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone)]
pub struct Criterion {
    pub id: usize,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub seconds: f64,
    /// Set when the run itself errored; the criterion then fails.
    pub error: Option<String>,
}

impl Criterion {
    pub fn passed(&self) -> bool {
        self.error.is_none() && !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    /// Verdict line followed by one indented line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(out, "{verdict} criterion {:>2}: {} ({:.1} s)", self.id, self.title, self.seconds).unwrap();
        if let Some(e) = &self.error {
            writeln!(out, "      error: {e}").unwrap();
        }
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "MISS" };
            writeln!(out, "      {mark} {}: {}", c.label, c.detail).unwrap();
        }
        out
    }
}

/// Times `body` and wraps its checks.
pub fn evaluate<F>(id: usize, title: &'static str, body: F) -> Criterion
where
    F: FnOnce() -> Result<Vec<Check>, String>,
{
    let start = Instant::now();
    let outcome = body();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(checks) => Criterion { id, title, checks, seconds, error: None },
        Err(e) => Criterion { id, title, checks: Vec::new(), seconds, error: Some(e) },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts() {
        let ok = evaluate(1, "demo", || Ok(vec![Check::within("x", 0.5, 0.0, 1.0)]));
        assert!(ok.passed());
        assert!(ok.render().starts_with("PASS criterion  1: demo"));
        let bad = evaluate(2, "demo", || Ok(vec![Check::below("e", 2e-6, 1e-6), Check::at_least("r", 1.0, 0.5)]));
        assert!(!bad.passed());
        assert!(bad.render().contains("MISS e"));
        let err = evaluate(3, "demo", || Err("boom".into()));
        assert!(!err.passed());
        assert!(!evaluate(4, "empty", || Ok(Vec::new())).passed());
    }
}
