//! Verification experiments and independent oracles.
//!
//! Everything here exists to check the collocation and evolution machinery
//! against computations that share none of its code paths:
//!
//! * [`fd`] — a conservative finite-difference Laplace solver on a polar
//!   grid, used as the oracle for harmonic measures, Green functions and
//!   period matrices.
//! * [`wos`] — Monte Carlo harmonic measure by walk-on-spheres with
//!   slit-crossing detection.
//! * [`closed_form`] — the exact one-slit radial Loewner solution.
//! * [`hadamard`] — measured conformal-radius and domain-constant
//!   increments under small boundary hulls, against the derivative of the
//!   canonical map.
//! * [`phi3`] — the boundary expansion identity whose limit is `-3φ''`.
//! * [`locality`] — the distributional comparison of stopped traces that
//!   singles out κ = 6.
//!
//! Experiments return an [`ExperimentReport`]: a list of labelled
//! measured/reference pairs, each with its tolerance, the source of the
//! reference value, and a pass flag.  Reports serialize to JSON for the
//! command-line tools.

pub mod closed_form;
pub mod fd;
pub mod hadamard;
pub mod locality;
pub mod phi3;
pub mod wos;

use serde::Serialize;

/// One measured-versus-reference comparison inside a report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportEntry {
    /// What is being compared.
    pub label: String,
    /// Value measured by the code under test.
    pub measured: f64,
    /// Independent reference value.
    pub reference: f64,
    /// Where the reference comes from (closed form, grid oracle, Monte
    /// Carlo, ...).
    pub reference_source: String,
    /// Acceptance tolerance for `residual`.
    pub tolerance: f64,
    /// Signed deviation `measured - reference` (or the statistic the
    /// tolerance applies to, as stated by the label).
    pub residual: f64,
    /// Whether this entry satisfies its tolerance.
    pub passed: bool,
}

impl ReportEntry {
    /// Entry passing when `|measured - reference| <= tolerance`.
    pub fn absolute(
        label: impl Into<String>,
        measured: f64,
        reference: f64,
        source: impl Into<String>,
        tolerance: f64,
    ) -> Self {
        let residual = measured - reference;
        ReportEntry {
            label: label.into(),
            measured,
            reference,
            reference_source: source.into(),
            tolerance,
            residual,
            passed: residual.abs() <= tolerance,
        }
    }

    /// Entry passing when `|measured/reference - 1| <= tolerance`.
    pub fn relative(
        label: impl Into<String>,
        measured: f64,
        reference: f64,
        source: impl Into<String>,
        tolerance: f64,
    ) -> Self {
        let residual = measured / reference - 1.0;
        ReportEntry {
            label: label.into(),
            measured,
            reference,
            reference_source: source.into(),
            tolerance,
            residual,
            passed: residual.abs() <= tolerance && residual.is_finite(),
        }
    }
}

/// Outcome of a verification experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    /// Experiment name.
    pub name: String,
    /// Input parameters, echoed for reproducibility.
    pub parameters: serde_json::Value,
    /// Individual comparisons.
    pub entries: Vec<ReportEntry>,
    /// Conjunction of all entry outcomes.
    pub passed: bool,
    /// Wall-clock time of the run in seconds.
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    /// Assembles a report; `passed` is the conjunction of the entries.
    pub fn new(
        name: impl Into<String>,
        parameters: serde_json::Value,
        entries: Vec<ReportEntry>,
        wall_clock_seconds: f64,
    ) -> Self {
        let passed = !entries.is_empty() && entries.iter().all(|e| e.passed);
        ExperimentReport {
            name: name.into(),
            parameters,
            entries,
            passed,
            wall_clock_seconds,
        }
    }
}
