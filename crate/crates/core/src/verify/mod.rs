//! The evidence engine: conditional-independence checks, Markov and
//! symmetry suites, lemma and theorem verification on seeded networks, the
//! comb-reconstruction impossibility demonstration, and the common-cause
//! factorization violation demonstration.
//!
//! Every suite is deterministic given its seeds and emits machine-readable
//! results.

mod fcc;
mod fixtures;
mod impossibility;
mod lemmas;
mod markov;
mod theorem;

pub use fcc::{fcc_violation_demo, FccReport};
pub use fixtures::{chain_network, diamond_network, entangling_fork_network, D4_FIDUCIAL};
pub use impossibility::ImpossibilityReport;
pub use impossibility::impossibility_demo;
pub use lemmas::lemma_suite;
pub use markov::{markov_suite, markov_suite_classical, nft_suite};
pub use theorem::theorem_case_suite;

use serde::Serialize;

use crate::classical::ci_deviation;
use crate::error::Result;
use crate::graph::NodeId;
use crate::table::ProbTable;

/// Conditional-independence report for one triple.
#[derive(Clone, Debug, Serialize)]
pub struct CiReport {
    pub u: Vec<NodeId>,
    pub v: Vec<NodeId>,
    pub w: Vec<NodeId>,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub independent: bool,
}

/// Max over cells with P(w) > 1e-12 of |P(u,v|w) - P(u|w) P(v|w)|,
/// compared against the tolerance.
pub fn ci_check(
    table: &ProbTable,
    u: &[NodeId],
    v: &[NodeId],
    w: &[NodeId],
    tol: f64,
) -> Result<CiReport> {
    let max_deviation = ci_deviation(table, u, v, w)?;
    Ok(CiReport {
        u: u.to_vec(),
        v: v.to_vec(),
        w: w.to_vec(),
        max_deviation,
        tolerance: tol,
        independent: max_deviation <= tol,
    })
}

/// One named check inside a suite.
#[derive(Clone, Debug, Serialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    /// Measured deviation (or other figure of merit) for the case.
    pub deviation: f64,
    pub details: String,
}

impl CaseResult {
    pub fn new(name: impl Into<String>, passed: bool, deviation: f64) -> Self {
        CaseResult {
            name: name.into(),
            passed,
            deviation,
            details: String::new(),
        }
    }

    pub fn with_details(mut self, details: impl Into<String>) -> Self {
        self.details = details.into();
        self
    }
}

/// Outcome of a verification suite: per-case results and the seeds used.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub seeds: Vec<u64>,
    pub cases: Vec<CaseResult>,
}

impl SuiteResult {
    pub fn new(suite: impl Into<String>, seeds: Vec<u64>) -> Self {
        SuiteResult {
            suite: suite.into(),
            seeds,
            cases: Vec::new(),
        }
    }

    pub fn push(&mut self, case: CaseResult) {
        self.cases.push(case);
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    /// Short human-readable summary, one line per case.
    pub fn summary(&self) -> String {
        let mut out = format!("suite {}: ", self.suite);
        out.push_str(if self.passed() { "PASS\n" } else { "FAIL\n" });
        for c in &self.cases {
            out.push_str(&format!(
                "  [{}] {} (deviation {:.3e}){}{}\n",
                if c.passed { "pass" } else { "FAIL" },
                c.name,
                c.deviation,
                if c.details.is_empty() { "" } else { " - " },
                c.details
            ));
        }
        out
    }
}
