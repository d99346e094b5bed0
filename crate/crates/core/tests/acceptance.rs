//! The ten acceptance criteria at default configuration, one line each.
//!
//! A single `all` run produces every suite's reports plus one aggregate
//! `criterion_NN_*` report per criterion whose observed value counts failing
//! constituents. Takes about five minutes on one core.

use mrl::config::{ExperimentConfig, SuiteName};
use mrl::report::VerificationReport;
use mrl::suites::{criterion_name, run_suite, CRITERIA};

fn criterion_of(r: &VerificationReport) -> Option<usize> {
    r.detail("criterion").map(|c| c as usize)
}

/// Plain `main` (no libtest harness) so the per-criterion lines always
/// reach the terminal.
fn main() {
    let cfg = ExperimentConfig::default();
    let out = run_suite(&cfg, SuiteName::All).expect("full pipeline runs");
    let mut failed = Vec::new();
    for n in 1..=CRITERIA.len() {
        let name = criterion_name(n);
        let aggregate = out.reports.iter().find(|r| r.name == name);
        let constituents: Vec<&VerificationReport> = out
            .reports
            .iter()
            .filter(|r| r.name != name && criterion_of(r) == Some(n))
            .collect();
        let broken: Vec<String> = constituents
            .iter()
            .filter(|r| !r.passed())
            .map(|r| format!("{}={:.4e}", r.name, r.observed))
            .collect();
        let ok =
            aggregate.is_some_and(|a| a.passed()) && !constituents.is_empty() && broken.is_empty();
        println!(
            "criterion {n:>2} {:<22} {} ({} reports{}{})",
            CRITERIA[n - 1],
            if ok { "PASS" } else { "FAIL" },
            constituents.len(),
            if broken.is_empty() { "" } else { "; failing: " },
            broken.join(", ")
        );
        if !ok {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failing criteria: {failed:?}");
        std::process::exit(1);
    }
}
