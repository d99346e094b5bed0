//! Acceptance suites. Each suite turns an [`ExperimentConfig`] into named
//! reports; every acceptance criterion is summarised by exactly one
//! `criterion_NN_*` report whose observed value is the number of failing
//! constituent reports.
//!
//! Every random quantity is drawn from a stream derived from the master seed
//! and a fixed per-purpose tag, so a suite's output depends on the
//! configuration alone and not on which other suites ran before it.

use std::time::{Duration, Instant};

use rand::RngCore;

use crate::coefficients::{sample_path, CoefficientPath};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::{Result, ResultExt};
use crate::report::{to_csv, Check, VerificationReport};
use crate::wiener::stream_rng;

mod determinism;
mod hormander;
mod kernel;
mod maxreg;
mod moment_sobolev;
mod operators;
mod solver;

pub use determinism::{determinism_report, reduced_config};
pub use operators::sharp_reports;

/// A text file produced alongside the reports (e.g. a per-row CSV).
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file_name: String,
    pub contents: String,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOutput {
    pub reports: Vec<VerificationReport>,
    pub artifacts: Vec<Artifact>,
}

impl SuiteOutput {
    pub fn extend(&mut self, other: SuiteOutput) {
        self.reports.extend(other.reports);
        self.artifacts.extend(other.artifacts);
    }

    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(VerificationReport::passed)
    }

    pub fn csv(&self) -> String {
        to_csv(&self.reports)
    }
}

/// The acceptance criteria, in order; the number is the index + 1.
pub const CRITERIA: [&str; 10] = [
    "kernel_exactness",
    "gaussian_bounds",
    "hormander_uniformity",
    "solver_convergence",
    "ito_isometry",
    "operator_boundedness",
    "maximal_regularity",
    "moment_sobolev",
    "sharp_maximal",
    "determinism",
];

/// Name of the aggregate report of criterion `n` (1-based).
pub fn criterion_name(n: usize) -> String {
    format!("criterion_{n:02}_{}", CRITERIA[n - 1])
}

/// Collects reports of one suite, stamping suite label, config hash and the
/// wall time since the previous report.
pub(crate) struct Recorder {
    suite: String,
    hash: String,
    last: Instant,
    out: SuiteOutput,
    /// (criterion, failing, total) in first-seen order.
    tally: Vec<(usize, usize, usize)>,
}

impl Recorder {
    pub(crate) fn new(suite: SuiteName, cfg: &ExperimentConfig) -> Self {
        Self {
            suite: suite.label().to_string(),
            hash: cfg.hash(),
            last: Instant::now(),
            out: SuiteOutput::default(),
            tally: Vec::new(),
        }
    }

    /// Runs `f`, attaching the suite and step name to any error.
    pub(crate) fn step<T>(&self, step: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        f().context(format!("suite {}, step {step}", self.suite))
    }

    pub(crate) fn push(&mut self, criterion: usize, mut report: VerificationReport) {
        let now = Instant::now();
        report.suite = self.suite.clone();
        report.config_hash = self.hash.clone();
        report.wall_time = now - self.last;
        self.last = now;
        let failed = usize::from(!report.passed());
        match self.tally.iter_mut().find(|(c, _, _)| *c == criterion) {
            Some(entry) => {
                entry.1 += failed;
                entry.2 += 1;
            }
            None => self.tally.push((criterion, failed, 1)),
        }
        self.out
            .reports
            .push(report.with_detail("criterion", criterion as f64));
    }

    pub(crate) fn artifact(&mut self, file_name: &str, contents: String) {
        self.out.artifacts.push(Artifact {
            file_name: file_name.to_string(),
            contents,
        });
    }

    /// Appends one aggregate report per criterion touched.
    pub(crate) fn finish(mut self) -> SuiteOutput {
        let mut tally = std::mem::take(&mut self.tally);
        tally.sort_by_key(|t| t.0);
        for (criterion, failed, total) in tally {
            let mut r = VerificationReport::new(
                criterion_name(criterion),
                failed as f64,
                Check::AtMost(0.0),
            )
            .with_bound("number of failing constituent reports")
            .with_detail("constituents", total as f64);
            r.suite = self.suite.clone();
            r.config_hash = self.hash.clone();
            r.wall_time = Duration::ZERO;
            self.out.reports.push(r);
        }
        self.out
    }
}

/// Seed for one purpose, independent of every other purpose's seed.
pub(crate) fn derived_seed(master: u64, purpose: u64) -> u64 {
    stream_rng(master, (1 << 48) + purpose).next_u64()
}

/// Per-purpose tags for [`derived_seed`].
pub(crate) mod purpose {
    pub const PATHS: u64 = 1;
    pub const KERNEL_SAMPLES: u64 = 2;
    pub const HORMANDER: u64 = 3;
    pub const ITO: u64 = 4;
    pub const OPERATOR_PATHS: u64 = 5;
    pub const OPERATOR_DATA: u64 = 6;
    pub const PROBES: u64 = 7;
    pub const MAXREG_WIENER: u64 = 8;
    pub const MAXREG_DATA: u64 = 9;
    pub const MOMENT_WIENER: u64 = 10;
}

/// The configured coefficient paths (one per `coefficients.paths`).
pub(crate) fn config_paths(cfg: &ExperimentConfig, dim: usize) -> Result<Vec<CoefficientPath>> {
    let band = cfg.band()?;
    let base = derived_seed(cfg.seed, purpose::PATHS);
    (0..cfg.coefficients.paths)
        .map(|i| {
            sample_path(
                &band,
                dim,
                cfg.coefficients.intervals,
                cfg.coefficients.kind.into(),
                base.wrapping_add(i as u64),
                cfg.grid.horizon,
            )
        })
        .collect()
}

/// Runs one suite; `All` runs every suite followed by the determinism check.
pub fn run_suite(cfg: &ExperimentConfig, suite: SuiteName) -> Result<SuiteOutput> {
    match suite {
        SuiteName::Kernel => kernel::run(cfg),
        SuiteName::Hormander => hormander::run(cfg),
        SuiteName::Solver => solver::run(cfg),
        SuiteName::Operators => operators::run(cfg),
        SuiteName::Maxreg => maxreg::run(cfg),
        SuiteName::MomentSobolev => moment_sobolev::run(cfg),
        SuiteName::All => run_suites(cfg, &SuiteName::EACH, true, &mut |_| Ok(())),
    }
}

/// Runs `suites` in order, calling `on_step` with the accumulated output
/// after each one so callers can write reports as they complete.
pub fn run_suites(
    cfg: &ExperimentConfig,
    suites: &[SuiteName],
    with_determinism: bool,
    on_step: &mut dyn FnMut(&SuiteOutput) -> Result<()>,
) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    for &suite in suites {
        if suite == SuiteName::All {
            continue;
        }
        out.extend(run_suite(cfg, suite)?);
        on_step(&out)?;
    }
    if with_determinism {
        out.extend(determinism_report(cfg)?);
        on_step(&out)?;
    }
    Ok(out)
}
