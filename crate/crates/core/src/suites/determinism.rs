//! Thread-count independence of the whole pipeline (criterion 10).

use crate::catalog::Problem;
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::{Error, Result};
use crate::report::{Check, VerificationReport};

use super::{run_suites, Recorder, SuiteOutput};

const DETERMINISM: usize = 10;

/// Thread counts the pipeline is replayed under.
pub const THREAD_COUNTS: [usize; 3] = [1, 4, 8];

/// A small copy of `cfg` that still exercises every suite: coarse grids,
/// the minimum Monte Carlo ensemble, two paths and two catalog problems.
pub fn reduced_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut small = cfg.clone();
    small.grid.nx = 32;
    small.grid.nt = 32;
    small.coefficients.paths = 2;
    small.ensemble.members = crate::config::MIN_MC_MEMBERS;
    small.kernel.samples = 200;
    small.hormander.c_grid = vec![1.0, 2.0];
    small.hormander.centers = 1;
    small.hormander.point_pairs = 2;
    small.operators.members = crate::config::MIN_MC_MEMBERS;
    small.operators.grids = [16, 32];
    small.operators.probes = 4;
    small.maxreg.members = crate::config::MIN_MC_MEMBERS;
    small.maxreg.grids = [16, 32];
    small.moment_sobolev.probes = 4;
    small.data.catalog = vec![Problem::GaussBump, Problem::RandomFourier];
    small.suites = vec![SuiteName::All];
    small
}

/// Replays the reduced pipeline under each of [`THREAD_COUNTS`] and counts
/// runs whose CSV or artifacts differ in any byte from the first.
pub fn determinism_report(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::All, cfg);
    let small = reduced_config(cfg);
    let mut outputs = Vec::new();
    for threads in THREAD_COUNTS {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        let out = rec.step(&format!("replay with {threads} threads"), || {
            pool.install(|| run_suites(&small, &SuiteName::EACH, false, &mut |_| Ok(())))
        })?;
        let artifacts: Vec<(String, String)> = out
            .artifacts
            .iter()
            .map(|a| (a.file_name.clone(), a.contents.clone()))
            .collect();
        outputs.push((out.csv(), artifacts));
    }
    let mismatches = outputs.iter().skip(1).filter(|o| **o != outputs[0]).count();
    let report = VerificationReport::new(
        "determinism_thread_counts",
        mismatches as f64,
        Check::AtMost(0.0),
    )
    .with_bound("identical CSV and artifact bytes for every thread count")
    .with_detail(
        "reports",
        outputs[0].0.lines().count().saturating_sub(1) as f64,
    )
    .with_detail("runs", THREAD_COUNTS.len() as f64);
    rec.push(DETERMINISM, report);
    Ok(rec.finish())
}
