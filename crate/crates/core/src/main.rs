use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use mrl::coefficients::{predictable_ensemble, CoefficientEnsemble, PredictableRule};
use mrl::config::{ExperimentConfig, SuiteName};
use mrl::field::write_field;
use mrl::report::{emit_report, write_timings, ReportFormat};
use mrl::solvers::{det_convolve, split_solve, SolutionBundle};
use mrl::suites::{run_suite, run_suites, sharp_reports, SuiteOutput};
use mrl::wiener::WienerEnsemble;
use mrl::Error;

/// Verification harness for parabolic SPDEs with random time-dependent
/// coefficients. Exit status: 0 all reports pass, 1 a report fails or a run
/// aborts, 2 configuration or usage error.
#[derive(Parser, Debug)]
#[command(name = "mrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Restricts `all` to one suite.
    #[arg(long, global = true)]
    suite: Option<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Kernel exactness and Gaussian bound fits.
    KernelCheck,
    /// Hörmander-integral uniformity in the cylinder radius.
    Hormander,
    /// Deterministic solve of the configured forcing; writes the field.
    SolveDet,
    /// Stochastic solve with predictable coefficients; writes the field.
    SolveSpde,
    /// Maximal-regularity ratios under refinement.
    VerifyMaxreg,
    /// Moment Sobolev norms and the moment-evolution identity.
    MomentSobolev,
    /// Sharp/maximal-function checks.
    SharpCheck,
    /// Every selected suite plus the determinism replay.
    All,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let is_config = matches!(&e, Error::Config { .. })
            || matches!(&e, Error::Context { source, .. } if matches!(**source, Error::Config { .. }));
        if is_config {
            Failure::Usage(e.to_string())
        } else {
            Failure::Run(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Usage("--config <file> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    if let Some(name) = &cli.suite {
        let suite = SuiteName::parse(name).map_err(|e| Failure::Usage(e.to_string()))?;
        cfg.suites = vec![suite];
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Returns whether every report passed.
fn run(cli: &Cli) -> Result<bool, Failure> {
    let cfg = load(cli)?;
    let out_dir = cfg.output.clone();
    fs::create_dir_all(&out_dir)
        .map_err(|e| Failure::Usage(format!("output directory {}: {e}", out_dir.display())))?;
    fs::write(out_dir.join("config.toml"), cfg.to_toml()).map_err(io_failure)?;
    let output = match cli.command {
        Command::SolveDet | Command::SolveSpde => return solve(&cfg, cli.command, &out_dir),
        Command::KernelCheck => run_suite(&cfg, SuiteName::Kernel)?,
        Command::Hormander => run_suite(&cfg, SuiteName::Hormander)?,
        Command::VerifyMaxreg => run_suite(&cfg, SuiteName::Maxreg)?,
        Command::MomentSobolev => run_suite(&cfg, SuiteName::MomentSobolev)?,
        Command::SharpCheck => sharp_reports(&cfg)?,
        Command::All => {
            let suites = cfg.selected_suites();
            let with_determinism = cfg.suites.contains(&SuiteName::All);
            let mut write_partial = |partial: &SuiteOutput| -> mrl::Result<()> {
                emit_report(&partial.reports, ReportFormat::Csv, &out_dir)?;
                Ok(())
            };
            run_suites(&cfg, &suites, with_determinism, &mut write_partial)?
        }
    };
    write_outputs(&output, &out_dir)?;
    for r in &output.reports {
        println!(
            "{} {}/{} observed={:?}",
            if r.passed() { "PASS" } else { "FAIL" },
            r.suite,
            r.name,
            r.observed
        );
    }
    let failed = output.reports.iter().filter(|r| !r.passed()).count();
    println!(
        "{} reports, {failed} failed; written to {}",
        output.reports.len(),
        out_dir.display()
    );
    Ok(failed == 0)
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::Run(e.to_string())
}

fn write_outputs(output: &SuiteOutput, dir: &Path) -> Result<(), Failure> {
    emit_report(&output.reports, ReportFormat::SvgSummary, dir)?;
    emit_report(&output.reports, ReportFormat::Csv, dir)?;
    write_timings(&output.reports, dir)?;
    for a in &output.artifacts {
        fs::write(dir.join(&a.file_name), &a.contents).map_err(io_failure)?;
    }
    Ok(())
}

/// Solves once and writes `u.bin` with a key/value manifest.
fn solve(cfg: &ExperimentConfig, command: Command, dir: &Path) -> Result<bool, Failure> {
    let grid = cfg.grid()?;
    let started = Instant::now();
    let (u, solver): (SolutionBundle, &str) = if command == Command::SolveDet {
        let path = mrl::coefficients::sample_path(
            &cfg.band()?,
            grid.dim(),
            cfg.coefficients.intervals,
            cfg.coefficients.kind.into(),
            cfg.seed,
            grid.horizon(),
        )?;
        let f = cfg.data.f.field(&grid, 1, 1, cfg.seed)?;
        (
            det_convolve(&CoefficientEnsemble::deterministic(path, 1), &f)?,
            "det_convolve",
        )
    } else {
        let (members, channels) = (cfg.ensemble.members, cfg.ensemble.channels);
        let wiener =
            WienerEnsemble::generate(members, channels, grid.nt(), grid.horizon(), cfg.seed)?;
        let paths = predictable_ensemble(
            &wiener,
            &cfg.band()?,
            grid.dim(),
            &PredictableRule::ThresholdOnW { lookahead: 0 },
        )?;
        let f = cfg.data.f.field(&grid, 1, members, cfg.seed)?;
        let g = cfg.data.g.field(&grid, channels, members, cfg.seed)?;
        (split_solve(&paths, &f, &g, &wiener)?, "split_solve")
    };
    let field_path = dir.join("u.bin");
    write_field(&field_path, &u.u())?;
    let elapsed = started.elapsed().as_secs_f64();
    let manifest = format!(
        "key,value\r\nseed,{}\r\nsolver,{solver}\r\ndim,{}\r\nnx,{}\r\nnt,{}\r\nhorizon,{:?}\r\nhalf_width,{:?}\r\nmembers,{}\r\nconfig_hash,{}\r\nwall_time_s,{elapsed:.3}\r\n",
        cfg.seed,
        grid.dim(),
        grid.nx(),
        grid.nt(),
        grid.horizon(),
        grid.half_width(),
        u.members(),
        cfg.hash(),
    );
    fs::write(dir.join("manifest.csv"), manifest).map_err(io_failure)?;
    println!(
        "wrote {} ({solver}, {} members) in {elapsed:.2}s",
        field_path.display(),
        u.members()
    );
    Ok(true)
}
