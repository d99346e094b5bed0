//! Sobolev regularity of the moment m^r and the Itô moment-evolution
//! identity for the g-driven heat equation (criterion 8).

use crate::catalog::Problem;
use crate::coefficients::{CoefficientEnsemble, CoefficientPath, SymMatrix};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::moments::{maxreg_ratios, moment_evolution_check, probe_nodes, MaxregMode};
use crate::solvers::stoch_convolve;
use crate::wiener::WienerEnsemble;

use super::{derived_seed, purpose, Recorder, SuiteOutput};

const MOMENTS: usize = 8;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::MomentSobolev, cfg);
    let grid = cfg.grid()?;
    let (members, channels) = (cfg.ensemble.members, cfg.ensemble.channels);
    let wiener = rec.step("wiener ensemble", || {
        WienerEnsemble::generate(
            members,
            channels,
            grid.nt(),
            grid.horizon(),
            derived_seed(cfg.seed, purpose::MOMENT_WIENER),
        )
    })?;
    let paths = CoefficientEnsemble::deterministic(
        CoefficientPath::constant(SymMatrix::identity(grid.dim()), grid.horizon())?,
        members,
    );
    let f = Problem::Zero.field(&grid, 1, members, 0)?;
    let g = cfg.data.g.field(&grid, channels, members, 0)?;
    let u = rec.step("stochastic convolution", || {
        stoch_convolve(&paths, &g, &wiener)
    })?;

    let pairs: Vec<(f64, f64)> = cfg
        .moment_sobolev
        .exponents
        .iter()
        .map(|&[r, p]| (p, r))
        .collect();
    let ratios = rec.step("moment Sobolev norms", || {
        maxreg_ratios(&u, &f, &g, &pairs, MaxregMode::MomentSobolev)
    })?;
    for (mut report, (p, r)) in ratios.into_iter().zip(&pairs) {
        report.name = format!("moment_sobolev_r{r}_p{p}");
        rec.push(MOMENTS, report);
    }

    let probes = probe_nodes(
        &grid,
        cfg.moment_sobolev.probes,
        derived_seed(cfg.seed, purpose::PROBES),
    );
    let mut seen: Vec<f64> = Vec::new();
    for &(_, r) in &pairs {
        if seen.contains(&r) {
            continue;
        }
        seen.push(r);
        let mut report = rec.step(&format!("moment evolution r={r}"), || {
            moment_evolution_check(&u, &paths, &f, &g, Some(&wiener), r, &probes)
        })?;
        report.name = format!("moment_evolution_r{r}");
        rec.push(MOMENTS, report);
    }
    Ok(rec.finish())
}
