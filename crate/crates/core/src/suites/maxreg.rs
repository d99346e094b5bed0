//! Maximal-regularity ratios with predictable random coefficients under
//! refinement, and the zero-data check (criterion 7).

use crate::catalog::Problem;
use crate::coefficients::{predictable_ensemble, PredictableRule};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::moments::{maxreg_ratios, MaxregMode};
use crate::report::{Check, VerificationReport};
use crate::solvers::split_solve;
use crate::wiener::WienerEnsemble;

use super::operators::refinement_report;
use super::{derived_seed, purpose, Recorder, SuiteOutput};

const MAXREG: usize = 7;
const MODES: [MaxregMode; 2] = [MaxregMode::Full, MaxregMode::SecondDerivs];

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Maxreg, cfg);
    let m = &cfg.maxreg;
    let (members, channels) = (m.members, cfg.ensemble.channels);
    let [coarse_n, fine_n] = m.grids;
    let grids = [
        cfg.grid_at(coarse_n, coarse_n)?,
        cfg.grid_at(fine_n, fine_n)?,
    ];
    let horizon = cfg.grid.horizon;
    // One Brownian ensemble on the fine grid, summed down to the coarse one;
    // coefficients switch only at coarse times so both grids see the same
    // predictable paths.
    let fine_w = rec.step("wiener ensemble", || {
        WienerEnsemble::generate(
            members,
            channels,
            fine_n,
            horizon,
            derived_seed(cfg.seed, purpose::MAXREG_WIENER),
        )
    })?;
    let coarse_w = fine_w.coarsen(fine_n / coarse_n)?;
    let wieners = [&coarse_w, &fine_w];
    let band = cfg.band()?;
    let paths = rec.step("predictable coefficients", || {
        predictable_ensemble(
            &coarse_w,
            &band,
            cfg.grid.dim,
            &PredictableRule::ThresholdOnW { lookahead: 0 },
        )
    })?;
    let pairs: Vec<(f64, f64)> = m.exponents.iter().map(|&[r, p]| (p, r)).collect();
    let data_seed = derived_seed(cfg.seed, purpose::MAXREG_DATA);

    // [mode][pair] -> rows (problem, coarse, fine)
    let mut table = vec![vec![Vec::new(); pairs.len()]; MODES.len()];
    for problem in &cfg.data.catalog {
        let mut per_grid = Vec::new();
        for (grid, w) in grids.iter().zip(wieners) {
            let step = format!("{} nx={}", problem.label(), grid.nx());
            let ratios = rec.step(&step, || {
                let f = problem.field(grid, 1, members, data_seed)?;
                let g = problem.field(grid, channels, members, data_seed)?;
                let u = split_solve(&paths, &f, &g, w)?;
                MODES
                    .iter()
                    .map(|&mode| maxreg_ratios(&u, &f, &g, &pairs, mode))
                    .collect::<Result<Vec<_>>>()
            })?;
            per_grid.push(ratios);
        }
        for mi in 0..MODES.len() {
            for k in 0..pairs.len() {
                table[mi][k].push((
                    *problem,
                    per_grid[0][mi][k].observed,
                    per_grid[1][mi][k].observed,
                ));
            }
        }
    }
    for (mi, mode) in MODES.iter().enumerate() {
        for (k, &(p, r)) in pairs.iter().enumerate() {
            let name = format!("maxreg_{}_refinement_r{r}_p{p}", mode.label());
            rec.push(
                MAXREG,
                refinement_report(&name, &table[mi][k], m.drift, true),
            );
        }
    }

    let zero = rec.step("zero data", || {
        let grid = grids[0];
        let f = Problem::Zero.field(&grid, 1, members, 0)?;
        let g = Problem::Zero.field(&grid, channels, members, 0)?;
        let u = split_solve(&paths, &f, &g, &coarse_w)?;
        let largest = (0..members)
            .map(|i| {
                let s = u.member(i);
                s.u.max_abs().max(s.u_x.max_abs()).max(s.u_xx.max_abs())
            })
            .fold(0.0, f64::max);
        Ok(
            VerificationReport::new("maxreg_zero_data", largest, Check::AtMost(1e-12))
                .with_bound("f = 0, g = 0 gives u = 0")
                .with_detail("members", members as f64),
        )
    })?;
    rec.push(MAXREG, zero);
    Ok(rec.finish())
}
