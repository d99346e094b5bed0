//! Operator boundedness ratios under refinement (criterion 6) and the
//! sharp/maximal-function machinery (criterion 9).

use crate::catalog::Problem;
use crate::coefficients::{sample_path, CoefficientEnsemble};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::geometry::{dyadic_radii, fs_equivalence_report, CenterStride};
use crate::grid::SpaceTimeGrid;
use crate::moments::{
    frak_g_ratios, probe_nodes, script_g, script_g_ratios, sharp_domination_check,
};
use crate::report::{Check, VerificationReport};

use super::{config_paths, derived_seed, purpose, Recorder, SuiteOutput};

const BOUNDEDNESS: usize = 6;
const SHARP: usize = 9;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Operators, cfg);
    ratio_reports(cfg, &mut rec)?;
    sharp_into(cfg, &mut rec)?;
    Ok(rec.finish())
}

/// Only the criterion-9 reports, for the `sharp-check` subcommand.
pub fn sharp_reports(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Operators, cfg);
    sharp_into(cfg, &mut rec)?;
    Ok(rec.finish())
}

/// ω-dependent coefficients: one sampled path per member.
fn random_paths(cfg: &ExperimentConfig) -> Result<CoefficientEnsemble> {
    let band = cfg.band()?;
    let base = derived_seed(cfg.seed, purpose::OPERATOR_PATHS);
    let paths = (0..cfg.operators.members)
        .map(|m| {
            sample_path(
                &band,
                cfg.grid.dim,
                cfg.coefficients.intervals,
                cfg.coefficients.kind.into(),
                base.wrapping_add(m as u64),
                cfg.grid.horizon,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientEnsemble::from_paths(paths, false)
}

fn grids(cfg: &ExperimentConfig) -> Result<[SpaceTimeGrid; 2]> {
    let [coarse, fine] = cfg.operators.grids;
    Ok([cfg.grid_at(coarse, coarse)?, cfg.grid_at(fine, fine)?])
}

/// `[r, p]` config pairs as (p, r).
fn pairs(exponents: &[[f64; 2]]) -> Vec<(f64, f64)> {
    exponents.iter().map(|&[r, p]| (p, r)).collect()
}

fn ratio_reports(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let members = cfg.operators.members;
    let channels = cfg.ensemble.channels;
    let pairs = pairs(&cfg.operators.exponents);
    let random = rec.step("sample coefficient ensemble", || random_paths(cfg))?;
    let fixed =
        CoefficientEnsemble::deterministic(config_paths(cfg, cfg.grid.dim)?.remove(0), members);
    let data_seed = derived_seed(cfg.seed, purpose::OPERATOR_DATA);
    let grids = grids(cfg)?;
    // [operator][pair][problem] -> (coarse, fine)
    let mut table = vec![vec![Vec::new(); pairs.len()]; 2];
    for problem in &cfg.data.catalog {
        let mut per_grid = Vec::new();
        for grid in &grids {
            let step = format!("{} nx={}", problem.label(), grid.nx());
            let (script, frak) = rec.step(&step, || {
                let f = problem.field(grid, 1, members, data_seed)?;
                let g = problem.field(grid, channels, members, data_seed)?;
                Ok((
                    script_g_ratios(&random, &f, &pairs)?,
                    frak_g_ratios(&fixed, &g, &pairs)?,
                ))
            })?;
            per_grid.push([script, frak]);
        }
        for op in 0..2 {
            for k in 0..pairs.len() {
                table[op][k].push((
                    *problem,
                    per_grid[0][op][k].observed,
                    per_grid[1][op][k].observed,
                ));
            }
        }
    }
    for (op, name) in ["script_G", "frak_G"].iter().enumerate() {
        for (k, &(p, r)) in pairs.iter().enumerate() {
            rec.push(
                BOUNDEDNESS,
                refinement_report(
                    &format!("{name}_refinement_r{r}_p{p}"),
                    &table[op][k],
                    cfg.operators.drift,
                    false,
                ),
            );
        }
    }
    Ok(())
}

/// Largest relative change fine/coarse − 1 over the catalog: signed
/// (growth only) or absolute. Non-finite ratios make the report fail.
pub(super) fn refinement_report(
    name: &str,
    rows: &[(Problem, f64, f64)],
    limit: f64,
    absolute: bool,
) -> VerificationReport {
    let mut worst = f64::NEG_INFINITY;
    let mut largest: f64 = 0.0;
    let mut r = VerificationReport::new(name, 0.0, Check::Below(limit));
    for &(problem, coarse, fine) in rows {
        let change = if coarse == 0.0 && fine == 0.0 {
            0.0
        } else {
            fine / coarse - 1.0
        };
        let change = if absolute { change.abs() } else { change };
        worst = if change.is_nan() || worst.is_nan() {
            f64::NAN
        } else {
            worst.max(change)
        };
        largest = largest.max(coarse).max(fine);
        if !(coarse.is_finite() && fine.is_finite()) {
            worst = f64::INFINITY;
        }
        r = r
            .with_detail(format!("{}_coarse", problem.label()), coarse)
            .with_detail(format!("{}_fine", problem.label()), fine);
    }
    r.observed = if rows.is_empty() { 0.0 } else { worst };
    r.with_bound("ratio(fine) / ratio(coarse) - 1 over the catalog")
        .with_detail("largest_ratio", largest)
}

fn sharp_into(cfg: &ExperimentConfig, rec: &mut Recorder) -> Result<()> {
    let members = cfg.operators.members;
    let random = rec.step("sample coefficient ensemble", || random_paths(cfg))?;
    let data_seed = derived_seed(cfg.seed, purpose::OPERATOR_DATA);
    let grids = grids(cfg)?;
    let subjects = [cfg.data.f, Problem::RandomFourier];
    // One radius set for both grids, resolved by at least two cells on the
    // coarse one, so the two runs approximate the same sharp/maximal
    // functions.
    let radii: Vec<f64> = dyadic_radii(&grids[0]).into_iter().skip(1).collect();
    let mut pointwise = f64::NEG_INFINITY;
    let mut worst_drift: f64 = 0.0;
    let mut fs = VerificationReport::new(
        "fefferman_stein_refinement_p2",
        0.0,
        Check::Below(cfg.operators.drift),
    )
    .with_bound("||h||_2 / ||h#||_2 and ||Mh||_2 / ||h||_2 stable under refinement, h = G_2[f]");
    for problem in subjects {
        let mut ratios = Vec::new();
        for grid in &grids {
            let report = rec.step(
                &format!("sharp function {} nx={}", problem.label(), grid.nx()),
                || {
                    let f = problem.field(grid, 1, members, data_seed)?;
                    let h = script_g(&random, &f, 2.0)?;
                    fs_equivalence_report(&h, 2.0, &radii, CenterStride::Adaptive)
                },
            )?;
            pointwise = pointwise.max(
                report
                    .detail("max_sharp_minus_twice_maximal")
                    .unwrap_or(f64::INFINITY),
            );
            ratios.push([
                report.detail("ratio_h_over_sharp").unwrap_or(f64::NAN),
                report.detail("ratio_maximal_over_h").unwrap_or(f64::NAN),
            ]);
        }
        for (i, label) in ["h_over_sharp", "maximal_over_h"].iter().enumerate() {
            let (c, f) = (ratios[0][i], ratios[1][i]);
            let drift = (f / c - 1.0).abs();
            worst_drift = if drift.is_finite() {
                worst_drift.max(drift)
            } else {
                f64::INFINITY
            };
            fs = fs
                .with_detail(format!("{}_{label}_coarse", problem.label()), c)
                .with_detail(format!("{}_{label}_fine", problem.label()), f);
        }
    }
    fs.observed = worst_drift;
    rec.push(
        SHARP,
        VerificationReport::new("sharp_pointwise", pointwise, Check::AtMost(0.0))
            .with_bound("h#(t,x) <= 2 Mh(t,x) at every node")
            .with_detail("fields", (subjects.len() * grids.len()) as f64),
    );
    rec.push(SHARP, fs);

    let grid = grids[0];
    let r = cfg.operators.exponents.first().map_or(2.0, |e| e[0]);
    let report = rec.step("sharp domination", || {
        let f1 = Problem::Zero.field(&grid, 1, members, 0)?;
        let f2 = Problem::RandomFourier.field(&grid, 1, members, data_seed)?;
        let probes = probe_nodes(
            &grid,
            cfg.operators.probes,
            derived_seed(cfg.seed, purpose::PROBES),
        );
        sharp_domination_check(
            &random,
            &f1,
            &f2,
            r,
            &probes,
            &dyadic_radii(&grid),
            CenterStride::Adaptive,
        )
    })?;
    rec.push(SHARP, report);
    Ok(())
}
