//! Solver convergence on a manufactured problem (criterion 4) and the Itô
//! isometry with a cross-solver comparison (criterion 5).

use std::f64::consts::PI;

use crate::catalog::Problem;
use crate::coefficients::{CoefficientEnsemble, CoefficientPath, SymMatrix};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::grid::SpaceTimeGrid;
use crate::parallel::ordered_map;
use crate::report::{Check, VerificationReport};
use crate::solvers::{
    bump_test_function, det_convolve, euler_maruyama_oracle, stoch_convolve, weak_residual,
    EmScheme, SolutionBundle,
};
use crate::stats::mean_and_se;
use crate::wiener::WienerEnsemble;

use super::{derived_seed, purpose, Recorder, SuiteOutput};

const CONVERGENCE: usize = 4;
const ISOMETRY: usize = 5;

/// Spatial resolutions of the refinement ladder.
pub(super) const LADDER: [usize; 3] = [64, 128, 256];

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Solver, cfg);
    let horizon = cfg.grid.horizon;

    let time_rows = rec.step("time refinement", || {
        LADDER
            .iter()
            .map(|&nt| manufactured_errors(64, nt, horizon, Route::Spectral))
            .collect::<Result<Vec<_>>>()
    })?;
    let space_rows = rec.step("space refinement", || {
        LADDER
            .iter()
            .map(|&nx| manufactured_errors(nx, nx * nx / 16, horizon, Route::SemiImplicitFd))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut csv = String::from("study,nx,nt,max_error,weak_residual\r\n");
    for (study, rows) in [("time", &time_rows), ("space", &space_rows)] {
        for r in rows.iter() {
            csv.push_str(&format!(
                "{study},{},{},{:?},{:?}\r\n",
                r.nx, r.nt, r.error, r.residual
            ));
        }
    }
    rec.artifact("convergence.csv", csv);
    rec.push(
        CONVERGENCE,
        order_report(
            "convergence_order_dt",
            &time_rows,
            |r| r.error,
            |r| r.nt,
            0.9,
        ),
    );
    rec.push(
        CONVERGENCE,
        order_report(
            "weak_residual_order_dt",
            &time_rows,
            |r| r.residual,
            |r| r.nt,
            0.9,
        ),
    );
    rec.push(
        CONVERGENCE,
        order_report(
            "convergence_order_h",
            &space_rows,
            |r| r.error,
            |r| r.nx,
            1.9,
        ),
    );
    rec.push(
        CONVERGENCE,
        order_report(
            "weak_residual_order_h",
            &space_rows,
            |r| r.residual,
            |r| r.nx,
            1.9,
        ),
    );

    let grid = cfg.grid()?;
    let members = cfg.ensemble.members;
    let wiener = rec.step("wiener ensemble", || {
        WienerEnsemble::generate(
            members,
            1,
            grid.nt(),
            horizon,
            derived_seed(cfg.seed, purpose::ITO),
        )
    })?;
    let (unit, cross_unit) = rec.step("isometry", || isometry_reports(&grid, &wiener))?;
    rec.push(ISOMETRY, unit);
    rec.push(ISOMETRY, cross_unit);
    let cross = rec.step("cross solver", || {
        cross_solver_report(&grid, &wiener, cfg.data.g)
    })?;
    rec.push(ISOMETRY, cross);
    Ok(rec.finish())
}

#[derive(Clone, Copy)]
enum Route {
    Spectral,
    SemiImplicitFd,
}

struct ErrorRow {
    nx: usize,
    nt: usize,
    error: f64,
    residual: f64,
}

/// Max nodal error against u = t sin x and the weak residual, for the
/// forcing (1 + t) sin x under a ≡ 1 on the π-periodic line.
fn manufactured_errors(nx: usize, nt: usize, horizon: f64, route: Route) -> Result<ErrorRow> {
    let grid = SpaceTimeGrid::new(1, PI, nx, horizon, nt)?;
    let paths = CoefficientEnsemble::deterministic(
        CoefficientPath::constant(SymMatrix::identity(1), horizon)?,
        1,
    );
    let f = Problem::ManufacturedSin.field(&grid, 1, 1, 0)?;
    let g = Problem::Zero.field(&grid, 1, 1, 0)?;
    let u = match route {
        Route::Spectral => det_convolve(&paths, &f)?,
        Route::SemiImplicitFd => {
            let w = WienerEnsemble::generate(1, 1, nt, horizon, 0)?;
            euler_maruyama_oracle(&paths, &f, &g, &w, EmScheme::SemiImplicit)?
        }
    };
    let sol = u.member(0);
    let mut error: f64 = 0.0;
    for t in 0..grid.slices() {
        for (j, v) in sol.u.slice(t, 0).iter().enumerate() {
            error = error.max((v - grid.time(t) * grid.coord(j).sin()).abs());
        }
    }
    let tests: Vec<Vec<f64>> = [-1.5, 0.0, 1.2]
        .iter()
        .map(|&c| bump_test_function(&grid, &[c], 1.0))
        .collect();
    let residual = weak_residual(&u, &paths, &f, &g, None, &tests, f64::INFINITY)?.observed;
    Ok(ErrorRow {
        nx,
        nt,
        error,
        residual,
    })
}

/// Smallest observed order log₂(e_k / e_{k+1}) along a doubling ladder.
fn order_report(
    name: &str,
    rows: &[ErrorRow],
    value: impl Fn(&ErrorRow) -> f64,
    size: impl Fn(&ErrorRow) -> usize,
    required: f64,
) -> VerificationReport {
    let order = rows
        .windows(2)
        .map(|w| {
            (value(&w[0]) / value(&w[1])).log2() / (size(&w[1]) as f64 / size(&w[0]) as f64).log2()
        })
        .fold(f64::INFINITY, f64::min);
    let mut r = VerificationReport::new(name, order, Check::AtLeast(required))
        .with_bound("error ~ C size^{-order} under refinement")
        .with_series(rows.iter().map(|r| (size(r) as f64, value(r))).collect());
    for row in rows {
        r = r.with_detail(format!("value_{}", size(row)), value(row));
    }
    r
}

fn heat(grid: &SpaceTimeGrid, members: usize) -> Result<CoefficientEnsemble> {
    Ok(CoefficientEnsemble::deterministic(
        CoefficientPath::constant(SymMatrix::identity(grid.dim()), grid.horizon())?,
        members,
    ))
}

/// Slice closest to t = 0.5 (or to the horizon when shorter) and the
/// central node x = 0.
fn probe_location(grid: &SpaceTimeGrid) -> (usize, usize) {
    let slice = ((0.5f64.min(grid.horizon())) / grid.dt()).round() as usize;
    let center = grid.ravel(&vec![grid.nx() / 2; grid.dim()]);
    (slice, center)
}

fn squares_at(u: &SolutionBundle, slice: usize, node: usize) -> Vec<f64> {
    ordered_map(u.members(), |m| u.member(m).u.slice(slice, 0)[node].powi(2))
}

/// E|u(t, 0)|² = t for g ≡ 1 under a ≡ I, and the SE-scaled gap between
/// the spectral and finite-difference estimates of it.
fn isometry_reports(
    grid: &SpaceTimeGrid,
    wiener: &WienerEnsemble,
) -> Result<(VerificationReport, VerificationReport)> {
    let members = wiener.members();
    let (slice, node) = probe_location(grid);
    let t = grid.time(slice);
    let g = Problem::Unit.field(grid, 1, members, 0)?;
    let u = stoch_convolve(&heat(grid, members)?, &g, wiener)?;
    let (mean, se) = mean_and_se(&squares_at(&u, slice, node));
    let unit = VerificationReport::new(
        "ito_isometry_unit",
        (mean - t).abs() / se,
        Check::AtMost(3.0),
    )
    .with_bound("E|T g(t, x)|^2 = int_0^t |P g|^2 ds = t for g = 1, a = I")
    .with_std_error(se)
    .with_detail("estimate", mean)
    .with_detail("expected", t)
    .with_detail("members", members as f64);
    let zero = Problem::Zero.field(grid, 1, members, 0)?;
    let em = euler_maruyama_oracle(
        &heat(grid, members)?,
        &zero,
        &g,
        wiener,
        EmScheme::SemiImplicit,
    )?;
    let (em_mean, em_se) = mean_and_se(&squares_at(&em, slice, node));
    let combined = (se * se + em_se * em_se).sqrt();
    let cross = VerificationReport::new(
        "cross_solver_unit",
        (mean - em_mean).abs() / combined,
        Check::AtMost(3.0),
    )
    .with_bound("spectral and semi-implicit Euler-Maruyama second moments agree")
    .with_std_error(combined)
    .with_detail("spectral", mean)
    .with_detail("euler_maruyama", em_mean);
    Ok((unit, cross))
}

/// Spectral vs semi-implicit EM second moments for the configured g at the
/// probe slice and x = 0.
fn cross_solver_report(
    grid: &SpaceTimeGrid,
    wiener: &WienerEnsemble,
    g: Problem,
) -> Result<VerificationReport> {
    let members = wiener.members();
    let (slice, node) = probe_location(grid);
    let g_field = g.field(grid, 1, members, 0)?;
    let zero = Problem::Zero.field(grid, 1, members, 0)?;
    let spectral = stoch_convolve(&heat(grid, members)?, &g_field, wiener)?;
    let em = euler_maruyama_oracle(
        &heat(grid, members)?,
        &zero,
        &g_field,
        wiener,
        EmScheme::SemiImplicit,
    )?;
    let (a, sa) = mean_and_se(&squares_at(&spectral, slice, node));
    let (b, sb) = mean_and_se(&squares_at(&em, slice, node));
    let combined = (sa * sa + sb * sb).sqrt();
    Ok(VerificationReport::new(
        format!("cross_solver_{}", g.label()),
        (a - b).abs() / combined,
        Check::AtMost(3.0),
    )
    .with_bound("spectral and semi-implicit Euler-Maruyama second moments agree")
    .with_std_error(combined)
    .with_detail("spectral", a)
    .with_detail("euler_maruyama", b))
}
