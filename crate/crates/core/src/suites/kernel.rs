//! Kernel exactness (criterion 1) and Gaussian bound fits (criterion 2).

use std::f64::consts::PI;

use crate::coefficients::{CoefficientPath, SymMatrix};
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::kernel::{
    accumulate_covariance, bound_samples, fit_gaussian_bound, kernel_derivative, kernel_value,
    time_derivative_closed_form, Covariance, MultiIndex, TimeDerivative,
};
use crate::report::{Check, VerificationReport};
use crate::wiener::stream_rng;

use super::{config_paths, derived_seed, purpose, Recorder, SuiteOutput};

const EXACTNESS: usize = 1;
const BOUNDS: usize = 2;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Kernel, cfg);
    let dim = cfg.grid.dim;
    let horizon = cfg.grid.horizon;
    let paths = rec.step("sample paths", || config_paths(cfg, dim))?;
    let line_paths = rec.step("sample scalar paths", || config_paths(cfg, 1))?;

    let r = rec.step("mass", || mass_report(&paths, horizon))?;
    rec.push(EXACTNESS, r);
    let r = rec.step("spot values", spot_report)?;
    rec.push(EXACTNESS, r);
    let r = rec.step("symmetry", || symmetry_report(&paths, horizon))?;
    rec.push(EXACTNESS, r);
    let r = rec.step("scaling", || scaling_report(&paths, horizon))?;
    rec.push(EXACTNESS, r);
    let r = rec.step("semigroup", || semigroup_report(&line_paths, horizon))?;
    rec.push(EXACTNESS, r);
    let seed = derived_seed(cfg.seed, purpose::KERNEL_SAMPLES);
    let (identity, fd) = rec.step("time derivative", || {
        time_derivative_reports(&paths, horizon, seed)
    })?;
    rec.push(EXACTNESS, identity);
    rec.push(EXACTNESS, fd);

    let c0 = 1.0 / (8.0 * cfg.band.k_up);
    let variants = [
        ("gamma_0", MultiIndex::zero(dim), false),
        ("gamma_1", MultiIndex::axis(dim, 1)?, false),
        ("gamma_2", MultiIndex::axis(dim, 2)?, false),
        ("time", MultiIndex::zero(dim), true),
    ];
    for (v, (label, gamma, time)) in variants.iter().enumerate() {
        let r = rec.step(&format!("bound fit {label}"), || {
            bound_fit_report(
                label,
                &paths,
                gamma,
                *time,
                c0,
                cfg,
                seed.wrapping_add(v as u64 + 1),
            )
        })?;
        rec.push(BOUNDS, r);
    }
    Ok(rec.finish())
}

/// (ρ, t) pairs spanning short and long lags.
fn lag_pairs(horizon: f64) -> Vec<(f64, f64)> {
    vec![
        (0.0, 1e-3 * horizon),
        (0.0, 0.01 * horizon),
        (0.2 * horizon, 0.7 * horizon),
        (0.45 * horizon, 0.55 * horizon),
        (0.0, horizon),
    ]
}

/// Tensor rectangle rule over a cube holding ±12 standard deviations; the
/// rule is spectrally accurate for Gaussians at these spacings.
fn mass(cov: &Covariance) -> f64 {
    let d = cov.dim();
    let lambda_max = cov.a().eigenvalues().into_iter().fold(0.0, f64::max);
    let half = 12.0 * (2.0 * lambda_max).sqrt();
    let n: usize = match d {
        1 => 801,
        2 => 201,
        _ => 61,
    };
    let h = 2.0 * half / (n - 1) as f64;
    let total = n.pow(d as u32);
    let mut x = vec![0.0; d];
    let mut sum = 0.0;
    for flat in 0..total {
        let mut rest = flat;
        for xa in x.iter_mut().rev() {
            *xa = -half + (rest % n) as f64 * h;
            rest /= n;
        }
        sum += kernel_value(cov, &x);
    }
    sum * h.powi(d as i32)
}

fn mass_report(paths: &[CoefficientPath], horizon: f64) -> Result<VerificationReport> {
    let mut worst: f64 = 0.0;
    for path in paths {
        for (rho, t) in lag_pairs(horizon) {
            worst = worst.max((mass(&accumulate_covariance(path, rho, t)?) - 1.0).abs());
        }
    }
    Ok(
        VerificationReport::new("kernel_mass", worst, Check::AtMost(1e-8))
            .with_bound("int p(t, rho, x) dx = 1")
            .with_detail("paths", paths.len() as f64),
    )
}

fn spot_report() -> Result<VerificationReport> {
    let unit = Covariance::from_matrix(&SymMatrix::identity(1), 0.0)?;
    let two_level = CoefficientPath::new(
        vec![0.0, 0.5, 1.0],
        vec![
            SymMatrix::scaled_identity(1, 2.0),
            SymMatrix::scaled_identity(1, 4.0),
        ],
    )?;
    let three = accumulate_covariance(&two_level, 0.0, 1.0)?;
    let base = (4.0 * PI).powf(-0.5);
    let cases = [
        (kernel_value(&unit, &[0.0]), base),
        (kernel_value(&unit, &[2.0]), base * (-1.0f64).exp()),
        (kernel_value(&three, &[0.0]), (12.0 * PI).powf(-0.5)),
        (
            kernel_derivative(&unit, &[1.0], &MultiIndex::axis(1, 1)?, None)?,
            -0.5 * base * (-0.25f64).exp(),
        ),
        (
            kernel_derivative(&unit, &[0.7], &MultiIndex::zero(1), None)?,
            kernel_value(&unit, &[0.7]),
        ),
    ];
    let worst = cases
        .iter()
        .map(|(got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    Ok(
        VerificationReport::new("kernel_spot_values", worst, Check::AtMost(1e-12))
            .with_bound("closed-form Gaussian values")
            .with_detail("cases", cases.len() as f64),
    )
}

/// Deterministic probe points in a box scaled to the kernel width.
fn probe_points(cov: &Covariance, count: usize) -> Vec<Vec<f64>> {
    let d = cov.dim();
    let scale = cov.a().eigenvalues().into_iter().fold(0.0, f64::max).sqrt();
    (0..count)
        .map(|i| {
            (0..d)
                .map(|a| {
                    let u = ((i * (2 * a + 3) + a) as f64 * 0.618_033_988_749_895).fract();
                    (6.0 * u - 3.0) * scale
                })
                .collect()
        })
        .collect()
}

fn symmetry_report(paths: &[CoefficientPath], horizon: f64) -> Result<VerificationReport> {
    let mut worst: f64 = 0.0;
    for path in paths {
        for (rho, t) in lag_pairs(horizon) {
            let cov = accumulate_covariance(path, rho, t)?;
            for x in probe_points(&cov, 32) {
                let minus: Vec<f64> = x.iter().map(|v| -v).collect();
                worst = worst.max((kernel_value(&cov, &x) - kernel_value(&cov, &minus)).abs());
            }
        }
    }
    Ok(
        VerificationReport::new("kernel_symmetry", worst, Check::AtMost(0.0))
            .with_bound("p(x) = p(-x) exactly"),
    )
}

fn scaling_report(paths: &[CoefficientPath], horizon: f64) -> Result<VerificationReport> {
    let mut worst: f64 = 0.0;
    for path in paths {
        for (rho, t) in lag_pairs(horizon) {
            let cov = accumulate_covariance(path, rho, t)?;
            let d = cov.dim() as f64;
            for lambda in [0.25, 3.0, 16.0] {
                let scaled = cov.scaled(lambda)?;
                for x in probe_points(&cov, 16) {
                    let y: Vec<f64> = x.iter().map(|v| v / lambda.sqrt()).collect();
                    let want = lambda.powf(-0.5 * d) * kernel_value(&cov, &y);
                    let got = kernel_value(&scaled, &x);
                    if want > 0.0 {
                        worst = worst.max((got - want).abs() / want);
                    }
                }
            }
        }
    }
    Ok(
        VerificationReport::new("kernel_scaling", worst, Check::AtMost(1e-12))
            .with_bound("p_{lambda A}(x) = lambda^{-d/2} p_A(lambda^{-1/2} x), relative"),
    )
}

/// P(t₂, t₁) * P(t₁, 0) = P(t₂, 0) on scalar paths, by a fine rectangle rule.
fn semigroup_report(paths: &[CoefficientPath], horizon: f64) -> Result<VerificationReport> {
    let mut worst: f64 = 0.0;
    for path in paths {
        let (t1, t2) = (0.3 * horizon, 0.8 * horizon);
        let first = accumulate_covariance(path, 0.0, t1)?;
        let second = accumulate_covariance(path, t1, t2)?;
        let whole = accumulate_covariance(path, 0.0, t2)?;
        let half = 14.0 * (2.0 * whole.a().get(0, 0)).sqrt();
        let n = 8001;
        let h = 2.0 * half / (n - 1) as f64;
        for x in [0.0, 0.4, -1.3, 2.5] {
            let conv: f64 = (0..n)
                .map(|i| {
                    let y = -half + i as f64 * h;
                    kernel_value(&second, &[x - y]) * kernel_value(&first, &[y])
                })
                .sum::<f64>()
                * h;
            worst = worst.max((conv - kernel_value(&whole, &[x])).abs());
        }
    }
    Ok(
        VerificationReport::new("kernel_semigroup", worst, Check::AtMost(1e-10))
            .with_bound("P(t2,t1) * P(t1,0) = P(t2,0)"),
    )
}

/// D_t p against the closed form a^{ij} p_{x^i x^j} and against a central
/// difference in t, both normalised by p(0)·K/(κτ).
fn time_derivative_reports(
    paths: &[CoefficientPath],
    horizon: f64,
    seed: u64,
) -> Result<(VerificationReport, VerificationReport)> {
    let mut rng = stream_rng(seed, 0);
    let d = paths[0].dim();
    let samples = bound_samples(200, d, horizon, 1e-3, 4.0, &mut rng);
    let (mut identity, mut fd, mut used) = (0.0f64, 0.0f64, 0usize);
    for path in paths {
        for s in &samples {
            let tau = s.t - s.rho;
            let delta = 1e-4 * tau;
            let near_break = path
                .breakpoints()
                .iter()
                .any(|b| (b - s.t).abs() <= 2.0 * delta);
            if near_break || s.t + delta > horizon {
                continue;
            }
            let cov = accumulate_covariance(path, s.rho, s.t)?;
            let scale = kernel_value(&cov, &vec![0.0; d]) * path.ceiling() / (path.floor() * tau);
            let time = TimeDerivative { path, t: s.t };
            let dt = kernel_derivative(&cov, &s.x, &MultiIndex::zero(d), Some(time))?;
            let closed = time_derivative_closed_form(&cov, path.value_at(s.t), &s.x);
            identity = identity.max((dt - closed).abs() / scale);
            let plus = kernel_value(&accumulate_covariance(path, s.rho, s.t + delta)?, &s.x);
            let minus = kernel_value(&accumulate_covariance(path, s.rho, s.t - delta)?, &s.x);
            fd = fd.max(((plus - minus) / (2.0 * delta) - dt).abs() / scale);
            used += 1;
        }
    }
    Ok((
        VerificationReport::new(
            "kernel_time_derivative_identity",
            identity,
            Check::AtMost(1e-12),
        )
        .with_bound("D_t p = a^{ij}(t) p_{x^i x^j} off breakpoints")
        .with_detail("samples", used as f64),
        VerificationReport::new("kernel_time_derivative_fd", fd, Check::AtMost(1e-6))
            .with_bound("D_t p against a central difference in t")
            .with_detail("samples", used as f64),
    ))
}

/// N_fit over all paths on n samples and on those n plus n more.
fn bound_fit_report(
    label: &str,
    paths: &[CoefficientPath],
    gamma: &MultiIndex,
    time: bool,
    c0: f64,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<VerificationReport> {
    let n = cfg.kernel.samples;
    let mut rng = stream_rng(seed, 0);
    let samples = bound_samples(
        2 * n,
        gamma.components().len(),
        cfg.grid.horizon,
        1e-3,
        8.0,
        &mut rng,
    );
    let fit = |set: &[_]| -> Result<f64> {
        paths
            .iter()
            .map(|p| fit_gaussian_bound(p, gamma, time, c0, set).map(|f| f.n_fit))
            .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))
    };
    let single = fit(&samples[..n])?;
    let double = fit(&samples)?;
    let drift = (double / single - 1.0).abs();
    Ok(VerificationReport::new(
        format!("gaussian_bound_fit_{label}"),
        drift,
        Check::AtMost(cfg.kernel.stability),
    )
    .with_bound(if time {
        "|D_t p| <= N tau^{-d/2-1} exp(-c0 |x|^2 / tau)"
    } else {
        "|D^gamma p| <= N tau^{-d/2-|gamma|/2} exp(-c0 |x|^2 / tau)"
    })
    .with_detail("n_fit", single)
    .with_detail("n_fit_doubled", double)
    .with_detail("c0", c0)
    .with_detail("samples", n as f64)
    .with_series(vec![(n as f64, single), ((2 * n) as f64, double)]))
}
