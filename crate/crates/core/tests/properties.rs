//! Randomized invariants of the public API.

use mrl::coefficients::{
    predictable_ensemble, sample_path, CoefficientEnsemble, CoefficientPath, EllipticityBand,
    PathKind, PredictableRule, SymMatrix,
};
use mrl::field::{DeterministicField, RandomField};
use mrl::geometry::{maximal_function, mixed_norm, nested_norm, CenterStride};
use mrl::grid::SpaceTimeGrid;
use mrl::kernel::{
    accumulate_covariance, kernel_derivative, kernel_value, time_derivative_closed_form,
    Covariance, MultiIndex,
};
use mrl::moments::{moment_field_of, script_g};
use mrl::report::{Check, VerificationReport};
use mrl::solvers::det_convolve;
use mrl::wiener::{stream_rng, WienerEnsemble};
use proptest::prelude::*;
use rand::Rng;

fn kind() -> impl Strategy<Value = PathKind> {
    prop_oneof![
        Just(PathKind::Constant),
        Just(PathKind::PiecewiseRandom),
        Just(PathKind::SinusoidClipped)
    ]
}

fn band() -> impl Strategy<Value = EllipticityBand> {
    (0.2f64..2.0, 1.0f64..4.0)
        .prop_map(|(kappa, spread)| EllipticityBand::new(kappa, kappa * spread).unwrap())
}

fn small_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(1, 8.0, 32, 1.0, 16).unwrap()
}

/// Smooth data supported in |x| < 3, well inside the half box.
fn bump(grid: SpaceTimeGrid, shift: f64, amp: f64) -> DeterministicField {
    DeterministicField::from_fn(grid, 1, move |t, _, x| {
        let s = (x[0] - shift) / 2.0;
        if s.abs() < 1.0 {
            amp * (1.0 + t) * (-1.0 / (1.0 - s * s)).exp()
        } else {
            0.0
        }
    })
}

fn random_field(grid: SpaceTimeGrid, members: usize, seed: u64) -> RandomField {
    let fields = (0..members)
        .map(|m| {
            let mut rng = stream_rng(seed, m as u64);
            let (shift, amp) = (rng.gen_range(-0.8..0.8), rng.gen_range(-2.0..2.0));
            bump(grid, shift, amp)
        })
        .collect();
    RandomField::stored(fields).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_paths_stay_in_the_band(b in band(), dim in 1usize..=3, kind in kind(), seed: u64, n in 1usize..12) {
        let path = sample_path(&b, dim, n, kind, seed, 1.0).unwrap();
        let mut rng = stream_rng(seed, 99);
        for a in path.values() {
            for _ in 0..100 {
                let mut xi: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                xi.iter_mut().for_each(|v| *v /= norm);
                let q = a.quad_form(&xi);
                prop_assert!(q >= b.kappa() - b.tolerance() && q <= b.k_up() + b.tolerance(), "{q} outside band");
            }
        }
    }

    #[test]
    fn sample_path_is_a_pure_function_of_its_inputs(b in band(), dim in 1usize..=3, kind in kind(), seed: u64) {
        let first = sample_path(&b, dim, 6, kind, seed, 2.0).unwrap();
        let second = sample_path(&b, dim, 6, kind, seed, 2.0).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn predictable_values_ignore_future_increments(seed: u64, cut in 1usize..16) {
        let b = EllipticityBand::new(0.5, 2.0).unwrap();
        let w = WienerEnsemble::generate(3, 1, 16, 1.0, seed).unwrap();
        let rule = PredictableRule::ThresholdOnW { lookahead: 0 };
        let full = predictable_ensemble(&w, &b, 1, &rule).unwrap();
        let cropped = predictable_ensemble(&w.with_future_zeroed(cut), &b, 1, &rule).unwrap();
        for m in 0..3 {
            prop_assert_eq!(&full.path(m).values()[..=cut], &cropped.path(m).values()[..=cut]);
        }
    }

    #[test]
    fn kernel_is_even(a11 in 0.3f64..3.0, a22 in 0.3f64..3.0, off in -0.2f64..0.2, x in -3.0f64..3.0, y in -3.0f64..3.0) {
        let a = SymMatrix::from_row_major(2, &[a11, off, off, a22]).unwrap();
        let cov = Covariance::from_matrix(&a, 1e-9).unwrap();
        prop_assert_eq!(kernel_value(&cov, &[x, y]), kernel_value(&cov, &[-x, -y]));
    }

    #[test]
    fn kernel_rescales_with_its_covariance(a in 0.2f64..3.0, lambda in 0.1f64..10.0, x in -4.0f64..4.0) {
        let cov = Covariance::from_matrix(&SymMatrix::scaled_identity(1, a), 1e-9).unwrap();
        let scaled = cov.scaled(lambda).unwrap();
        let expected = lambda.powf(-0.5) * kernel_value(&cov, &[x / lambda.sqrt()]);
        let got = kernel_value(&scaled, &[x]);
        prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1e-300), "{got} vs {expected}");
    }

    #[test]
    fn time_derivative_matches_contracted_hessian(seed: u64, t in 0.05f64..0.95, x in -2.0f64..2.0, y in -2.0f64..2.0) {
        let b = EllipticityBand::new(0.5, 2.0).unwrap();
        let path = sample_path(&b, 2, 4, PathKind::PiecewiseRandom, seed, 1.0).unwrap();
        prop_assume!(!path.is_breakpoint(t));
        let cov = accumulate_covariance(&path, 0.0, t).unwrap();
        let closed = time_derivative_closed_form(&cov, path.value_at(t), &[x, y]);
        let hess = kernel_derivative(&cov, &[x, y], &MultiIndex::zero(2), Some(mrl::kernel::TimeDerivative { path: &path, t })).unwrap();
        let scale = kernel_value(&cov, &[0.0, 0.0]) / t;
        prop_assert!((closed - hess).abs() <= 1e-12 * scale, "{closed} vs {hess}");
    }

    #[test]
    fn mixed_norm_is_homogeneous_and_subadditive(seed: u64, alpha in -3.0f64..3.0, p in 2.0f64..6.0) {
        let grid = small_grid();
        let (f, g) = (random_field(grid, 4, seed), random_field(grid, 4, seed ^ 0x5555));
        let r = 2.0;
        let nf = mixed_norm(&f, p, r).unwrap().value;
        let scaled = mixed_norm(&f.scaled(alpha), p, r).unwrap().value;
        prop_assert!((scaled - alpha.abs() * nf).abs() <= 1e-12 * nf.max(1.0));
        let sum = mixed_norm(&f.add(&g).unwrap(), p, r).unwrap().value;
        let ng = mixed_norm(&g, p, r).unwrap().value;
        prop_assert!(sum <= (nf + ng) * (1.0 + 1e-12));
    }

    #[test]
    fn mixed_and_nested_norms_agree_when_exponents_match(seed: u64, r in 1.0f64..6.0) {
        let f = random_field(small_grid(), 5, seed);
        let mixed = mixed_norm(&f, r, r).unwrap().value;
        let nested = nested_norm(&f, r, r).unwrap().value;
        prop_assert!((mixed - nested).abs() <= 1e-12 * mixed.max(1e-300));
    }

    #[test]
    fn maximal_function_is_monotone(seed: u64, shrink in 0.0f64..1.0) {
        let grid = small_grid();
        let big = random_field(grid, 1, seed).member(0).into_owned();
        let small = big.scaled(shrink);
        let radii = [0.5, 1.0, 2.0];
        let m_small = maximal_function(&small, &radii, CenterStride::Every).unwrap();
        let m_big = maximal_function(&big, &radii, CenterStride::Every).unwrap();
        for (s, b) in m_small.data().iter().zip(m_big.data()) {
            prop_assert!(*s <= *b * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn deterministic_solver_is_linear(seed: u64, alpha in -2.0f64..2.0) {
        let grid = small_grid();
        let b = EllipticityBand::new(0.5, 2.0).unwrap();
        let path = sample_path(&b, 1, 4, PathKind::PiecewiseRandom, seed, grid.horizon()).unwrap();
        let paths = CoefficientEnsemble::deterministic(path, 2);
        let (f1, f2) = (random_field(grid, 2, seed), random_field(grid, 2, seed.wrapping_add(1)));
        let combined = f1.scaled(alpha).add(&f2).unwrap();
        let lhs = det_convolve(&paths, &combined).unwrap().u();
        let (u1, u2) = (det_convolve(&paths, &f1).unwrap().u(), det_convolve(&paths, &f2).unwrap().u());
        for m in 0..2 {
            let (l, a, b) = (lhs.member(m), u1.member(m), u2.member(m));
            let scale = l.max_abs().max(1.0);
            for ((l, a), b) in l.data().iter().zip(a.data()).zip(b.data()) {
                prop_assert!((l - (alpha * a + b)).abs() <= 1e-12 * scale);
            }
            prop_assert!(l.slice(0, 0).iter().all(|v| *v == 0.0), "u(0) must vanish");
        }
    }

    #[test]
    fn script_g_is_absolutely_homogeneous(seed: u64, alpha in -3.0f64..3.0) {
        let grid = small_grid();
        let path = CoefficientPath::constant(SymMatrix::identity(1), grid.horizon()).unwrap();
        let paths = CoefficientEnsemble::deterministic(path, 3);
        let f = random_field(grid, 3, seed);
        let base = script_g(&paths, &f, 2.0).unwrap();
        let scaled = script_g(&paths, &f.scaled(alpha), 2.0).unwrap();
        let scale = base.max_abs().max(1e-300);
        for (s, b) in scaled.data().iter().zip(base.data()) {
            prop_assert!((s - alpha.abs() * b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn moments_of_deterministic_fields_are_exact_powers(seed: u64, r in 2.0f64..6.0) {
        let f = random_field(small_grid(), 1, seed).member(0).into_owned();
        let m = moment_field_of(&RandomField::shared(f.clone(), 3), r).unwrap();
        for (v, u) in m.m.data().iter().zip(f.data()) {
            prop_assert!(*v >= 0.0);
            prop_assert!((v - u.abs().powf(r)).abs() <= 1e-12 * v.max(1e-300));
        }
    }

    #[test]
    fn verdict_depends_only_on_value_and_rule(observed in -1e3f64..1e3, limit in -1e3f64..1e3) {
        for check in [Check::AtMost(limit), Check::Below(limit), Check::AtLeast(limit), Check::Finite] {
            let a = VerificationReport::new("a", observed, check).with_detail("noise", 1.0);
            let b = VerificationReport::new("b", observed, check).with_bound("other text");
            prop_assert_eq!(a.passed(), b.passed());
            prop_assert_eq!(a.passed(), check.accepts(observed));
        }
    }

    #[test]
    fn wiener_streams_are_reproducible(seed: u64, members in 1usize..5, steps in 1usize..20) {
        let a = WienerEnsemble::generate(members, 2, steps, 1.0, seed).unwrap();
        let b = WienerEnsemble::generate(members, 2, steps, 1.0, seed).unwrap();
        for m in 0..members {
            for s in 0..steps {
                prop_assert_eq!(a.step_increments(m, s), b.step_increments(m, s));
            }
        }
    }
}
