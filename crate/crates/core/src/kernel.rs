//! The time-inhomogeneous Gaussian kernel
//!
//! ```text
//! p(t, ρ, x) = (4π)^{-d/2} sqrt(det B) exp(-(Bx, x) / 4),   B = A⁻¹,   A = ∫_ρ^t a(η) dη
//! ```
//!
//! together with exact spatial derivatives, the time derivative through
//! `D_t p = a^{ij}(t) p_{x^i x^j}`, the Fourier symbol and empirical fits of
//! the Gaussian upper bound.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rustfft::num_complex::Complex64;

use crate::coefficients::{CoefficientPath, SymMatrix};
use crate::error::{Error, Result};

/// Highest derivative order accepted for `gamma`.
pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    a: SymMatrix,
    b: SymMatrix,
    sigma: SymMatrix,
    det_b: f64,
}

impl Covariance {
    /// Builds (A, A⁻¹, A^{1/2}, det A⁻¹), raising eigenvalues of `a` below
    /// `floor` to `floor`.
    pub fn from_matrix(a: &SymMatrix, floor: f64) -> Result<Self> {
        let dim = a.dim();
        if dim == 1 {
            let v = a.get(0, 0).max(floor);
            if !(v > 0.0) {
                return Err(Error::Domain(format!("covariance {v} is not positive")));
            }
            return Ok(Self {
                a: SymMatrix::scaled_identity(1, v),
                b: SymMatrix::scaled_identity(1, 1.0 / v),
                sigma: SymMatrix::scaled_identity(1, v.sqrt()),
                det_b: 1.0 / v,
            });
        }
        let eig = SymmetricEigen::new(a.to_dense());
        let mut clamped = false;
        let vals: Vec<f64> = eig
            .eigenvalues
            .iter()
            .map(|&l| {
                if l < floor {
                    clamped = true;
                    floor
                } else {
                    l
                }
            })
            .collect();
        if vals.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Domain("covariance is not positive definite".into()));
        }
        let q = &eig.eigenvectors;
        let build = |f: &dyn Fn(f64) -> f64| {
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                dim,
                vals.iter().map(|&l| f(l)),
            ));
            SymMatrix::from_dense(&(q * d * q.transpose()))
        };
        let a_out = if clamped { build(&|l| l) } else { a.clone() };
        let b = match a_out.to_dense().try_inverse() {
            Some(inv) if !clamped => SymMatrix::from_dense(&inv),
            _ => build(&|l| 1.0 / l),
        };
        Ok(Self {
            a: a_out,
            b,
            sigma: build(&f64::sqrt),
            det_b: vals.iter().map(|l| 1.0 / l).product(),
        })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    pub fn a(&self) -> &SymMatrix {
        &self.a
    }

    pub fn b(&self) -> &SymMatrix {
        &self.b
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn det_b(&self) -> f64 {
        self.det_b
    }

    /// Covariance with A replaced by λA.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::from_matrix(&self.a.scale(lambda), 0.0)
    }
}

/// A = ∫_ρ^t a, with eigenvalues clamped below at floor(a)·(t − ρ).
pub fn accumulate_covariance(path: &CoefficientPath, rho: f64, t: f64) -> Result<Covariance> {
    if !(rho < t) {
        return Err(Error::Domain(format!(
            "kernel requires rho < t (rho = {rho}, t = {t})"
        )));
    }
    Covariance::from_matrix(&path.integral(rho, t), path.floor() * (t - rho))
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(components: Vec<usize>) -> Result<Self> {
        let m = Self(components);
        if m.order() > MAX_ORDER {
            return Err(Error::invalid(format!(
                "derivative order {} exceeds the cap {MAX_ORDER}",
                m.order()
            )));
        }
        Ok(m)
    }

    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    /// `order` derivatives along axis 0.
    pub fn axis(dim: usize, order: usize) -> Result<Self> {
        let mut c = vec![0; dim];
        c[0] = order;
        Self::new(c)
    }

    pub fn components(&self) -> &[usize] {
        &self.0
    }

    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// Axis list with multiplicity, e.g. (2, 1) → [0, 0, 1].
    fn axes(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, &n)| std::iter::repeat_n(i, n))
            .collect()
    }

    pub fn label(&self) -> String {
        self.0
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join("")
    }
}

pub fn kernel_value(cov: &Covariance, x: &[f64]) -> f64 {
    let d = cov.dim() as f64;
    (4.0 * PI).powf(-0.5 * d) * cov.det_b.sqrt() * (-0.25 * cov.b.quad_form(x)).exp()
}

/// ∂_{axes} e^{q}/e^{q} for the quadratic q(x) = −(Bx, x)/4.
///
/// With g = ∇q = −Bx/2 and H = ∇²q = −B/2 constant, the derivative is the sum
/// over all partitions of `axes` into singletons and pairs of
/// Π g_i · Π H_ij.
fn gaussian_factor(axes: &[usize], g: &[f64], h: &SymMatrix) -> f64 {
    match axes.split_first() {
        None => 1.0,
        Some((&first, rest)) => {
            let mut total = g[first] * gaussian_factor(rest, g, h);
            for k in 0..rest.len() {
                let mut remaining = rest.to_vec();
                let partner = remaining.remove(k);
                total += h.get(first, partner) * gaussian_factor(&remaining, g, h);
            }
            total
        }
    }
}

fn spatial_derivative_axes(cov: &Covariance, x: &[f64], axes: &[usize]) -> f64 {
    let dim = cov.dim();
    let g: Vec<f64> = (0..dim)
        .map(|i| -0.5 * (0..dim).map(|j| cov.b.get(i, j) * x[j]).sum::<f64>())
        .collect();
    let h = cov.b.scale(-0.5);
    kernel_value(cov, x) * gaussian_factor(axes, &g, &h)
}

/// Time-derivative request: the path and the evaluation time `t`.
#[derive(Clone, Copy, Debug)]
pub struct TimeDerivative<'a> {
    pub path: &'a CoefficientPath,
    pub t: f64,
}

/// D^γ_x p, or D_t D^γ_x p = a^{ij}(t) D^γ ∂_i∂_j p when `time` is given.
pub fn kernel_derivative(
    cov: &Covariance,
    x: &[f64],
    gamma: &MultiIndex,
    time: Option<TimeDerivative<'_>>,
) -> Result<f64> {
    if gamma.order() > MAX_ORDER {
        return Err(Error::invalid(format!(
            "derivative order {} exceeds {MAX_ORDER}",
            gamma.order()
        )));
    }
    if gamma.components().len() != cov.dim() || x.len() != cov.dim() {
        return Err(Error::mismatch(
            "multi-index, point and covariance dimensions differ",
        ));
    }
    let axes = gamma.axes();
    let Some(TimeDerivative { path, t }) = time else {
        return Ok(spatial_derivative_axes(cov, x, &axes));
    };
    if path.is_breakpoint(t) {
        return Err(Error::Domain(format!(
            "time derivative requested at breakpoint t = {t}"
        )));
    }
    let a = path.value_at(t);
    let dim = cov.dim();
    let mut total = 0.0;
    let mut extended = axes.clone();
    for i in 0..dim {
        for j in 0..dim {
            extended.truncate(axes.len());
            extended.push(i);
            extended.push(j);
            total += a.get(i, j) * spatial_derivative_axes(cov, x, &extended);
        }
    }
    Ok(total)
}

/// D_t p from the closed form: with Ȧ = a(t), ∂_t B = −B a B and
/// ∂_t log det B = −tr(B a), so D_t p = p [−tr(Ba)/2 + (aBx, Bx)/4].
pub fn time_derivative_closed_form(cov: &Covariance, a: &SymMatrix, x: &[f64]) -> f64 {
    let dim = cov.dim();
    let bx: Vec<f64> = (0..dim)
        .map(|i| (0..dim).map(|j| cov.b.get(i, j) * x[j]).sum())
        .collect();
    let tr_ba = cov.b.contract(a);
    kernel_value(cov, x) * (-0.5 * tr_ba + 0.25 * a.quad_form(&bx))
}

/// i^{|γ|} ξ^γ exp(−(Aξ, ξ))
pub fn fourier_symbol(cov: &Covariance, xi: &[f64], gamma: &MultiIndex) -> Complex64 {
    let mono: f64 = gamma
        .components()
        .iter()
        .zip(xi)
        .map(|(&n, &x)| x.powi(n as i32))
        .product();
    let phase = match gamma.order() % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    };
    phase * mono * (-cov.a.quad_form(xi)).exp()
}

/// One bound-fit sample: evaluation time, source time, point.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundSample {
    pub t: f64,
    pub rho: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBoundFit {
    pub c0: f64,
    pub n_fit: f64,
    pub gamma: MultiIndex,
    pub with_time_derivative: bool,
    pub sample_count: usize,
    /// Index of the sample attaining `n_fit`.
    pub argmax: usize,
}

/// Smallest N with |D^γ p| ≤ N τ^{−d/2−|γ|/2−δ} exp(−c0|x|²/τ) on the
/// samples, τ = t − ρ and δ = 1 for the time-derivative variant.
///
/// Ratios are formed in log space so large |x|²/τ does not underflow.
pub fn fit_gaussian_bound(
    path: &CoefficientPath,
    gamma: &MultiIndex,
    time_derivative: bool,
    c0: f64,
    samples: &[BoundSample],
) -> Result<GaussianBoundFit> {
    if samples.is_empty() {
        return Err(Error::invalid("bound fit needs at least one sample"));
    }
    if !(c0 > 0.0) {
        return Err(Error::invalid("c0 must be positive"));
    }
    let d = path.dim() as f64;
    let exponent = -0.5 * d - 0.5 * gamma.order() as f64 - if time_derivative { 1.0 } else { 0.0 };
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (idx, s) in samples.iter().enumerate() {
        let tau = s.t - s.rho;
        let cov = accumulate_covariance(path, s.rho, s.t)?;
        let time = time_derivative.then_some(TimeDerivative { path, t: s.t });
        let value = kernel_derivative(&cov, &s.x, gamma, time)?.abs();
        if value == 0.0 {
            continue;
        }
        let r2: f64 = s.x.iter().map(|v| v * v).sum();
        let log_ratio = value.ln() - exponent * tau.ln() + c0 * r2 / tau;
        if log_ratio > best.0 {
            best = (log_ratio, idx);
        }
    }
    Ok(GaussianBoundFit {
        c0,
        n_fit: if best.0 == f64::NEG_INFINITY {
            0.0
        } else {
            best.0.exp()
        },
        gamma: gamma.clone(),
        with_time_derivative: time_derivative,
        sample_count: samples.len(),
        argmax: best.1,
    })
}

/// Samples with τ = t − ρ log-uniform in `[tau_min, horizon]`, ρ uniform in
/// `[0, horizon − τ]`, and |x| / sqrt(τ) uniform in `[0, spread]` along a
/// random direction.
pub fn bound_samples(
    count: usize,
    dim: usize,
    horizon: f64,
    tau_min: f64,
    spread: f64,
    rng: &mut impl Rng,
) -> Vec<BoundSample> {
    let (lo, hi) = (tau_min.ln(), horizon.ln());
    (0..count)
        .map(|_| {
            let tau = rng.gen_range(lo..=hi).exp().min(horizon);
            let rho = rng.gen_range(0.0..=(horizon - tau).max(0.0));
            let mut dir: Vec<f64> = (0..dim)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let radius = rng.gen_range(0.0..=spread) * tau.sqrt();
            for v in &mut dir {
                *v *= radius / norm;
            }
            BoundSample {
                t: rho + tau,
                rho,
                x: dir,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_cov(a: f64) -> Covariance {
        Covariance::from_matrix(&SymMatrix::scaled_identity(1, a), 0.0).unwrap()
    }

    #[test]
    fn spot_values() {
        let c = scalar_cov(1.0);
        assert!((kernel_value(&c, &[0.0]) - 0.282_094_791_773_878_1).abs() < 1e-12);
        assert!(
            (kernel_value(&c, &[2.0]) - 0.282_094_791_773_878_1 * (-1.0f64).exp()).abs() < 1e-12
        );
        assert!((kernel_value(&scalar_cov(3.0), &[0.0]) - (12.0 * PI).powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn first_derivative_closed_form() {
        let c = scalar_cov(1.0);
        let g = MultiIndex::new(vec![1]).unwrap();
        let v = kernel_derivative(&c, &[1.0], &g, None).unwrap();
        assert!((v - (-0.5 * kernel_value(&c, &[1.0]))).abs() < 1e-15);
        assert!((v + 0.109_848).abs() < 1e-6);
    }

    #[test]
    fn order_cap() {
        assert!(MultiIndex::new(vec![5]).is_err());
        assert!(MultiIndex::new(vec![2, 2]).is_ok());
    }

    #[test]
    fn piecewise_covariance() {
        let p = CoefficientPath::new(
            vec![0.0, 0.5, 1.0],
            vec![
                SymMatrix::scaled_identity(1, 2.0),
                SymMatrix::scaled_identity(1, 4.0),
            ],
        )
        .unwrap();
        let c = accumulate_covariance(&p, 0.0, 1.0).unwrap();
        assert_eq!(c.a().get(0, 0), 3.0);
        assert!(accumulate_covariance(&p, 1.0, 1.0).is_err());
    }

    #[test]
    fn symbol_values() {
        let c = scalar_cov(1.0);
        let s0 = fourier_symbol(&c, &[0.0], &MultiIndex::zero(1));
        assert_eq!(s0, Complex64::new(1.0, 0.0));
        let s1 = fourier_symbol(&c, &[1.0], &MultiIndex::new(vec![1]).unwrap());
        assert!((s1 - Complex64::new(0.0, (-1.0f64).exp())).norm() < 1e-15);
    }

    #[test]
    fn breakpoint_time_derivative_rejected() {
        let p = CoefficientPath::new(
            vec![0.0, 0.5, 1.0],
            vec![
                SymMatrix::scaled_identity(1, 2.0),
                SymMatrix::scaled_identity(1, 4.0),
            ],
        )
        .unwrap();
        let c = accumulate_covariance(&p, 0.0, 0.5).unwrap();
        let r = kernel_derivative(
            &c,
            &[0.1],
            &MultiIndex::zero(1),
            Some(TimeDerivative { path: &p, t: 0.5 }),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
