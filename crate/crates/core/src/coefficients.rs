//! Piecewise-constant symmetric coefficient paths a(t) and ensembles a(ω, t).

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::report::{Check, VerificationReport};
use crate::wiener::WienerEnsemble;

/// Spectral bounds `0 < kappa <= k_up`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityBand {
    kappa: f64,
    k_up: f64,
}

impl EllipticityBand {
    pub fn new(kappa: f64, k_up: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa <= k_up && k_up.is_finite()) {
            return Err(Error::InvalidBand { kappa, k_up });
        }
        Ok(Self { kappa, k_up })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn k_up(&self) -> f64 {
        self.k_up
    }

    /// Slack used when comparing computed eigenvalues with the band edges.
    pub fn tolerance(&self) -> f64 {
        1e-12 * self.k_up
    }
}

/// Symmetric matrix stored as its lower triangle, row by row.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    lower: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            lower: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    /// Reads the lower triangle of a row-major square matrix; the upper
    /// triangle is ignored.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::mismatch(format!(
                "expected {} matrix entries for dim {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, entries[i * dim + j]);
            }
        }
        Ok(m)
    }

    /// Symmetric part of a dense matrix.
    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let dim = a.nrows();
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, 0.5 * (a[(i, j)] + a[(j, i)]));
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn offset(i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        r * (r + 1) / 2 + c
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[Self::offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.lower[Self::offset(i, j)] = v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn row_major(&self) -> Vec<f64> {
        let d = self.dim;
        (0..d * d).map(|k| self.get(k / d, k % d)).collect()
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &SymMatrix, s: f64) {
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            *a += s * b;
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            lower: self.lower.iter().map(|v| v * s).collect(),
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim == 1 {
            return vec![self.lower[0]];
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.to_dense())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// ξᵀ M ξ
    pub fn quad_form(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * xi[i] * xi[i];
            for j in 0..i {
                s += 2.0 * self.get(i, j) * xi[i] * xi[j];
            }
        }
        s
    }

    /// Σ_ij M_ij N_ij
    pub fn contract(&self, other: &SymMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            s += self.get(i, i) * other.get(i, i);
            for j in 0..i {
                s += 2.0 * self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }
}

/// Piecewise-constant path: value `values[i]` on `[breakpoints[i], breakpoints[i+1])`.
///
/// Outside `[breakpoints[0], breakpoints[n]]` the path extends by its first
/// and last values, so integrals over slightly wider windows stay defined.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientPath {
    dim: usize,
    breakpoints: Vec<f64>,
    values: Vec<SymMatrix>,
    floor: f64,
    ceiling: f64,
}

impl CoefficientPath {
    pub fn new(breakpoints: Vec<f64>, values: Vec<SymMatrix>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid(
                "coefficient path needs at least one interval",
            ));
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::mismatch(format!(
                "{} breakpoints for {} intervals",
                breakpoints.len(),
                values.len()
            )));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1]))
            || breakpoints.iter().any(|b| !b.is_finite())
        {
            return Err(Error::invalid(
                "breakpoints must be finite and strictly increasing",
            ));
        }
        let dim = values[0].dim();
        if dim == 0 || values.iter().any(|v| v.dim() != dim) {
            return Err(Error::mismatch(
                "interval matrices must share a positive dimension",
            ));
        }
        let (mut floor, mut ceiling) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &values {
            let ev = v.eigenvalues();
            floor = floor.min(ev[0]);
            ceiling = ceiling.max(ev[ev.len() - 1]);
        }
        if !(floor > 0.0) {
            return Err(Error::invalid(format!(
                "coefficient matrices must be positive definite (min eigenvalue {floor})"
            )));
        }
        Ok(Self {
            dim,
            breakpoints,
            values,
            floor,
            ceiling,
        })
    }

    pub fn constant(value: SymMatrix, horizon: f64) -> Result<Self> {
        Self::new(vec![0.0, horizon], vec![value])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[SymMatrix] {
        &self.values
    }

    pub fn n_intervals(&self) -> usize {
        self.values.len()
    }

    /// Smallest eigenvalue over all intervals.
    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Largest eigenvalue over all intervals.
    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    pub fn is_constant(&self) -> bool {
        self.values.windows(2).all(|w| w[0] == w[1])
    }

    /// Index of the interval containing `t` (right-continuous).
    pub fn interval_index(&self, t: f64) -> usize {
        let n = self.values.len();
        match self.breakpoints[1..n].partition_point(|&b| b <= t) {
            i if i >= n => n - 1,
            i => i,
        }
    }

    pub fn value_at(&self, t: f64) -> &SymMatrix {
        &self.values[self.interval_index(t)]
    }

    /// True if `t` is an interior breakpoint where the value actually jumps.
    pub fn is_breakpoint(&self, t: f64) -> bool {
        let n = self.values.len();
        (1..n).any(|i| {
            let b = self.breakpoints[i];
            (t - b).abs() <= 1e-12 * b.abs().max(1.0) && self.values[i - 1] != self.values[i]
        })
    }

    /// Exact ∫_ρ^t a(η) dη as a piecewise sum.
    pub fn integral(&self, rho: f64, t: f64) -> SymMatrix {
        let mut acc = SymMatrix::zeros(self.dim);
        for (lo, hi, v) in self.segments(rho, t) {
            acc.add_scaled(v, hi - lo);
        }
        acc
    }

    /// Maximal sub-intervals of `(rho, t)` on which the path is constant.
    pub fn segments(&self, rho: f64, t: f64) -> Vec<(f64, f64, &SymMatrix)> {
        let mut out = Vec::new();
        if !(t > rho) {
            return out;
        }
        let n = self.values.len();
        let mut lo = rho;
        let mut idx = self.interval_index(rho);
        loop {
            let end = if idx + 1 < n {
                self.breakpoints[idx + 1]
            } else {
                f64::INFINITY
            };
            let hi = end.min(t);
            if hi > lo {
                out.push((lo, hi, &self.values[idx]));
            }
            if hi >= t || idx + 1 >= n {
                break;
            }
            lo = hi;
            idx += 1;
        }
        out
    }

    /// Plain-text table: a `# dim` header, one line per interval
    /// (start followed by the row-major matrix), and a final line holding the
    /// end time alone.
    pub fn to_table(&self) -> String {
        let mut s = format!("# dim {}\n", self.dim);
        for (start, v) in self.breakpoints.iter().zip(&self.values) {
            let _ = write!(s, "{start:?}");
            for e in v.row_major() {
                let _ = write!(s, " {e:?}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "{:?}", self.breakpoints[self.breakpoints.len() - 1]);
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut ended = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |m: &str| Error::invalid(format!("path table line {}: {m}", lineno + 1));
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split_whitespace();
                if it.next() == Some("dim") {
                    let d: usize = it
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| bad("malformed dim header"))?;
                    dim = Some(d);
                }
                continue;
            }
            if ended {
                return Err(bad("content after end time"));
            }
            let d = dim.ok_or_else(|| bad("missing '# dim' header"))?;
            let nums: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|_| bad("not a number")))
                .collect::<Result<_>>()?;
            if nums.len() == 1 {
                breakpoints.push(nums[0]);
                ended = true;
            } else if nums.len() == 1 + d * d {
                breakpoints.push(nums[0]);
                values.push(SymMatrix::from_row_major(d, &nums[1..])?);
            } else {
                return Err(bad(&format!(
                    "expected 1 or {} numbers, got {}",
                    1 + d * d,
                    nums.len()
                )));
            }
        }
        if !ended {
            return Err(Error::invalid("path table has no end-time line"));
        }
        Self::new(breakpoints, values)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    Constant,
    PiecewiseRandom,
    SinusoidClipped,
}

/// Samples a path on `n_intervals` equal intervals of `[0, horizon]`.
///
/// `Constant` is the mid-band multiple of the identity and ignores the seed.
/// `PiecewiseRandom` conjugates uniform band eigenvalues by a random
/// orthogonal matrix per interval. `SinusoidClipped` oscillates each
/// eigenvalue past the band edges and clips, with a slowly rotating frame.
pub fn sample_path(
    band: &EllipticityBand,
    dim: usize,
    n_intervals: usize,
    kind: PathKind,
    seed: u64,
    horizon: f64,
) -> Result<CoefficientPath> {
    if dim == 0 || n_intervals == 0 {
        return Err(Error::invalid("dim and n_intervals must be at least 1"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    let (lo, hi) = (band.kappa(), band.k_up());
    let breakpoints: Vec<f64> = (0..=n_intervals)
        .map(|i| horizon * i as f64 / n_intervals as f64)
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let values: Vec<SymMatrix> = match kind {
        PathKind::Constant => vec![SymMatrix::scaled_identity(dim, 0.5 * (lo + hi)); n_intervals],
        PathKind::PiecewiseRandom => (0..n_intervals)
            .map(|_| {
                let eig: Vec<f64> = (0..dim).map(|_| rng.gen_range(lo..=hi)).collect();
                let q = random_orthogonal(dim, &mut rng);
                conjugate(&q, &eig, lo, hi)
            })
            .collect(),
        PathKind::SinusoidClipped => {
            let q0 = random_orthogonal(dim, &mut rng);
            let phases: Vec<f64> = (0..dim)
                .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
                .collect();
            let freq = rng.gen_range(1.0..3.0) / horizon;
            let (mid, amp) = (0.5 * (lo + hi), 0.75 * (hi - lo));
            (0..n_intervals)
                .map(|i| {
                    let tm = 0.5 * (breakpoints[i] + breakpoints[i + 1]);
                    let arg = std::f64::consts::TAU * freq * tm;
                    let eig: Vec<f64> = phases
                        .iter()
                        .map(|ph| (mid + amp * (arg + ph).sin()).clamp(lo, hi))
                        .collect();
                    let q = if dim >= 2 {
                        &q0 * plane_rotation(dim, 0.5 * arg)
                    } else {
                        q0.clone()
                    };
                    conjugate(&q, &eig, lo, hi)
                })
                .collect()
        }
    };
    CoefficientPath::new(breakpoints, values)
}

fn random_orthogonal(dim: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn plane_rotation(dim: usize, theta: f64) -> DMatrix<f64> {
    let mut r = DMatrix::identity(dim, dim);
    let (s, c) = theta.sin_cos();
    r[(0, 0)] = c;
    r[(0, 1)] = -s;
    r[(1, 0)] = s;
    r[(1, 1)] = c;
    r
}

/// Q diag(eig) Qᵀ, with eigenvalues re-clamped after rounding.
fn conjugate(q: &DMatrix<f64>, eig: &[f64], lo: f64, hi: f64) -> SymMatrix {
    if q.nrows() == 1 {
        return SymMatrix::scaled_identity(1, eig[0]);
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(eig));
    let m = SymMatrix::from_dense(&(q * d * q.transpose()));
    let ev = m.eigenvalues();
    if ev[0] >= lo && ev[ev.len() - 1] <= hi {
        return m;
    }
    // Rounding pushed an eigenvalue past a band edge; shrink towards the
    // band midpoint by the excess.
    let mid = 0.5 * (lo + hi);
    let excess = (lo - ev[0]).max(ev[ev.len() - 1] - hi).max(0.0);
    let half = (0.5 * (hi - lo)).max(f64::MIN_POSITIVE);
    let s = (1.0 - 2.0 * excess / half).clamp(0.0, 1.0);
    let mut out = SymMatrix::scaled_identity(m.dim(), mid * (1.0 - s));
    out.add_scaled(&m, s);
    out
}

/// Pass iff every interval's eigenvalues lie in the band (up to
/// `band.tolerance()`); the worst interval is recorded.
pub fn validate_ellipticity(path: &CoefficientPath, band: &EllipticityBand) -> VerificationReport {
    let mut worst = 0.0f64;
    let mut worst_idx = None;
    let (mut min_ev, mut max_ev) = (f64::INFINITY, f64::NEG_INFINITY);
    for (i, v) in path.values().iter().enumerate() {
        let ev = v.eigenvalues();
        let (lo, hi) = (ev[0], ev[ev.len() - 1]);
        min_ev = min_ev.min(lo);
        max_ev = max_ev.max(hi);
        let violation = (band.kappa() - lo).max(hi - band.k_up()).max(0.0);
        if violation > worst {
            worst = violation;
            worst_idx = Some(i);
        }
    }
    let mut report = VerificationReport::new("ellipticity", worst, Check::AtMost(band.tolerance()))
        .with_bound("kappa |xi|^2 <= a(t) xi.xi <= K |xi|^2 on every interval")
        .with_detail("min_eigenvalue", min_ev)
        .with_detail("max_eigenvalue", max_ev)
        .with_detail("kappa", band.kappa())
        .with_detail("K", band.k_up());
    if let Some(i) = worst_idx {
        report = report.with_detail("offending_interval", i as f64);
    }
    report
}

/// Coefficient values for every ω-sample.
#[derive(Clone, Debug)]
pub enum EnsemblePaths {
    /// One deterministic path shared by all `members` samples.
    Shared {
        path: Arc<CoefficientPath>,
        members: usize,
    },
    PerPath(Arc<Vec<CoefficientPath>>),
}

#[derive(Clone, Debug)]
pub struct CoefficientEnsemble {
    paths: EnsemblePaths,
    /// Each interval value is a function of Wiener increments strictly
    /// before the interval.
    adapted: bool,
}

impl CoefficientEnsemble {
    /// A deterministic path is trivially predictable.
    pub fn deterministic(path: CoefficientPath, members: usize) -> Self {
        Self {
            paths: EnsemblePaths::Shared {
                path: Arc::new(path),
                members,
            },
            adapted: true,
        }
    }

    /// Paths must share breakpoints. `adapted` is the caller's assertion;
    /// only [`predictable_ensemble`] and [`CoefficientEnsemble::deterministic`]
    /// establish it by construction.
    pub fn from_paths(paths: Vec<CoefficientPath>, adapted: bool) -> Result<Self> {
        let first = paths
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one path"))?;
        if paths
            .iter()
            .any(|p| p.breakpoints() != first.breakpoints() || p.dim() != first.dim())
        {
            return Err(Error::mismatch(
                "ensemble paths must share breakpoints and dimension",
            ));
        }
        Ok(Self {
            paths: EnsemblePaths::PerPath(Arc::new(paths)),
            adapted,
        })
    }

    pub fn len(&self) -> usize {
        match &self.paths {
            EnsemblePaths::Shared { members, .. } => *members,
            EnsemblePaths::PerPath(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn adaptedness_tag(&self) -> bool {
        self.adapted
    }

    pub fn path(&self, i: usize) -> &CoefficientPath {
        match &self.paths {
            EnsemblePaths::Shared { path, .. } => path,
            EnsemblePaths::PerPath(p) => &p[i],
        }
    }

    /// The shared path if every ω-sample carries the same coefficients.
    pub fn deterministic_path(&self) -> Option<&CoefficientPath> {
        match &self.paths {
            EnsemblePaths::Shared { path, .. } => Some(path),
            EnsemblePaths::PerPath(p) => {
                let first = &p[0];
                p.iter().all(|q| q == first).then_some(first)
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.path(0).dim()
    }

    /// Band covering every member.
    pub fn envelope(&self) -> (f64, f64) {
        match &self.paths {
            EnsemblePaths::Shared { path, .. } => (path.floor(), path.ceiling()),
            EnsemblePaths::PerPath(p) => p.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), q| {
                (lo.min(q.floor()), hi.max(q.ceiling()))
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PredictableRule {
    /// Every path equals this matrix.
    Constant(SymMatrix),
    /// Value on interval i is κI if W¹(t_{i+lookahead}) ≥ 0 and KI otherwise.
    /// Only `lookahead = 0` is predictable; positive values are rejected.
    ThresholdOnW { lookahead: usize },
}

/// Coefficients on the Wiener time grid whose value on `[t_i, t_{i+1})` is
/// built from increments with index `< i` only.
pub fn predictable_ensemble(
    wiener: &WienerEnsemble,
    band: &EllipticityBand,
    dim: usize,
    rule: &PredictableRule,
) -> Result<CoefficientEnsemble> {
    if wiener.members() == 0 || wiener.steps() == 0 {
        return Err(Error::invalid("Wiener ensemble is empty"));
    }
    let nt = wiener.steps();
    let breakpoints: Vec<f64> = (0..=nt).map(|i| wiener.time(i)).collect();
    match rule {
        PredictableRule::Constant(value) => {
            if value.dim() != dim {
                return Err(Error::mismatch(
                    "constant rule matrix has the wrong dimension",
                ));
            }
            let path = CoefficientPath::new(breakpoints, vec![value.clone(); nt])?;
            Ok(CoefficientEnsemble::deterministic(path, wiener.members()))
        }
        PredictableRule::ThresholdOnW { lookahead } => {
            if *lookahead > 0 {
                return Err(Error::NotPredictable(format!(
                    "threshold rule reads W(t_(i+{lookahead})) on interval i, which uses increments at or after index i"
                )));
            }
            let low = SymMatrix::scaled_identity(dim, band.kappa());
            let high = SymMatrix::scaled_identity(dim, band.k_up());
            let paths = crate::parallel::ordered_map(wiener.members(), |m| {
                let mut w = 0.0;
                let values = (0..nt)
                    .map(|i| {
                        // w = W(t_i) = Σ_{j<i} ΔW_j
                        let v = if w >= 0.0 { low.clone() } else { high.clone() };
                        w += wiener.increment(m, i, 0);
                        v
                    })
                    .collect();
                CoefficientPath::new(breakpoints.clone(), values)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            CoefficientEnsemble::from_paths(paths, true)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band(k: f64, kk: f64) -> EllipticityBand {
        EllipticityBand::new(k, kk).unwrap()
    }

    #[test]
    fn unit_band_constant_is_identity() {
        let p = sample_path(&band(1.0, 1.0), 1, 3, PathKind::Constant, 0, 1.0).unwrap();
        assert!(p.values().iter().all(|v| *v == SymMatrix::identity(1)));
    }

    #[test]
    fn piecewise_random_is_seed_deterministic() {
        let b = band(1.0, 4.0);
        let p1 = sample_path(&b, 1, 2, PathKind::PiecewiseRandom, 7, 1.0).unwrap();
        let p2 = sample_path(&b, 1, 2, PathKind::PiecewiseRandom, 7, 1.0).unwrap();
        assert_eq!(p1, p2);
        for v in p1.values() {
            let s = v.get(0, 0);
            assert!((1.0..=4.0).contains(&s));
        }
    }

    #[test]
    fn sinusoid_eigenvalues_in_band() {
        let b = band(0.5, 2.0);
        let p = sample_path(&b, 2, 40, PathKind::SinusoidClipped, 3, 1.0).unwrap();
        for v in p.values() {
            let eig = SymmetricEigen::new(v.to_dense()).eigenvalues;
            for e in eig.iter() {
                assert!(
                    *e >= 0.5 - b.tolerance() && *e <= 2.0 + b.tolerance(),
                    "{e}"
                );
            }
        }
        assert!(validate_ellipticity(&p, &b).passed());
    }

    #[test]
    fn inverted_band_rejected() {
        assert!(matches!(
            EllipticityBand::new(2.0, 1.0),
            Err(Error::InvalidBand { .. })
        ));
        assert!(EllipticityBand::new(0.0, 1.0).is_err());
    }

    #[test]
    fn validation_names_offending_interval() {
        let p = CoefficientPath::new(
            vec![0.0, 0.5, 1.0],
            vec![
                SymMatrix::scaled_identity(1, 2.0),
                SymMatrix::scaled_identity(1, 5.0),
            ],
        )
        .unwrap();
        let r = validate_ellipticity(&p, &band(1.0, 4.0));
        assert!(!r.passed());
        assert_eq!(r.detail("offending_interval"), Some(1.0));
    }

    #[test]
    fn rotated_diagonal_passes() {
        let th: f64 = 0.7;
        let (s, c) = th.sin_cos();
        let q = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let m = conjugate(&q, &[1.0, 3.0], 1.0, 3.0);
        let p = CoefficientPath::constant(m, 1.0).unwrap();
        assert!(validate_ellipticity(&p, &band(1.0, 3.0)).passed());
    }

    #[test]
    fn integral_is_exact_piecewise_sum() {
        let p = CoefficientPath::new(
            vec![0.0, 0.5, 1.0],
            vec![
                SymMatrix::scaled_identity(1, 2.0),
                SymMatrix::scaled_identity(1, 4.0),
            ],
        )
        .unwrap();
        assert_eq!(p.integral(0.0, 1.0).get(0, 0), 3.0);
        assert!((p.integral(0.25, 0.75).get(0, 0) - 1.5).abs() < 1e-15);
        assert!(p.is_breakpoint(0.5));
        assert!(!p.is_breakpoint(0.3));
    }

    #[test]
    fn table_round_trip() {
        let p = sample_path(&band(0.5, 2.0), 2, 5, PathKind::PiecewiseRandom, 11, 2.0).unwrap();
        let q = CoefficientPath::from_table(&p.to_table()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn lookahead_rule_rejected() {
        let w = WienerEnsemble::generate(4, 1, 8, 1.0, 1).unwrap();
        let err = predictable_ensemble(
            &w,
            &band(1.0, 2.0),
            1,
            &PredictableRule::ThresholdOnW { lookahead: 1 },
        );
        assert!(matches!(err, Err(Error::NotPredictable(_))));
    }

    #[test]
    fn constant_rule_shares_one_matrix() {
        let w = WienerEnsemble::generate(4, 1, 8, 1.0, 1).unwrap();
        let m = SymMatrix::scaled_identity(1, 1.5);
        let e = predictable_ensemble(
            &w,
            &band(1.0, 2.0),
            1,
            &PredictableRule::Constant(m.clone()),
        )
        .unwrap();
        assert!(e.adaptedness_tag());
        assert!(e.deterministic_path().is_some());
        assert!((0..4).all(|i| e.path(i).values().iter().all(|v| *v == m)));
    }

    #[test]
    fn threshold_rule_ignores_future_noise() {
        let w = WienerEnsemble::generate(16, 1, 32, 1.0, 5).unwrap();
        let b = band(1.0, 3.0);
        let rule = PredictableRule::ThresholdOnW { lookahead: 0 };
        let full = predictable_ensemble(&w, &b, 1, &rule).unwrap();
        for cut in [0, 5, 17, 31] {
            let trunc = predictable_ensemble(&w.with_future_zeroed(cut), &b, 1, &rule).unwrap();
            for m in 0..16 {
                assert_eq!(
                    full.path(m).values()[..=cut],
                    trunc.path(m).values()[..=cut]
                );
            }
        }
    }
}
