//! Solution operators on the periodic grid:
//!
//! * `det_convolve`: u(t) = ∫_0^t p(t, ρ) * f(ρ) dρ, stepped exactly in
//!   Fourier space with the symbol exp(−(A ξ, ξ)) and left-point data.
//! * `stoch_convolve`: u(t) = Σ_k ∫_0^t p(t, ρ) * g^k(ρ) dw^k_ρ, Itô
//!   left-point rule, deterministic coefficients only.
//! * `euler_maruyama_oracle`: independent finite-difference time stepping.
//! * `split_solve`: u = u¹ + u² for predictable random coefficients.
//! * `weak_residual`: the discrete distributional identity.
//!
//! Every solution starts from u(0) = 0. Per-path work touches only that
//! path's data and noise, so ensembles are evaluated lazily and in parallel.

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::coefficients::{CoefficientEnsemble, CoefficientPath, SymMatrix};
use crate::error::{Error, Result};
use crate::field::{DeterministicField, RandomField};
use crate::grid::SpaceTimeGrid;
use crate::parallel::ordered_fold;
use crate::report::{Check, VerificationReport};
use crate::spectral::{hessian_pairs, Spectral};
use crate::wiener::WienerEnsemble;

/// Explicit-scheme stability limit on K·Δt/h².
pub const CFL_LIMIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    DetConvolve,
    StochConvolve,
    EulerMaruyama,
    Split,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::DetConvolve => "det_convolve",
            Provenance::StochConvolve => "stoch_convolve",
            Provenance::EulerMaruyama => "euler_maruyama",
            Provenance::Split => "split",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmScheme {
    Explicit,
    /// Implicit diffusion, explicit forcing and noise.
    SemiImplicit,
}

/// u, its gradient (d channels) and its Hessian (lower triangle,
/// d(d+1)/2 channels in `hessian_pairs` order) for one ω.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionMember {
    pub u: DeterministicField,
    pub u_x: DeterministicField,
    pub u_xx: DeterministicField,
}

impl SolutionMember {
    pub fn zeros(grid: SpaceTimeGrid) -> Self {
        let d = grid.dim();
        Self {
            u: DeterministicField::zeros(grid, 1),
            u_x: DeterministicField::zeros(grid, d),
            u_xx: DeterministicField::zeros(grid, d * (d + 1) / 2),
        }
    }

    fn add(&self, other: &Self) -> Self {
        Self {
            u: self.u.axpy(1.0, &other.u).expect("same grid"),
            u_x: self.u_x.axpy(1.0, &other.u_x).expect("same grid"),
            u_xx: self.u_xx.axpy(1.0, &other.u_xx).expect("same grid"),
        }
    }

    /// Frobenius norm of the Hessian at every node, as a one-channel field.
    pub fn hessian_norm(&self) -> DeterministicField {
        frobenius(&self.u_xx)
    }
}

/// Frobenius norm of a lower-triangle Hessian field; off-diagonal entries
/// count twice.
pub fn frobenius(u_xx: &DeterministicField) -> DeterministicField {
    let grid = *u_xx.grid();
    let pairs = hessian_pairs(grid.dim());
    let n = grid.spatial_len();
    let mut out = DeterministicField::zeros(grid, 1);
    for t in 0..grid.slices() {
        let mut acc = vec![0.0; n];
        for (k, (i, j)) in pairs.iter().enumerate() {
            let w = if i == j { 1.0 } else { 2.0 };
            for (a, v) in acc.iter_mut().zip(u_xx.slice(t, k)) {
                *a += w * v * v;
            }
        }
        for (o, a) in out.slice_mut(t, 0).iter_mut().zip(acc) {
            *o = a.sqrt();
        }
    }
    out
}

type MemberFn = Arc<dyn Fn(usize) -> SolutionMember + Send + Sync>;

#[derive(Clone)]
enum BundleSource {
    Shared(Arc<SolutionMember>),
    Stored(Arc<Vec<SolutionMember>>),
    Generated(MemberFn),
}

/// Solution ensemble with derivatives. `spectral` records whether
/// derivatives are exact Fourier multipliers or central differences.
#[derive(Clone)]
pub struct SolutionBundle {
    grid: SpaceTimeGrid,
    members: usize,
    provenance: Provenance,
    spectral: bool,
    source: BundleSource,
}

impl std::fmt::Debug for SolutionBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolutionBundle")
            .field("grid", &self.grid)
            .field("members", &self.members)
            .field("provenance", &self.provenance)
            .field("spectral", &self.spectral)
            .finish()
    }
}

impl SolutionBundle {
    fn generated(
        grid: SpaceTimeGrid,
        members: usize,
        provenance: Provenance,
        spectral: bool,
        f: MemberFn,
    ) -> Self {
        Self {
            grid,
            members,
            provenance,
            spectral,
            source: BundleSource::Generated(f),
        }
    }

    fn shared(
        member: SolutionMember,
        members: usize,
        provenance: Provenance,
        spectral: bool,
    ) -> Self {
        Self {
            grid: *member.u.grid(),
            members,
            provenance,
            spectral,
            source: BundleSource::Shared(Arc::new(member)),
        }
    }

    /// Bundle from explicit members, e.g. a perturbed copy in tests.
    pub fn from_members(
        members: Vec<SolutionMember>,
        provenance: Provenance,
        spectral: bool,
    ) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("bundle needs at least one member"))?;
        let grid = *first.u.grid();
        if members.iter().any(|m| *m.u.grid() != grid) {
            return Err(Error::mismatch("bundle members must share a grid"));
        }
        Ok(Self {
            grid,
            members: members.len(),
            provenance,
            spectral,
            source: BundleSource::Stored(Arc::new(members)),
        })
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn spectral_derivatives(&self) -> bool {
        self.spectral
    }

    pub fn is_shared(&self) -> bool {
        matches!(self.source, BundleSource::Shared(_))
    }

    pub fn member(&self, i: usize) -> Cow<'_, SolutionMember> {
        assert!(
            i < self.members,
            "member {i} out of range ({})",
            self.members
        );
        match &self.source {
            BundleSource::Shared(m) => Cow::Borrowed(m),
            BundleSource::Stored(v) => Cow::Borrowed(&v[i]),
            BundleSource::Generated(f) => Cow::Owned(f(i)),
        }
    }

    /// Evaluates and keeps every member.
    pub fn materialize(&self) -> Self {
        match &self.source {
            BundleSource::Generated(_) => {
                let v = crate::parallel::ordered_map(self.members, |i| self.member(i).into_owned());
                Self {
                    source: BundleSource::Stored(Arc::new(v)),
                    ..self.clone()
                }
            }
            _ => self.clone(),
        }
    }

    fn project(&self, pick: fn(&SolutionMember) -> &DeterministicField) -> RandomField {
        match &self.source {
            BundleSource::Shared(m) => RandomField::shared(pick(m).clone(), self.members),
            _ => {
                let this = self.clone();
                let probe = pick(&self.member(0)).channels();
                RandomField::generated(self.grid, probe, self.members, None, move |i| {
                    pick(&this.member(i)).clone()
                })
            }
        }
    }

    pub fn u(&self) -> RandomField {
        self.project(|m| &m.u)
    }

    pub fn u_x(&self) -> RandomField {
        self.project(|m| &m.u_x)
    }

    pub fn u_xx(&self) -> RandomField {
        self.project(|m| &m.u_xx)
    }

    /// Copy with `f` applied to every member (lazily).
    pub fn map(
        &self,
        f: impl Fn(usize, &SolutionMember) -> SolutionMember + Send + Sync + 'static,
    ) -> Self {
        let this = self.clone();
        Self::generated(
            self.grid,
            self.members,
            self.provenance,
            self.spectral,
            Arc::new(move |i| f(i, &this.member(i))),
        )
    }
}

/// Per-mode propagators over one step [t0, t1]:
/// `decay` = exp(−(A_{t1 t0} ξ, ξ)) and `forcing` = ∫_{t0}^{t1} exp(−(A_{t1 s} ξ, ξ)) ds.
struct StepKernels {
    decay: Vec<f64>,
    forcing: Vec<f64>,
}

/// −expm1(−λτ)/λ, continuous at λ = 0.
fn phi1(lambda: f64, tau: f64) -> f64 {
    if lambda * tau < 1e-12 {
        tau * (1.0 - 0.5 * lambda * tau)
    } else {
        -(-lambda * tau).exp_m1() / lambda
    }
}

fn step_kernels(spec: &Spectral, path: &CoefficientPath, t0: f64, t1: f64) -> StepKernels {
    let segments = path.segments(t0, t1);
    let n = spec.len();
    let mut decay = vec![1.0; n];
    let mut forcing = vec![0.0; n];
    // Walk segments backwards from t1 so `decay` is the propagator from the
    // segment's end to t1.
    for (lo, hi, a) in segments.iter().rev() {
        let tau = hi - lo;
        let lambda = spec.quadratic_symbol(a);
        for k in 0..n {
            forcing[k] += decay[k] * phi1(lambda[k], tau);
            decay[k] *= (-lambda[k] * tau).exp();
        }
    }
    StepKernels { decay, forcing }
}

/// Memoizes step kernels by the (duration, matrix) content of the step.
struct StepCache<'a> {
    spec: &'a Spectral,
    map: HashMap<Vec<u64>, Arc<StepKernels>>,
}

impl<'a> StepCache<'a> {
    fn new(spec: &'a Spectral) -> Self {
        Self {
            spec,
            map: HashMap::new(),
        }
    }

    fn get(&mut self, path: &CoefficientPath, t0: f64, t1: f64) -> Arc<StepKernels> {
        let mut key = Vec::new();
        for (lo, hi, a) in path.segments(t0, t1) {
            key.push((hi - lo).to_bits());
            key.extend(a.row_major().iter().map(|v| v.to_bits()));
        }
        self.map
            .entry(key)
            .or_insert_with(|| Arc::new(step_kernels(self.spec, path, t0, t1)))
            .clone()
    }
}

/// Fourier multipliers of the outputs u, ∂_i u, ∂_i∂_j u, in channel order.
struct OutputMultipliers {
    mults: Vec<Vec<Complex64>>,
    dim: usize,
}

impl OutputMultipliers {
    fn new(spec: &Spectral) -> Self {
        let d = spec.dim();
        let mut mults = vec![vec![Complex64::new(1.0, 0.0); spec.len()]];
        for a in 0..d {
            mults.push(spec.first_derivative(a));
        }
        for (i, j) in hessian_pairs(d) {
            mults.push(
                spec.second_derivative(i, j)
                    .into_iter()
                    .map(|v| Complex64::new(v, 0.0))
                    .collect(),
            );
        }
        Self { mults, dim: d }
    }

    /// Writes slice `t` of every output from the spectrum `uhat`, two real
    /// outputs per inverse transform.
    fn emit(&self, spec: &Spectral, uhat: &[Complex64], t: usize, out: &mut SolutionMember) {
        let n = spec.len();
        let total = self.mults.len();
        let mut buf = vec![Complex64::default(); n];
        let mut o = 0;
        while o < total {
            let pair = o + 1 < total;
            for k in 0..n {
                let mut m = self.mults[o][k];
                if pair {
                    m += Complex64::new(0.0, 1.0) * self.mults[o + 1][k];
                }
                buf[k] = m * uhat[k];
            }
            spec.inverse(&mut buf);
            self.store(o, t, out, buf.iter().map(|v| v.re));
            if pair {
                self.store(o + 1, t, out, buf.iter().map(|v| v.im));
            }
            o += 2;
        }
    }

    fn store(
        &self,
        o: usize,
        t: usize,
        out: &mut SolutionMember,
        values: impl Iterator<Item = f64>,
    ) {
        let dst = if o == 0 {
            out.u.slice_mut(t, 0)
        } else if o <= self.dim {
            out.u_x.slice_mut(t, o - 1)
        } else {
            out.u_xx.slice_mut(t, o - 1 - self.dim)
        };
        for (d, v) in dst.iter_mut().zip(values) {
            *d = v;
        }
    }
}

/// Shared, immutable per-grid spectral machinery.
#[derive(Clone)]
struct SpectralContext {
    spec: Arc<Spectral>,
    outputs: Arc<OutputMultipliers>,
}

impl SpectralContext {
    fn new(grid: &SpaceTimeGrid) -> Self {
        let spec = Spectral::new(grid);
        let outputs = OutputMultipliers::new(&spec);
        Self {
            spec: Arc::new(spec),
            outputs: Arc::new(outputs),
        }
    }
}

/// Steps û_{n+1} = E_n (û_n + Ŝ_n) + W_n F̂_n on the grid, where F_n is the
/// deterministic forcing slice and S_n the noise slice Σ_k g^k(t_n) ΔW^k_n.
fn propagate(
    ctx: &SpectralContext,
    grid: &SpaceTimeGrid,
    kernels: &mut dyn FnMut(usize) -> Arc<StepKernels>,
    forcing: Option<&DeterministicField>,
    noise: &mut dyn FnMut(usize, &mut [f64]) -> bool,
) -> SolutionMember {
    let spec = &ctx.spec;
    let n = grid.spatial_len();
    let mut out = SolutionMember::zeros(*grid);
    let mut uhat = vec![Complex64::default(); n];
    let mut real = vec![0.0; n];
    let mut buf = vec![Complex64::default(); n];
    let mut nonzero = false;
    for step in 0..grid.nt() {
        let k = kernels(step);
        if noise(step, &mut real) {
            for (b, r) in buf.iter_mut().zip(&real) {
                *b = Complex64::new(*r, 0.0);
            }
            spec.forward(&mut buf);
            for (u, b) in uhat.iter_mut().zip(&buf) {
                *u += b;
            }
            nonzero = true;
        }
        for (u, e) in uhat.iter_mut().zip(&k.decay) {
            *u *= e;
        }
        if let Some(f) = forcing {
            let slice = f.slice(step, 0);
            if slice.iter().any(|v| *v != 0.0) {
                for (b, r) in buf.iter_mut().zip(slice) {
                    *b = Complex64::new(*r, 0.0);
                }
                spec.forward(&mut buf);
                for ((u, b), w) in uhat.iter_mut().zip(&buf).zip(&k.forcing) {
                    *u += b * w;
                }
                nonzero = true;
            }
        }
        if nonzero {
            ctx.outputs.emit(spec, &uhat, step + 1, &mut out);
        }
    }
    out
}

fn check_grid(expected: &SpaceTimeGrid, got: &SpaceTimeGrid, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::mismatch(format!("{what} lives on a different grid")));
    }
    Ok(())
}

/// Free data must vanish outside [−L/2, L/2]^d unless flagged periodic.
/// Checks the first and last members.
fn check_support(f: &RandomField, what: &str) -> Result<()> {
    if f.is_periodic() || f.members() == 0 {
        return Ok(());
    }
    for i in [0, f.members() - 1] {
        let m = f.member(i);
        let outside = m.mass_outside_support_box();
        if outside > 1e-12 * m.max_abs().max(1.0) {
            return Err(Error::Domain(format!(
                "{what} member {i} is {outside:e} outside [-L/2, L/2]^d; data must be supported in the central sub-box"
            )));
        }
    }
    Ok(())
}

fn check_paths(paths: &CoefficientEnsemble, grid: &SpaceTimeGrid, members: usize) -> Result<()> {
    if paths.len() != members {
        return Err(Error::mismatch(format!(
            "coefficient ensemble has {} paths but data have {members} members",
            paths.len()
        )));
    }
    if paths.dim() != grid.dim() {
        return Err(Error::mismatch(
            "coefficient dimension differs from grid dimension",
        ));
    }
    Ok(())
}

fn check_wiener(
    wiener: &WienerEnsemble,
    grid: &SpaceTimeGrid,
    members: usize,
    channels: usize,
) -> Result<()> {
    if wiener.members() != members {
        return Err(Error::mismatch(format!(
            "Wiener ensemble has {} paths, expected {members}",
            wiener.members()
        )));
    }
    if wiener.steps() != grid.nt()
        || (wiener.horizon() - grid.horizon()).abs() > 1e-12 * grid.horizon()
    {
        return Err(Error::mismatch(
            "Wiener time grid differs from the solver grid",
        ));
    }
    if channels > wiener.channels() {
        return Err(Error::mismatch(format!(
            "data have {channels} channels but only {} Wiener channels exist",
            wiener.channels()
        )));
    }
    Ok(())
}

/// Noise slice Σ_k g^k(t_n) ΔW^k_n; false if it vanishes.
fn noise_slice(
    g: &DeterministicField,
    wiener: &WienerEnsemble,
    m: usize,
    step: usize,
    out: &mut [f64],
) -> bool {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut any = false;
    for (k, dw) in wiener
        .step_increments(m, step)
        .iter()
        .enumerate()
        .take(g.channels())
    {
        let s = g.slice(step, k);
        if *dw == 0.0 || s.iter().all(|v| *v == 0.0) {
            continue;
        }
        any = true;
        for (o, v) in out.iter_mut().zip(s) {
            *o += v * dw;
        }
    }
    any
}

fn kernels_for(
    ctx: &SpectralContext,
    grid: &SpaceTimeGrid,
    path: &CoefficientPath,
) -> Vec<Arc<StepKernels>> {
    let mut cache = StepCache::new(&ctx.spec);
    (0..grid.nt())
        .map(|s| cache.get(path, grid.time(s), grid.time(s + 1)))
        .collect()
}

/// exp(−(A ξ, ξ)) over each step of `grid`, per Fourier mode.
pub(crate) fn step_decays(
    spec: &Spectral,
    grid: &SpaceTimeGrid,
    path: &CoefficientPath,
) -> Vec<Arc<Vec<f64>>> {
    let mut cache: HashMap<Vec<u64>, Arc<Vec<f64>>> = HashMap::new();
    (0..grid.nt())
        .map(|s| {
            let (t0, t1) = (grid.time(s), grid.time(s + 1));
            let mut key = Vec::new();
            for (lo, hi, a) in path.segments(t0, t1) {
                key.push((hi - lo).to_bits());
                key.extend(a.row_major().iter().map(|v| v.to_bits()));
            }
            cache
                .entry(key)
                .or_insert_with(|| Arc::new(step_kernels(spec, path, t0, t1).decay))
                .clone()
        })
        .collect()
}

fn det_member(
    ctx: &SpectralContext,
    grid: &SpaceTimeGrid,
    path: &CoefficientPath,
    f: &DeterministicField,
) -> SolutionMember {
    let mut cache = StepCache::new(&ctx.spec);
    propagate(
        ctx,
        grid,
        &mut |s| cache.get(path, grid.time(s), grid.time(s + 1)),
        Some(f),
        &mut |_, _| false,
    )
}

/// Deterministic convolution per ω: exact Fourier propagation with
/// left-point forcing.
pub fn det_convolve(paths: &CoefficientEnsemble, f: &RandomField) -> Result<SolutionBundle> {
    let grid = *f.grid();
    check_paths(paths, &grid, f.members())?;
    if f.channels() != 1 {
        return Err(Error::mismatch(
            "deterministic forcing must have one channel",
        ));
    }
    check_support(f, "forcing f")?;
    let ctx = SpectralContext::new(&grid);
    if let (Some(path), Some(field)) = (paths.deterministic_path(), f.as_shared()) {
        let member = det_member(&ctx, &grid, path, field);
        return Ok(SolutionBundle::shared(
            member,
            f.members(),
            Provenance::DetConvolve,
            true,
        ));
    }
    let (paths, f) = (paths.clone(), f.clone());
    Ok(SolutionBundle::generated(
        grid,
        f.members(),
        Provenance::DetConvolve,
        true,
        Arc::new(move |i| det_member(&ctx, &grid, paths.path(i), &f.member(i))),
    ))
}

/// Itô stochastic convolution. The kernel must be non-random: an ensemble
/// whose paths differ across ω is rejected.
pub fn stoch_convolve(
    paths: &CoefficientEnsemble,
    g: &RandomField,
    wiener: &WienerEnsemble,
) -> Result<SolutionBundle> {
    let path = paths.deterministic_path().ok_or_else(|| {
        Error::Measurability(
            "stochastic convolution needs a deterministic kernel; the coefficient paths vary with omega".into(),
        )
    })?;
    let grid = *g.grid();
    if path.dim() != grid.dim() {
        return Err(Error::mismatch(
            "coefficient dimension differs from grid dimension",
        ));
    }
    if paths.len() != g.members() {
        return Err(Error::mismatch(
            "coefficient ensemble and data differ in member count",
        ));
    }
    check_wiener(wiener, &grid, g.members(), g.channels())?;
    check_support(g, "noise coefficient g")?;
    let ctx = SpectralContext::new(&grid);
    let kernels = Arc::new(kernels_for(&ctx, &grid, path));
    let (g, wiener) = (g.clone(), Arc::new(wiener.clone()));
    Ok(SolutionBundle::generated(
        grid,
        g.members(),
        Provenance::StochConvolve,
        true,
        Arc::new(move |m| {
            let gm = g.member(m);
            propagate(
                &ctx,
                &grid,
                &mut |s| kernels[s].clone(),
                None,
                &mut |s, out| noise_slice(&gm, &wiener, m, s, out),
            )
        }),
    ))
}

/// `stoch_convolve` for a single deterministic path shared by all members.
pub fn stoch_convolve_path(
    path: &CoefficientPath,
    g: &RandomField,
    wiener: &WienerEnsemble,
) -> Result<SolutionBundle> {
    stoch_convolve(
        &CoefficientEnsemble::deterministic(path.clone(), g.members()),
        g,
        wiener,
    )
}

/// Central-difference gradient and lower-triangle Hessian of one slice.
pub fn fd_derivatives(
    grid: &SpaceTimeGrid,
    u: &[f64],
    grad: &mut [Vec<f64>],
    hess: &mut [Vec<f64>],
) {
    let (d, nx, n) = (grid.dim(), grid.nx(), grid.spatial_len());
    let h = grid.h();
    let strides: Vec<usize> = (0..d).map(|a| nx.pow((d - 1 - a) as u32)).collect();
    let step = |f: usize, a: usize, up: bool| {
        let s = strides[a];
        let j = (f / s) % nx;
        if up {
            if j + 1 == nx {
                f + s - nx * s
            } else {
                f + s
            }
        } else if j == 0 {
            f + (nx - 1) * s
        } else {
            f - s
        }
    };
    for f in 0..n {
        for a in 0..d {
            grad[a][f] = (u[step(f, a, true)] - u[step(f, a, false)]) / (2.0 * h);
        }
        for (k, (i, j)) in hessian_pairs(d).into_iter().enumerate() {
            hess[k][f] = if i == j {
                (u[step(f, i, true)] - 2.0 * u[f] + u[step(f, i, false)]) / (h * h)
            } else {
                let pp = u[step(step(f, i, true), j, true)];
                let pm = u[step(step(f, i, true), j, false)];
                let mp = u[step(step(f, i, false), j, true)];
                let mm = u[step(step(f, i, false), j, false)];
                (pp - pm - mp + mm) / (4.0 * h * h)
            };
        }
    }
}

fn fd_emit(grid: &SpaceTimeGrid, u: &[f64], t: usize, out: &mut SolutionMember) {
    let d = grid.dim();
    let n = grid.spatial_len();
    let mut grad = vec![vec![0.0; n]; d];
    let mut hess = vec![vec![0.0; n]; d * (d + 1) / 2];
    fd_derivatives(grid, u, &mut grad, &mut hess);
    out.u.slice_mut(t, 0).copy_from_slice(u);
    for (a, gv) in grad.iter().enumerate() {
        out.u_x.slice_mut(t, a).copy_from_slice(gv);
    }
    for (k, hv) in hess.iter().enumerate() {
        out.u_xx.slice_mut(t, k).copy_from_slice(hv);
    }
}

/// Step average (1/Δt) ∫ a over [t0, t1].
fn step_average(path: &CoefficientPath, t0: f64, t1: f64) -> SymMatrix {
    path.integral(t0, t1).scale(1.0 / (t1 - t0))
}

fn em_member(
    grid: &SpaceTimeGrid,
    spec: &Spectral,
    scheme: EmScheme,
    path: &CoefficientPath,
    f: &DeterministicField,
    g: &DeterministicField,
    wiener: &WienerEnsemble,
    m: usize,
) -> SolutionMember {
    let (n, dt, h) = (grid.spatial_len(), grid.dt(), grid.h());
    let d = grid.dim();
    let pairs = hessian_pairs(d);
    let mut out = SolutionMember::zeros(*grid);
    let mut u = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let mut grad = vec![vec![0.0; n]; d];
    let mut hess = vec![vec![0.0; n]; pairs.len()];
    let mut resolvents: HashMap<Vec<u64>, Arc<Vec<f64>>> = HashMap::new();
    let mut buf = vec![Complex64::default(); n];
    for step in 0..grid.nt() {
        let a = step_average(path, grid.time(step), grid.time(step + 1));
        let has_noise = noise_slice(g, wiener, m, step, &mut noise);
        let fs = f.slice(step, 0);
        match scheme {
            EmScheme::Explicit => {
                fd_derivatives(grid, &u, &mut grad, &mut hess);
                for x in 0..n {
                    let mut lu = 0.0;
                    for (k, (i, j)) in pairs.iter().enumerate() {
                        let w = if i == j { 1.0 } else { 2.0 };
                        lu += w * a.get(*i, *j) * hess[k][x];
                    }
                    u[x] += dt * (lu + fs[x]) + if has_noise { noise[x] } else { 0.0 };
                }
            }
            EmScheme::SemiImplicit => {
                let key: Vec<u64> = a.row_major().iter().map(|v| v.to_bits()).collect();
                let res = resolvents
                    .entry(key)
                    .or_insert_with(|| {
                        Arc::new(
                            spec.fd_symbol(&a, h)
                                .iter()
                                .map(|s| 1.0 / (1.0 + dt * s))
                                .collect(),
                        )
                    })
                    .clone();
                for x in 0..n {
                    let rhs = u[x] + dt * fs[x] + if has_noise { noise[x] } else { 0.0 };
                    buf[x] = Complex64::new(rhs, 0.0);
                }
                spec.forward(&mut buf);
                for (b, r) in buf.iter_mut().zip(res.iter()) {
                    *b *= r;
                }
                spec.inverse(&mut buf);
                for (x, b) in u.iter_mut().zip(&buf) {
                    *x = b.re;
                }
            }
        }
        fd_emit(grid, &u, step + 1, &mut out);
    }
    out
}

/// Finite-difference Euler–Maruyama reference solver. Coefficients may vary
/// with ω; each step uses the step average of the path, which is
/// predictable when the path is.
pub fn euler_maruyama_oracle(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    g: &RandomField,
    wiener: &WienerEnsemble,
    scheme: EmScheme,
) -> Result<SolutionBundle> {
    let grid = *f.grid();
    check_grid(&grid, g.grid(), "noise coefficient g")?;
    check_paths(paths, &grid, f.members())?;
    if g.members() != f.members() || f.channels() != 1 {
        return Err(Error::mismatch(
            "f must have one channel and f, g the same member count",
        ));
    }
    check_wiener(wiener, &grid, f.members(), g.channels())?;
    if scheme == EmScheme::Explicit {
        let (_, k_up) = paths.envelope();
        let ratio = k_up * grid.dt() / (grid.h() * grid.h());
        if ratio > CFL_LIMIT {
            return Err(Error::Cfl {
                ratio,
                limit: CFL_LIMIT,
            });
        }
    }
    let spec = Arc::new(Spectral::new(&grid));
    let (paths, f, g, wiener) = (
        paths.clone(),
        f.clone(),
        g.clone(),
        Arc::new(wiener.clone()),
    );
    Ok(SolutionBundle::generated(
        grid,
        f.members(),
        Provenance::EulerMaruyama,
        false,
        Arc::new(move |m| {
            em_member(
                &grid,
                &spec,
                scheme,
                paths.path(m),
                &f.member(m),
                &g.member(m),
                &wiener,
                m,
            )
        }),
    ))
}

/// u = u¹ + u², where u¹ = stoch_convolve(identity, g) and u² solves the
/// random-coefficient equation with forcing (a − I) : u¹_xx + f.
pub fn split_solve(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    g: &RandomField,
    wiener: &WienerEnsemble,
) -> Result<SolutionBundle> {
    if !paths.adaptedness_tag() {
        return Err(Error::NotPredictable(
            "split solve requires coefficients adapted to the Wiener filtration".into(),
        ));
    }
    let grid = *f.grid();
    check_grid(&grid, g.grid(), "noise coefficient g")?;
    check_paths(paths, &grid, f.members())?;
    if f.channels() != 1 || g.members() != f.members() {
        return Err(Error::mismatch(
            "f must have one channel and f, g the same member count",
        ));
    }
    check_support(f, "forcing f")?;
    let identity = CoefficientPath::constant(SymMatrix::identity(grid.dim()), grid.horizon())?;
    let heat = CoefficientEnsemble::deterministic(identity, f.members());
    let u1 = stoch_convolve(&heat, g, wiener)?;
    let ctx = SpectralContext::new(&grid);
    let pairs = hessian_pairs(grid.dim());
    let n = grid.spatial_len();
    let (paths, f) = (paths.clone(), f.clone());
    Ok(SolutionBundle::generated(
        grid,
        f.members(),
        Provenance::Split,
        true,
        Arc::new(move |m| {
            let first = u1.member(m);
            let path = paths.path(m);
            let mut forcing = f.member(m).into_owned();
            for step in 0..grid.slices() {
                let a = path.value_at(grid.time(step));
                for (k, (i, j)) in pairs.iter().enumerate() {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let w = (if i == j { 1.0 } else { 2.0 }) * (a.get(*i, *j) - delta);
                    if w == 0.0 {
                        continue;
                    }
                    let src = first.u_xx.slice(step, k).to_vec();
                    let dst = forcing.slice_mut(step, 0);
                    for x in 0..n {
                        dst[x] += w * src[x];
                    }
                }
            }
            let second = det_member(&ctx, &grid, path, &forcing);
            first.add(&second)
        }),
    ))
}

/// Smooth bump exp(1 − 1/(1 − |x − c|²/R²)) on |x − c| < R, zero elsewhere.
pub fn bump_test_function(grid: &SpaceTimeGrid, center: &[f64], radius: f64) -> Vec<f64> {
    (0..grid.spatial_len())
        .map(|j| {
            let x = grid.point(j);
            let s: f64 = x
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / (radius * radius);
            if s < 1.0 {
                (1.0 - 1.0 / (1.0 - s)).exp()
            } else {
                0.0
            }
        })
        .collect()
}

/// Largest |residual| of the discrete weak form
///
/// ```text
/// (u(t_m), φ) − Σ_{n<m} [ (A_n : u(t_n), ∂²φ) + Δt (f(t_n), φ) ] − Σ_{n<m} Σ_k (g^k(t_n), φ) ΔW^k_n
/// ```
///
/// over members, test functions and slices, where A_n = ∫_{t_n}^{t_{n+1}} a
/// and ∂²φ is computed spectrally. Passes when it is at most `tolerance`.
pub fn weak_residual(
    u: &SolutionBundle,
    paths: &CoefficientEnsemble,
    f: &RandomField,
    g: &RandomField,
    wiener: Option<&WienerEnsemble>,
    tests: &[Vec<f64>],
    tolerance: f64,
) -> Result<VerificationReport> {
    let grid = *u.grid();
    check_grid(&grid, f.grid(), "forcing f")?;
    check_grid(&grid, g.grid(), "noise coefficient g")?;
    check_paths(paths, &grid, u.members())?;
    if f.members() != u.members() || g.members() != u.members() {
        return Err(Error::mismatch("solution and data differ in member count"));
    }
    if let Some(w) = wiener {
        check_wiener(w, &grid, u.members(), g.channels())?;
    }
    if tests.is_empty() || tests.iter().any(|t| t.len() != grid.spatial_len()) {
        return Err(Error::invalid(
            "need at least one test function of grid size",
        ));
    }
    let spec = Spectral::new(&grid);
    let pairs = hessian_pairs(grid.dim());
    let hd = grid.cell_volume();
    let second: Vec<Vec<Vec<f64>>> = tests
        .iter()
        .map(|phi| {
            let hat = spec.forward_real(phi);
            pairs
                .iter()
                .map(|&(i, j)| {
                    let mult = spec.second_derivative(i, j);
                    let mut out = vec![0.0; phi.len()];
                    spec.inverse_real(
                        hat.iter().zip(&mult).map(|(a, b)| a * b).collect(),
                        &mut out,
                    );
                    out
                })
                .collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * hd;
    let worst = ordered_fold(
        u.members(),
        0.0f64,
        |m| {
            let sol = u.member(m);
            let (fm, gm) = (f.member(m), g.member(m));
            let path = paths.path(m);
            let mut worst = 0.0f64;
            for (phi, d2) in tests.iter().zip(&second) {
                let mut integral = 0.0;
                for step in 0..grid.slices() {
                    let lhs = dot(sol.u.slice(step, 0), phi);
                    worst = worst.max((lhs - integral).abs());
                    if step == grid.nt() {
                        break;
                    }
                    let a = path.integral(grid.time(step), grid.time(step + 1));
                    for (k, (i, j)) in pairs.iter().enumerate() {
                        let w = if i == j { 1.0 } else { 2.0 };
                        integral += w * a.get(*i, *j) * dot(sol.u.slice(step, 0), &d2[k]);
                    }
                    integral += grid.dt() * dot(fm.slice(step, 0), phi);
                    if let Some(w) = wiener {
                        for (k, dw) in w
                            .step_increments(m, step)
                            .iter()
                            .enumerate()
                            .take(gm.channels())
                        {
                            integral += dw * dot(gm.slice(step, k), phi);
                        }
                    }
                }
            }
            worst
        },
        || 0.0f64,
        |acc: &mut f64, _, v| *acc = acc.max(v),
        |total, _, acc| *total = total.max(acc),
    );
    Ok(VerificationReport::new("weak_residual", worst, Check::AtMost(tolerance))
        .with_bound("(u(t),phi) = int_0^t [(a u, phi_xx) + (f, phi)] ds + sum_k int_0^t (g^k, phi) dw^k")
        .with_detail("members", u.members() as f64)
        .with_detail("test_functions", tests.len() as f64)
        .with_detail("nx", grid.nx() as f64)
        .with_detail("nt", grid.nt() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sin_grid(nx: usize, nt: usize) -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, PI, nx, 1.0, nt).unwrap()
    }

    fn identity(grid: &SpaceTimeGrid, members: usize) -> CoefficientEnsemble {
        CoefficientEnsemble::deterministic(
            CoefficientPath::constant(SymMatrix::identity(1), grid.horizon()).unwrap(),
            members,
        )
    }

    fn manufactured_f(grid: SpaceTimeGrid) -> RandomField {
        RandomField::shared(
            DeterministicField::from_fn(grid, 1, |t, _, x| (1.0 + t) * x[0].sin()),
            1,
        )
        .with_periodic(true)
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let g = sin_grid(16, 16);
        let u = det_convolve(
            &identity(&g, 1),
            &RandomField::zeros(g, 1, 1).with_periodic(true),
        )
        .unwrap();
        assert_eq!(u.member(0).u.max_abs(), 0.0);
        assert_eq!(u.member(0).u_xx.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_first_order_in_time() {
        let mut errs = Vec::new();
        for nt in [32, 64] {
            let g = sin_grid(16, nt);
            let u = det_convolve(&identity(&g, 1), &manufactured_f(g)).unwrap();
            let exact = DeterministicField::from_fn(g, 1, |t, _, x| t * x[0].sin());
            errs.push(u.member(0).u.axpy(-1.0, &exact).unwrap().max_abs());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 0.9 && order < 1.1, "order {order}");
    }

    #[test]
    fn unsupported_data_rejected() {
        let g = SpaceTimeGrid::new(1, 4.0, 32, 1.0, 16).unwrap();
        let f = RandomField::shared(DeterministicField::from_fn(g, 1, |_, _, _| 1.0), 1);
        assert!(matches!(
            det_convolve(&identity(&g, 1), &f),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn random_kernel_rejected_for_stochastic_integral() {
        let g = SpaceTimeGrid::new(1, 4.0, 16, 1.0, 16).unwrap();
        let w = WienerEnsemble::generate(2, 1, 16, 1.0, 3).unwrap();
        let band = crate::coefficients::EllipticityBand::new(1.0, 2.0).unwrap();
        let paths = crate::coefficients::predictable_ensemble(
            &w,
            &band,
            1,
            &crate::coefficients::PredictableRule::ThresholdOnW { lookahead: 0 },
        )
        .unwrap();
        let gf = RandomField::zeros(g, 1, 2);
        // The two paths differ unless both walks stay on one side of zero.
        if paths.deterministic_path().is_none() {
            assert!(matches!(
                stoch_convolve(&paths, &gf, &w),
                Err(Error::Measurability(_))
            ));
        }
    }

    #[test]
    fn explicit_cfl_enforced() {
        let g = sin_grid(64, 8);
        let w = WienerEnsemble::generate(1, 1, 8, 1.0, 1).unwrap();
        let z = RandomField::zeros(g, 1, 1);
        let r = euler_maruyama_oracle(&identity(&g, 1), &z, &z, &w, EmScheme::Explicit);
        assert!(matches!(r, Err(Error::Cfl { .. })));
    }

    fn unit_noise(grid: SpaceTimeGrid, members: usize, channels: usize) -> RandomField {
        RandomField::shared(
            DeterministicField::from_fn(grid, channels, |_, _, _| 1.0),
            members,
        )
        .with_periodic(true)
    }

    fn second_moment_at(u: &SolutionBundle, slice: usize, node: usize) -> (f64, f64) {
        let v: Vec<f64> = (0..u.members())
            .map(|m| u.member(m).u.slice(slice, 0)[node].powi(2))
            .collect();
        crate::stats::mean_and_se(&v)
    }

    #[test]
    fn unit_noise_isometry() {
        let g = SpaceTimeGrid::new(1, 4.0, 16, 1.0, 16).unwrap();
        let w = WienerEnsemble::generate(400, 2, 16, 1.0, 11).unwrap();
        for channels in [1, 2] {
            let u = stoch_convolve(&identity(&g, 400), &unit_noise(g, 400, channels), &w).unwrap();
            let (mean, se) = second_moment_at(&u, 8, 5);
            let exact = 0.5 * channels as f64;
            assert!(
                (mean - exact).abs() < 3.0 * se,
                "{mean} vs {exact} (se {se})"
            );
            assert_eq!(
                u.member(3)
                    .u
                    .slice(0, 0)
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>(),
                0.0
            );
        }
    }

    #[test]
    fn stochastic_matches_semi_implicit_oracle() {
        let g = SpaceTimeGrid::new(1, 4.0, 16, 1.0, 16).unwrap();
        let w = WienerEnsemble::generate(400, 1, 16, 1.0, 5).unwrap();
        let noise = unit_noise(g, 400, 1);
        let zero = RandomField::zeros(g, 1, 400).with_periodic(true);
        let a = stoch_convolve(&identity(&g, 400), &noise, &w).unwrap();
        let b = euler_maruyama_oracle(
            &identity(&g, 400),
            &zero,
            &noise,
            &w,
            EmScheme::SemiImplicit,
        )
        .unwrap();
        // Same noise, constant data: both reduce to the Wiener path itself.
        for m in 0..5 {
            let (ua, ub) = (a.member(m), b.member(m));
            for t in 0..g.slices() {
                assert!((ua.u.slice(t, 0)[3] - w.position(m, t, 0)).abs() < 1e-12);
                assert!((ub.u.slice(t, 0)[3] - w.position(m, t, 0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn det_convolve_time_rescaling() {
        let fast = SpaceTimeGrid::new(1, 4.0, 32, 0.5, 32).unwrap();
        let slow = SpaceTimeGrid::new(1, 4.0, 32, 1.0, 32).unwrap();
        let bump = |t: f64, x: f64| {
            (1.0 + t) * (-4.0 * x * x).exp() * if x.abs() < 2.0 { 1.0 } else { 0.0 }
        };
        let f_slow = RandomField::shared(
            DeterministicField::from_fn(slow, 1, move |t, _, x| bump(t, x[0])),
            1,
        );
        let f_fast = RandomField::shared(
            DeterministicField::from_fn(fast, 1, move |t, _, x| 2.0 * bump(2.0 * t, x[0])),
            1,
        );
        let two = CoefficientPath::constant(SymMatrix::scaled_identity(1, 2.0), 0.5).unwrap();
        let u_fast = det_convolve(&CoefficientEnsemble::deterministic(two, 1), &f_fast).unwrap();
        let u_slow = det_convolve(&identity(&slow, 1), &f_slow).unwrap();
        let diff = u_fast
            .member(0)
            .u
            .data()
            .iter()
            .zip(u_slow.member(0).u.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }

    #[test]
    fn linearity_in_forcing() {
        let g = SpaceTimeGrid::new(1, 4.0, 32, 1.0, 16).unwrap();
        let f1 = DeterministicField::from_fn(g, 1, |t, _, x| {
            if x[0].abs() < 2.0 {
                (t * x[0]).cos() * (4.0 - x[0] * x[0])
            } else {
                0.0
            }
        });
        let f2 = DeterministicField::from_fn(g, 1, |_, _, x| {
            if x[0].abs() < 2.0 {
                (4.0 - x[0] * x[0]).powi(2)
            } else {
                0.0
            }
        });
        let paths = identity(&g, 1);
        let solve = |f: DeterministicField| {
            det_convolve(&paths, &RandomField::shared(f, 1))
                .unwrap()
                .member(0)
                .u
                .clone()
        };
        let combo = solve(f1.scaled(-1.5).axpy(1.0, &f2).unwrap());
        let parts = solve(f1.clone())
            .scaled(-1.5)
            .axpy(1.0, &solve(f2))
            .unwrap();
        let diff = combo.axpy(-1.0, &parts).unwrap().max_abs();
        assert!(diff < 1e-12 * combo.max_abs().max(1.0), "{diff}");
    }

    #[test]
    fn split_reduces_for_identity_and_zero_noise() {
        let g = SpaceTimeGrid::new(1, 4.0, 32, 1.0, 16).unwrap();
        let w = WienerEnsemble::generate(4, 1, 16, 1.0, 9).unwrap();
        let f = RandomField::shared(
            DeterministicField::from_fn(g, 1, |_, _, x| {
                if x[0].abs() < 2.0 {
                    (4.0 - x[0] * x[0]).powi(3)
                } else {
                    0.0
                }
            }),
            4,
        );
        let noise = RandomField::shared(
            DeterministicField::from_fn(g, 1, |t, _, x| {
                if x[0].abs() < 2.0 {
                    t * (4.0 - x[0] * x[0]).powi(2)
                } else {
                    0.0
                }
            }),
            4,
        );
        let paths = identity(&g, 4);
        let split = split_solve(&paths, &f, &noise, &w).unwrap();
        let direct_det = det_convolve(&paths, &f).unwrap();
        let direct_sto = stoch_convolve(&paths, &noise, &w).unwrap();
        for m in 0..4 {
            let sum = direct_det
                .member(m)
                .u
                .axpy(1.0, &direct_sto.member(m).u)
                .unwrap();
            assert!(split.member(m).u.axpy(-1.0, &sum).unwrap().max_abs() < 1e-12);
        }
        let band = crate::coefficients::EllipticityBand::new(0.5, 2.0).unwrap();
        let rough = crate::coefficients::sample_path(
            &band,
            1,
            8,
            crate::coefficients::PathKind::PiecewiseRandom,
            4,
            1.0,
        )
        .unwrap();
        let rough = CoefficientEnsemble::deterministic(rough, 4);
        let zero = RandomField::zeros(g, 1, 4);
        let a = split_solve(&rough, &f, &zero, &w).unwrap();
        let b = det_convolve(&rough, &f).unwrap();
        assert_eq!(a.member(1).u, b.member(1).u);
    }

    #[test]
    fn weak_residual_cases() {
        let g = sin_grid(32, 64);
        let paths = identity(&g, 1);
        let f = manufactured_f(g);
        let zero = RandomField::zeros(g, 1, 1).with_periodic(true);
        let tests = vec![bump_test_function(&g, &[0.3], 1.5)];
        let u = det_convolve(&paths, &f).unwrap();
        let ok = weak_residual(&u, &paths, &f, &zero, None, &tests, 0.05).unwrap();
        assert!(ok.passed(), "{}", ok.observed);
        let u0 = det_convolve(&paths, &zero).unwrap();
        let r0 = weak_residual(&u0, &paths, &zero, &zero, None, &tests, 0.0).unwrap();
        assert_eq!(r0.observed, 0.0);
        let corrupt = u.map(move |_, m| {
            let mut m = m.clone();
            for t in 0..g.slices() {
                if g.time(t) > 0.5 {
                    m.u.slice_mut(t, 0).iter_mut().for_each(|v| *v += 1.0);
                }
            }
            m
        });
        let bad = weak_residual(&corrupt, &paths, &f, &zero, None, &tests, 0.05).unwrap();
        assert!(!bad.passed() && bad.observed > 0.5);
    }

    #[test]
    fn split_matches_oracle_for_predictable_paths() {
        let g = SpaceTimeGrid::new(1, 4.0, 32, 0.25, 64).unwrap();
        let w = WienerEnsemble::generate(3, 1, 64, 0.25, 21).unwrap();
        let band = crate::coefficients::EllipticityBand::new(0.5, 1.5).unwrap();
        let paths = crate::coefficients::predictable_ensemble(
            &w,
            &band,
            1,
            &crate::coefficients::PredictableRule::ThresholdOnW { lookahead: 0 },
        )
        .unwrap();
        let bump = |x: f64| {
            if x.abs() < 2.0 {
                (4.0 - x * x).powi(3) / 64.0
            } else {
                0.0
            }
        };
        let f = RandomField::shared(
            DeterministicField::from_fn(g, 1, move |_, _, x| bump(x[0])),
            3,
        );
        let noise = RandomField::shared(
            DeterministicField::from_fn(g, 1, move |_, _, x| bump(x[0])),
            3,
        );
        let a = split_solve(&paths, &f, &noise, &w).unwrap();
        let b = euler_maruyama_oracle(&paths, &f, &noise, &w, EmScheme::SemiImplicit).unwrap();
        for m in 0..3 {
            let (ua, ub) = (a.member(m), b.member(m));
            let diff = ua.u.axpy(-1.0, &ub.u).unwrap().max_abs();
            assert!(
                diff < 0.05 * ua.u.max_abs().max(1e-3),
                "member {m}: {diff} vs {}",
                ua.u.max_abs()
            );
        }
    }

    #[test]
    fn phi1_limits() {
        assert!((phi1(0.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((phi1(2.0, 0.5) - (1.0 - (-1.0f64).exp()) / 2.0).abs() < 1e-15);
    }
}
