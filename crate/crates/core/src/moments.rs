//! Sublinear moment operators, moment fields, the level-set split and the
//! maximal-regularity ratio reports.
//!
//! Operators are evaluated through the solver representations:
//! 𝒢_r[f] = ‖u_xx‖_{L_r(Ω)} with u = det_convolve(f), and the square function
//! behind 𝔊_r[g] is Σ_{n<m} Δt |∂P(t_m, t_n) g(t_n)|²_{l2}, with P the
//! one-step-product propagator. Matrix-valued node values use the Frobenius
//! norm; channel-valued ones the l2 norm.

use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::coefficients::CoefficientEnsemble;
use crate::error::{Error, Result};
use crate::field::{DeterministicField, RandomField};
use crate::geometry::{maximal_function, node_weights, sharp_function, CenterStride};
use crate::grid::SpaceTimeGrid;
use crate::report::{Check, VerificationReport};
use crate::solvers::{det_convolve, fd_derivatives, frobenius, step_decays, SolutionBundle};
use crate::spectral::{hessian_pairs, Spectral};
use crate::stats::{
    abs_pow, constant_moments, mean_and_se, moments_from, node_moments, node_values, NodeMoments,
};
use crate::wiener::WienerEnsemble;

/// A (time slice, flat spatial node) pair on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeIndex {
    pub slice: usize,
    pub node: usize,
}

impl NodeIndex {
    pub fn new(slice: usize, node: usize) -> Self {
        Self { slice, node }
    }

    fn check(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.slice >= grid.slices() || self.node >= grid.spatial_len() {
            return Err(Error::Domain(format!(
                "point (slice {}, node {}) is outside the {} x {} grid",
                self.slice,
                self.node,
                grid.slices(),
                grid.spatial_len()
            )));
        }
        Ok(())
    }

    fn flat(&self, grid: &SpaceTimeGrid) -> usize {
        self.slice * grid.spatial_len() + self.node
    }
}

/// `count` distinct probes with slices in [2, nt − 2] and nodes inside the
/// support box, drawn from `seed`.
pub fn probe_nodes(grid: &SpaceTimeGrid, count: usize, seed: u64) -> Vec<NodeIndex> {
    use rand::Rng;
    let mut rng = crate::wiener::stream_rng(seed, 0);
    let inside: Vec<usize> = (0..grid.spatial_len())
        .filter(|&j| grid.in_support_box(&grid.point(j)))
        .collect();
    let mut out: Vec<NodeIndex> = Vec::with_capacity(count);
    let capacity = (grid.nt() - 3) * inside.len();
    while out.len() < count.min(capacity) {
        let p = NodeIndex::new(
            rng.gen_range(2..=grid.nt() - 2),
            inside[rng.gen_range(0..inside.len())],
        );
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn require(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::invalid(msg))
    }
}

fn root_means(moments: &NodeMoments, e: usize, r: f64) -> Vec<f64> {
    moments
        .mean(e)
        .into_iter()
        .map(|m| m.powf(1.0 / r))
        .collect()
}

fn to_field(grid: SpaceTimeGrid, data: Vec<f64>) -> DeterministicField {
    DeterministicField::from_vec(grid, 1, data).expect("one value per node")
}

/// 𝒢_r[f](t, x) = (mean_ω |u_xx(t, x)|^r)^{1/r} with u = det_convolve(paths, f).
pub fn script_g(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    r: f64,
) -> Result<DeterministicField> {
    require(
        r >= 1.0 && r.is_finite(),
        format!("script_G needs r >= 1 (r = {r})"),
    )?;
    let u = det_convolve(paths, f)?;
    Ok(hessian_moment(&u, r))
}

/// Same operator through the data route u_xx = 𝒯(f_xx), valid for smooth
/// periodic data.
pub fn script_g_via_data(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    r: f64,
) -> Result<DeterministicField> {
    require(
        r >= 1.0 && r.is_finite(),
        format!("script_G needs r >= 1 (r = {r})"),
    )?;
    let grid = *f.grid();
    let spec = Arc::new(Spectral::new(&grid));
    let pairs = hessian_pairs(grid.dim());
    // One deterministic solve per Hessian entry; Frobenius-combine per member.
    let solves: Vec<SolutionBundle> = pairs
        .iter()
        .map(|&(i, j)| {
            let spec = spec.clone();
            // Spectral derivatives are periodic by construction.
            let fxx = f
                .map_fields(move |m| spectral_multiply(&spec, m, &spec.second_derivative(i, j)))
                .with_periodic(true);
            det_convolve(paths, &fxx)
        })
        .collect::<Result<_>>()?;
    let nodes = grid.slices() * grid.spatial_len();
    let moments = moments_from(f.members(), nodes, &[r], |m| {
        let mut acc = vec![0.0; nodes];
        for (k, (i, j)) in pairs.iter().enumerate() {
            let w = if i == j { 1.0 } else { 2.0 };
            for (a, v) in acc.iter_mut().zip(solves[k].member(m).u.data()) {
                *a += w * v * v;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    });
    Ok(to_field(grid, root_means(&moments, 0, r)))
}

fn spectral_multiply(spec: &Spectral, f: &DeterministicField, mult: &[f64]) -> DeterministicField {
    let grid = *f.grid();
    let mut out = DeterministicField::zeros(grid, f.channels());
    for t in 0..grid.slices() {
        for k in 0..f.channels() {
            let src = f.slice(t, k);
            if src.iter().all(|v| *v == 0.0) {
                continue;
            }
            let hat: Vec<Complex64> = spec
                .forward_real(src)
                .iter()
                .zip(mult)
                .map(|(a, b)| a * b)
                .collect();
            spec.inverse_real(hat, out.slice_mut(t, k));
        }
    }
    out
}

/// Spectral gradient of every channel: channel `k * d + a` holds ∂_a f^k.
pub fn data_gradient(spec: &Spectral, f: &DeterministicField) -> DeterministicField {
    let grid = *f.grid();
    let d = grid.dim();
    let mults: Vec<Vec<Complex64>> = (0..d).map(|a| spec.first_derivative(a)).collect();
    let mut out = DeterministicField::zeros(grid, f.channels() * d);
    let n = grid.spatial_len();
    let mut buf = vec![Complex64::default(); n];
    for t in 0..grid.slices() {
        for k in 0..f.channels() {
            let src = f.slice(t, k);
            if src.iter().all(|v| *v == 0.0) {
                continue;
            }
            let hat = spec.forward_real(src);
            for (a, m) in mults.iter().enumerate() {
                for ((b, h), mm) in buf.iter_mut().zip(&hat).zip(m) {
                    *b = h * mm;
                }
                spec.inverse(&mut buf);
                for (o, b) in out.slice_mut(t, k * d + a).iter_mut().zip(&buf) {
                    *o = b.re;
                }
            }
        }
    }
    out
}

fn hessian_moment(u: &SolutionBundle, r: f64) -> DeterministicField {
    let grid = *u.grid();
    let nodes = grid.slices() * grid.spatial_len();
    let moments = if u.is_shared() {
        constant_moments(u.member(0).hessian_norm().data(), u.members(), &[r])
    } else {
        moments_from(u.members(), nodes, &[r], |m| {
            u.member(m).hessian_norm().data().to_vec()
        })
    };
    to_field(grid, root_means(&moments, 0, r))
}

/// Which two-point kernel difference to evaluate.
pub enum PairInputs<'a> {
    /// G_r: second derivatives of 𝒯f.
    SecondDerivatives {
        paths: &'a CoefficientEnsemble,
        f: &'a RandomField,
    },
    /// 𝔅G_r: first derivatives of the kernel against g, l2 over channels and
    /// L2 over the integration time.
    FirstDerivativeSquare {
        paths: &'a CoefficientEnsemble,
        g: &'a RandomField,
    },
}

/// Ensemble L_r norm of the difference of two kernel pairings evaluated at
/// `a` and `b`.
pub fn pair_difference(inputs: PairInputs<'_>, r: f64, a: NodeIndex, b: NodeIndex) -> Result<f64> {
    require(
        r >= 1.0 && r.is_finite(),
        format!("pair difference needs r >= 1 (r = {r})"),
    )?;
    match inputs {
        PairInputs::SecondDerivatives { paths, f } => {
            let grid = *f.grid();
            a.check(&grid)?;
            b.check(&grid)?;
            let u = det_convolve(paths, f)?;
            let pairs = hessian_pairs(grid.dim());
            let per_member = |m: usize| {
                let s = u.member(m);
                let mut acc = 0.0;
                for (k, (i, j)) in pairs.iter().enumerate() {
                    let w = if i == j { 1.0 } else { 2.0 };
                    let diff = s.u_xx.slice(a.slice, k)[a.node] - s.u_xx.slice(b.slice, k)[b.node];
                    acc += w * diff * diff;
                }
                abs_pow(acc.sqrt(), r)
            };
            Ok(ensemble_root(u.members(), u.is_shared(), per_member, r))
        }
        PairInputs::FirstDerivativeSquare { paths, g } => {
            let grid = *g.grid();
            a.check(&grid)?;
            b.check(&grid)?;
            let path = deterministic(paths)?;
            let spec = Spectral::new(&grid);
            let decays = step_decays(&spec, &grid, path);
            let d = grid.dim();
            let mults: Vec<Vec<Complex64>> = (0..d).map(|ax| spec.first_derivative(ax)).collect();
            let n = grid.spatial_len();
            let per_member = |m: usize| {
                let gm = g.member(m);
                let mut total = 0.0;
                let last = a.slice.max(b.slice);
                let mut buf = vec![Complex64::default(); n];
                for src in 0..last {
                    for k in 0..gm.channels() {
                        let slice = gm.slice(src, k);
                        if slice.iter().all(|v| *v == 0.0) {
                            continue;
                        }
                        let hat = spec.forward_real(slice);
                        let value_at = |p: NodeIndex, ax: usize, buf: &mut Vec<Complex64>| {
                            if p.slice <= src {
                                return 0.0;
                            }
                            for (q, (h, mm)) in buf.iter_mut().zip(hat.iter().zip(&mults[ax])) {
                                *q = h * mm;
                            }
                            for step in src..p.slice {
                                for (q, e) in buf.iter_mut().zip(decays[step].iter()) {
                                    *q *= e;
                                }
                            }
                            spec.inverse(buf);
                            buf[p.node].re
                        };
                        for ax in 0..d {
                            let va = value_at(a, ax, &mut buf);
                            let vb = value_at(b, ax, &mut buf);
                            total += grid.dt() * (va - vb).powi(2);
                        }
                    }
                }
                abs_pow(total.sqrt(), r)
            };
            Ok(ensemble_root(
                g.members(),
                g.as_shared().is_some(),
                per_member,
                r,
            ))
        }
    }
}

fn ensemble_root(
    members: usize,
    shared: bool,
    per_member: impl Fn(usize) -> f64 + Sync,
    r: f64,
) -> f64 {
    let mean = if shared {
        per_member(0)
    } else {
        crate::parallel::ordered_sum(members, &per_member) / members as f64
    };
    mean.powf(1.0 / r)
}

fn deterministic(paths: &CoefficientEnsemble) -> Result<&crate::coefficients::CoefficientPath> {
    paths.deterministic_path().ok_or_else(|| {
        Error::Measurability("the stochastic operators need a deterministic kernel; the coefficient paths vary with omega".into())
    })
}

/// Where the spatial derivative of the stochastic pairing is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeRoute {
    /// ∫ p_x(t, ρ, x − y) g(ρ, y) dy
    Kernel,
    /// ∫ p(t, ρ, x − y) g_x(ρ, y) dy
    Data,
}

/// sqrt of Σ_{n<m} Δt |∂P(t_m, t_n) g(t_n)|²_{l2} at every node, slice-major.
fn square_function(
    spec: &Spectral,
    grid: &SpaceTimeGrid,
    decays: &[Arc<Vec<f64>>],
    g: &DeterministicField,
    route: DerivativeRoute,
) -> Vec<f64> {
    let n = grid.spatial_len();
    let d = grid.dim();
    let mults: Vec<Vec<Complex64>> = (0..d).map(|a| spec.first_derivative(a)).collect();
    let mut sums = vec![0.0; grid.slices() * n];
    // Active spectra: one per (source step, channel, axis), already carrying
    // the derivative multiplier.
    let mut active: Vec<Vec<Complex64>> = Vec::new();
    let mut buf = vec![Complex64::default(); n];
    for m in 1..grid.slices() {
        let src = m - 1;
        for k in 0..g.channels() {
            let slice = g.slice(src, k);
            if slice.iter().all(|v| *v == 0.0) {
                continue;
            }
            let hat = spec.forward_real(slice);
            for mult in &mults {
                let w: Vec<Complex64> = match route {
                    DerivativeRoute::Kernel => hat.iter().zip(mult).map(|(h, mm)| h * mm).collect(),
                    DerivativeRoute::Data => {
                        let mut gx = vec![0.0; n];
                        spec.inverse_real(
                            hat.iter().zip(mult).map(|(h, mm)| h * mm).collect(),
                            &mut gx,
                        );
                        spec.forward_real(&gx)
                    }
                };
                active.push(w);
            }
        }
        let decay = &decays[src];
        for w in active.iter_mut() {
            for (v, e) in w.iter_mut().zip(decay.iter()) {
                *v *= e;
            }
        }
        let dst = &mut sums[m * n..(m + 1) * n];
        for pair in active.chunks(2) {
            for (q, idx) in buf.iter_mut().zip(0..n) {
                *q = pair[0][idx]
                    + if pair.len() == 2 {
                        Complex64::new(0.0, 1.0) * pair[1][idx]
                    } else {
                        Complex64::default()
                    };
            }
            spec.inverse(&mut buf);
            for (s, v) in dst.iter_mut().zip(&buf) {
                *s += grid.dt() * (v.re * v.re + v.im * v.im);
            }
        }
    }
    sums.into_iter().map(f64::sqrt).collect()
}

/// Square-function values sqrt(Σ Δt |∂P g|²) for every member, lazily.
fn square_functions(
    paths: &CoefficientEnsemble,
    g: &RandomField,
    route: DerivativeRoute,
) -> Result<SquareFunctions> {
    let path = deterministic(paths)?;
    let grid = *g.grid();
    if path.dim() != grid.dim() {
        return Err(Error::mismatch(
            "coefficient dimension differs from grid dimension",
        ));
    }
    let spec = Spectral::new(&grid);
    let decays = step_decays(&spec, &grid, path);
    Ok(SquareFunctions {
        spec,
        grid,
        decays,
        g: g.clone(),
        route,
    })
}

struct SquareFunctions {
    spec: Spectral,
    grid: SpaceTimeGrid,
    decays: Vec<Arc<Vec<f64>>>,
    g: RandomField,
    route: DerivativeRoute,
}

impl SquareFunctions {
    fn member(&self, m: usize) -> Vec<f64> {
        square_function(
            &self.spec,
            &self.grid,
            &self.decays,
            &self.g.member(m),
            self.route,
        )
    }

    fn moments(&self, exponents: &[f64]) -> NodeMoments {
        if let Some(shared) = self.g.as_shared() {
            let v = square_function(&self.spec, &self.grid, &self.decays, shared, self.route);
            return constant_moments(&v, self.g.members(), exponents);
        }
        let nodes = self.grid.slices() * self.grid.spatial_len();
        moments_from(self.g.members(), nodes, exponents, |m| self.member(m))
    }
}

/// 𝔊_r[g](t, x) = (mean_ω (Σ_ρ Δρ |∫ p_x(t, ρ, x − y) g(ρ, y) dy|²_{l2})^{r/2})^{1/r}.
pub fn frak_g(
    paths: &CoefficientEnsemble,
    g: &RandomField,
    r: f64,
    route: DerivativeRoute,
) -> Result<DeterministicField> {
    require(
        r >= 2.0 && r.is_finite(),
        format!("frak_G needs r >= 2 (r = {r})"),
    )?;
    let sq = square_functions(paths, g, route)?;
    Ok(to_field(*g.grid(), root_means(&sq.moments(&[r]), 0, r)))
}

/// m^r = mean_ω |u|^r with its per-node Monte Carlo standard error.
#[derive(Clone, Debug)]
pub struct MomentField {
    pub r: f64,
    pub m: DeterministicField,
    pub std_error: DeterministicField,
}

/// Moment field of the solution values.
pub fn moment_field(u: &SolutionBundle, r: f64) -> Result<MomentField> {
    moment_field_of(&u.u(), r)
}

pub fn moment_field_of(u: &RandomField, r: f64) -> Result<MomentField> {
    require(
        r >= 2.0 && r.is_finite(),
        format!("moment field needs r >= 2 (r = {r})"),
    )?;
    let shared = u.as_shared().is_some();
    require(
        shared || u.members() >= 2,
        "moment field needs at least two members",
    )?;
    let grid = *u.grid();
    let moments = node_moments(u, &[r, 2.0 * r]);
    let first = moments.mean(0);
    let se = if shared {
        vec![0.0; first.len()]
    } else {
        let m = u.members() as f64;
        first
            .iter()
            .zip(moments.mean(1))
            .map(|(a, b)| ((b - a * a).max(0.0) / (m - 1.0)).sqrt())
            .collect()
    };
    Ok(MomentField {
        r,
        m: to_field(grid, first),
        std_error: to_field(grid, se),
    })
}

/// Compares the centred time difference of m^r at each probe with the
/// ensemble Itô drift
/// `r|u|^{r−2}u(a^{ij}u_ij + f) + r(r−1)/2 |u|^{r−2}|g|²`, averaged over the
/// two steps of the stencil.
///
/// With `wiener`, the left-point martingale increment
/// r|u|^{r−2}u g^k ΔW^k is subtracted path by path; it has mean zero, so this
/// only removes variance. Each probe's tolerance is 3 standard errors plus a
/// discretization allowance |R(t_{i+1}) − R(t_{i−1})| + Δt max|R| over the
/// stencil, R the mean drift. Observed: the largest |discrepancy|/tolerance.
pub fn moment_evolution_check(
    u: &SolutionBundle,
    paths: &CoefficientEnsemble,
    f: &RandomField,
    g: &RandomField,
    wiener: Option<&WienerEnsemble>,
    r: f64,
    probes: &[NodeIndex],
) -> Result<VerificationReport> {
    require(
        r >= 2.0 && r.is_finite(),
        format!("moment evolution needs r >= 2 (r = {r})"),
    )?;
    let grid = *u.grid();
    require(!probes.is_empty(), "need at least one probe")?;
    for p in probes {
        p.check(&grid)?;
        if p.slice == 0 || p.slice >= grid.nt() {
            return Err(Error::Domain(format!(
                "probe slice {} needs both time neighbours",
                p.slice
            )));
        }
    }
    if f.members() != u.members() || g.members() != u.members() || paths.len() != u.members() {
        return Err(Error::mismatch(
            "solution, data and coefficients differ in member count",
        ));
    }
    let dt = grid.dt();
    let pairs = hessian_pairs(grid.dim());
    let np = probes.len();
    // Per member and probe: [centred difference − martingale, drift at i−1, i, i+1],
    // plus the drift over the whole probe slice.
    let per_member = |m: usize| -> (Vec<[f64; 4]>, Vec<Vec<f64>>) {
        let s = u.member(m);
        let (fm, gm) = (f.member(m), g.member(m));
        let path = paths.path(m);
        let drift = |slice: usize, node: usize| {
            let v = s.u.slice(slice, 0)[node];
            let a = path.value_at(grid.time(slice));
            let mut lu = 0.0;
            for (k, (i, j)) in pairs.iter().enumerate() {
                let w = if i == j { 1.0 } else { 2.0 };
                lu += w * a.get(*i, *j) * s.u_xx.slice(slice, k)[node];
            }
            let g2: f64 = (0..gm.channels())
                .map(|k| gm.slice(slice, k)[node].powi(2))
                .sum();
            let weight = v.abs().powf(r - 2.0);
            r * weight * v * (lu + fm.slice(slice, 0)[node]) + 0.5 * r * (r - 1.0) * weight * g2
        };
        let rows = probes
            .iter()
            .map(|p| {
                let (i, x) = (p.slice, p.node);
                let val = |sl: usize| s.u.slice(sl, 0)[x];
                let mut diff = abs_pow(val(i + 1), r) - abs_pow(val(i - 1), r);
                if let Some(w) = wiener {
                    for sl in [i - 1, i] {
                        let v = val(sl);
                        let noise: f64 = w
                            .step_increments(m, sl)
                            .iter()
                            .enumerate()
                            .take(gm.channels())
                            .map(|(k, dw)| gm.slice(sl, k)[x] * dw)
                            .sum();
                        diff -= r * v.abs().powf(r - 2.0) * v * noise;
                    }
                }
                [
                    diff / (2.0 * dt),
                    drift(i - 1, x),
                    drift(i, x),
                    drift(i + 1, x),
                ]
            })
            .collect();
        let slices = probes
            .iter()
            .map(|p| (0..grid.spatial_len()).map(|x| drift(p.slice, x)).collect())
            .collect();
        (rows, slices)
    };
    let members = u.members();
    let shared =
        u.is_shared() && f.as_shared().is_some() && g.as_shared().is_some() && wiener.is_none();
    let n_used = if shared { 1 } else { members };
    type Acc = (Vec<Vec<[f64; 4]>>, Vec<Vec<f64>>);
    let sum_into = |sums: &mut Vec<Vec<f64>>, add: Vec<Vec<f64>>| {
        if sums.is_empty() {
            *sums = add;
        } else {
            for (a, s) in sums.iter_mut().zip(add) {
                a.iter_mut().zip(s).for_each(|(a, s)| *a += s);
            }
        }
    };
    let (rows, slice_sums): Acc = crate::parallel::ordered_fold(
        n_used,
        (Vec::with_capacity(n_used), Vec::new()),
        per_member,
        || (Vec::new(), Vec::new()),
        |acc: &mut Acc, _, (r, sl)| {
            acc.0.push(r);
            sum_into(&mut acc.1, sl);
        },
        |total, _, chunk| {
            total.0.extend(chunk.0);
            sum_into(&mut total.1, chunk.1);
        },
    );
    let mut worst = 0.0f64;
    let mut max_abs_gap = 0.0f64;
    let mut series = Vec::with_capacity(np);
    for (pi, _) in probes.iter().enumerate() {
        let discrepancy: Vec<f64> = rows
            .iter()
            .map(|row| row[pi][0] - 0.5 * (row[pi][1] + row[pi][2]))
            .collect();
        let (gap, se) = mean_and_se(&discrepancy);
        let se = if se.is_finite() { se } else { 0.0 };
        let mean_of = |c: usize| rows.iter().map(|row| row[pi][c]).sum::<f64>() / rows.len() as f64;
        let (r_prev, r_mid, r_next) = (mean_of(1), mean_of(2), mean_of(3));
        // O(Δt) scheme error is bounded by the drift's size over the slice,
        // not at the node: far-tail nodes carry no relative accuracy.
        let slice_scale = slice_sums[pi].iter().fold(0.0f64, |m, v| m.max(v.abs())) / n_used as f64;
        let allowance = (r_next - r_prev).abs()
            + dt * r_prev
                .abs()
                .max(r_mid.abs())
                .max(r_next.abs())
                .max(slice_scale);
        let tol = 3.0 * se + allowance;
        let score = if gap == 0.0 {
            0.0
        } else if tol > 0.0 {
            gap.abs() / tol
        } else {
            f64::INFINITY
        };
        worst = worst.max(score);
        max_abs_gap = max_abs_gap.max(gap.abs());
        series.push((pi as f64, score));
    }
    Ok(
        VerificationReport::new("moment_evolution", worst, Check::AtMost(1.0))
            .with_bound("d/dt E|u|^r = E[r|u|^(r-2)u(a^ij u_ij + f)] + r(r-1)/2 E[|u|^(r-2)|g|^2]")
            .with_detail("r", r)
            .with_detail("probes", np as f64)
            .with_detail("members", members as f64)
            .with_detail("max_abs_discrepancy", max_abs_gap)
            .with_detail("control_variate", if wiener.is_some() { 1.0 } else { 0.0 })
            .with_series(series),
    )
}

/// f split at threshold λ of the per-node ensemble L_r norm.
#[derive(Clone, Debug)]
pub struct LevelSplit {
    pub lambda: f64,
    pub r: f64,
    /// f · 1{‖f‖_B > λ}
    pub f1: RandomField,
    /// f · 1{‖f‖_B ≤ λ}
    pub f2: RandomField,
    /// ‖f(t, x)‖_B per node.
    pub norm: DeterministicField,
}

/// Per-node ensemble L_r norm (mean_ω |f|^r)^{1/r}.
pub fn ensemble_norm(f: &RandomField, r: f64) -> DeterministicField {
    let moments = node_moments(f, &[r]);
    to_field(*f.grid(), root_means(&moments, 0, r))
}

pub fn level_split(f: &RandomField, lambda: f64, r: f64) -> Result<LevelSplit> {
    require(
        lambda >= 0.0 && lambda.is_finite(),
        format!("threshold must be finite and >= 0 (lambda = {lambda})"),
    )?;
    require(
        r >= 1.0 && r.is_finite(),
        format!("level split needs r >= 1 (r = {r})"),
    )?;
    let norm = ensemble_norm(f, r);
    let above: Arc<Vec<bool>> = Arc::new(norm.data().iter().map(|v| *v > lambda).collect());
    let masked = |keep_above: bool| {
        let above = above.clone();
        f.map_fields(move |m| {
            let grid = *m.grid();
            let n = grid.spatial_len();
            let mut out = m.clone();
            for t in 0..grid.slices() {
                for k in 0..m.channels() {
                    for (x, v) in out.slice_mut(t, k).iter_mut().enumerate() {
                        if above[t * n + x] != keep_above {
                            *v = 0.0;
                        }
                    }
                }
            }
            out
        })
    };
    Ok(LevelSplit {
        lambda,
        r,
        f1: masked(true),
        f2: masked(false),
        norm,
    })
}

/// At each probe: (𝒢_r[f1 + f2])^♯ ≤ 2𝓜(𝒢_r[f1]) + N sup ‖f2‖_B. Reports
/// the smallest such N (0 when the f2 term is not needed; infinite when it
/// is needed but f2 vanishes).
pub fn sharp_domination_check(
    paths: &CoefficientEnsemble,
    f1: &RandomField,
    f2: &RandomField,
    r: f64,
    probes: &[NodeIndex],
    radii: &[f64],
    stride: CenterStride,
) -> Result<VerificationReport> {
    let grid = *f1.grid();
    require(!probes.is_empty(), "need at least one probe")?;
    for p in probes {
        p.check(&grid)?;
    }
    let whole = f1.add(f2)?;
    let h = script_g(paths, &whole, r)?;
    let h1 = script_g(paths, f1, r)?;
    let sharp = sharp_function(&h, radii, stride)?;
    let maximal = if h1.max_abs() == 0.0 {
        h1.clone()
    } else {
        maximal_function(&h1, radii, stride)?
    };
    let sup_f2 = ensemble_norm(f2, r).max_abs();
    let mut fitted = 0.0f64;
    let mut max_excess = f64::NEG_INFINITY;
    let mut series = Vec::with_capacity(probes.len());
    for (i, p) in probes.iter().enumerate() {
        let flat = p.flat(&grid);
        let excess = sharp.data()[flat] - 2.0 * maximal.data()[flat];
        max_excess = max_excess.max(excess);
        let n = if excess <= 0.0 {
            0.0
        } else if sup_f2 > 0.0 {
            excess / sup_f2
        } else {
            f64::INFINITY
        };
        fitted = fitted.max(n);
        series.push((i as f64, n));
    }
    Ok(
        VerificationReport::new("sharp_domination", fitted, Check::Finite)
            .with_bound("(G_r[f1+f2])#(t,x) <= 2 M(G_r[f1])(t,x) + N ||f2||_{L_inf(L_r)}")
            .with_detail("r", r)
            .with_detail("probes", probes.len() as f64)
            .with_detail("f2_sup_norm", sup_f2)
            .with_detail("max_excess_over_twice_maximal", max_excess)
            .with_series(series),
    )
}

/// Which estimate `maxreg_ratio` evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaxregMode {
    /// ‖u‖ + Σ_{|α|=2} ‖D^α u‖ over ‖f‖ + ‖g‖ + Σ_a ‖g_{x^a}‖.
    Full,
    /// ‖u_xx‖ over ‖f‖ + ‖g_x‖.
    SecondDerivs,
    /// ‖u_xx‖ over ‖f‖.
    DetOnly,
    /// ∫|m^r|^{p/r} + ∫|∂_t m^r|^{p/r} + ∫|∂_xx m^r|^{p/r} over ‖f‖^p + ‖g‖^p_{H¹}.
    MomentSobolev,
}

impl MaxregMode {
    pub fn label(&self) -> &'static str {
        match self {
            MaxregMode::Full => "full",
            MaxregMode::SecondDerivs => "second_derivs",
            MaxregMode::DetOnly => "det_only",
            MaxregMode::MomentSobolev => "moment_sobolev",
        }
    }
}

/// Exponent preconditions: 2 ≤ r ≤ p for the stochastic estimates and
/// 1 < r ≤ p for the deterministic one.
pub fn check_maxreg_exponents(p: f64, r: f64, mode: MaxregMode) -> Result<()> {
    let ok = match mode {
        MaxregMode::DetOnly => r > 1.0 && r <= p,
        _ => (2.0..=p).contains(&r),
    };
    if !ok || !p.is_finite() {
        let rule = if mode == MaxregMode::DetOnly {
            "1 < r ≤ p"
        } else {
            "2 ≤ r ≤ p"
        };
        return Err(Error::invalid(format!(
            "exponents (r = {r}, p = {p}) violate {rule} for the {} estimate",
            mode.label()
        )));
    }
    Ok(())
}

/// Time derivative (central inside, second-order one-sided at the ends) and
/// Frobenius norm of the finite-difference Hessian of a one-channel field.
pub fn moment_derivatives(m: &DeterministicField) -> (DeterministicField, DeterministicField) {
    let grid = *m.grid();
    let (n, s, dt) = (grid.spatial_len(), grid.slices(), grid.dt());
    let mut dt_field = DeterministicField::zeros(grid, 1);
    for t in 0..s {
        let out = dt_field.slice_mut(t, 0);
        for x in 0..n {
            let v = |i: usize| m.slice(i, 0)[x];
            out[x] = if t == 0 {
                (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * dt)
            } else if t == s - 1 {
                (3.0 * v(t) - 4.0 * v(t - 1) + v(t - 2)) / (2.0 * dt)
            } else {
                (v(t + 1) - v(t - 1)) / (2.0 * dt)
            };
        }
    }
    let d = grid.dim();
    let mut hess = DeterministicField::zeros(grid, d * (d + 1) / 2);
    let mut grad = vec![vec![0.0; n]; d];
    let mut h = vec![vec![0.0; n]; d * (d + 1) / 2];
    for t in 0..s {
        fd_derivatives(&grid, m.slice(t, 0), &mut grad, &mut h);
        for (k, hv) in h.iter().enumerate() {
            hess.slice_mut(t, k).copy_from_slice(hv);
        }
    }
    (dt_field, frobenius(&hess))
}

/// LHS/RHS of the selected maximal-regularity estimate in the 𝔹L_{p,r}
/// scale, with a batch-means standard error. RHS = 0 gives ratio 0 when the
/// LHS vanishes too and an infinite (failing) ratio otherwise.
pub fn maxreg_ratio(
    u: &SolutionBundle,
    f: &RandomField,
    g: &RandomField,
    p: f64,
    r: f64,
    mode: MaxregMode,
) -> Result<VerificationReport> {
    Ok(maxreg_ratios(u, f, g, &[(p, r)], mode)?.remove(0))
}

/// `maxreg_ratio` for several (p, r) pairs from one pass over members.
pub fn maxreg_ratios(
    u: &SolutionBundle,
    f: &RandomField,
    g: &RandomField,
    exponent_pairs: &[(f64, f64)],
    mode: MaxregMode,
) -> Result<Vec<VerificationReport>> {
    for &(p, r) in exponent_pairs {
        check_maxreg_exponents(p, r, mode)?;
    }
    let exponents = distinct_exponents(exponent_pairs);
    let grid = *u.grid();
    if f.grid() != &grid || g.grid() != &grid {
        return Err(Error::mismatch("solution and data live on different grids"));
    }
    if f.members() != u.members() || g.members() != u.members() {
        return Err(Error::mismatch("solution and data differ in member count"));
    }
    let d = grid.dim();
    let n_nodes = grid.slices() * grid.spatial_len();
    let pairs = hessian_pairs(d);
    let spec = Spectral::new(&grid);
    let block_count = match mode {
        MaxregMode::Full => 1 + pairs.len() + 2 + d,
        MaxregMode::SecondDerivs => 3,
        MaxregMode::DetOnly => 2,
        MaxregMode::MomentSobolev => 3 + d,
    };
    let eval = |m: usize| -> Vec<f64> {
        let s = u.member(m);
        let fm = f.member(m);
        let mut out = Vec::with_capacity(block_count * n_nodes);
        let gm = || g.member(m);
        let gx = |gm: &DeterministicField| data_gradient(&spec, gm);
        // l2 over channels k of ∂_a g^k for one axis a.
        let axis_norm = |grad: &DeterministicField, a: usize, k_count: usize| -> Vec<f64> {
            let n = grid.spatial_len();
            let mut v = vec![0.0; n_nodes];
            for t in 0..grid.slices() {
                for k in 0..k_count {
                    for (o, x) in v[t * n..(t + 1) * n]
                        .iter_mut()
                        .zip(grad.slice(t, k * d + a))
                    {
                        *o += x * x;
                    }
                }
            }
            v.into_iter().map(f64::sqrt).collect()
        };
        match mode {
            MaxregMode::Full => {
                out.extend_from_slice(s.u.data());
                for k in 0..pairs.len() {
                    for t in 0..grid.slices() {
                        out.extend_from_slice(s.u_xx.slice(t, k));
                    }
                }
                out.extend(node_values(&fm));
                let g0 = gm();
                out.extend(node_values(&g0));
                let grad = gx(&g0);
                for a in 0..d {
                    out.extend(axis_norm(&grad, a, g0.channels()));
                }
            }
            MaxregMode::SecondDerivs => {
                out.extend_from_slice(s.hessian_norm().data());
                out.extend(node_values(&fm));
                out.extend(node_values(&gx(&gm())));
            }
            MaxregMode::DetOnly => {
                out.extend_from_slice(s.hessian_norm().data());
                out.extend(node_values(&fm));
            }
            MaxregMode::MomentSobolev => {
                out.extend_from_slice(s.u.data());
                out.extend(node_values(&fm));
                let g0 = gm();
                out.extend(node_values(&g0));
                let grad = gx(&g0);
                for a in 0..d {
                    out.extend(axis_norm(&grad, a, g0.channels()));
                }
            }
        }
        out
    };
    let total_nodes = block_count * n_nodes;
    let all_shared = u.is_shared() && f.as_shared().is_some() && g.as_shared().is_some();
    let moments = if all_shared {
        constant_moments(&eval(0), u.members(), &exponents)
    } else {
        moments_from(u.members(), total_nodes, &exponents, eval)
    };
    let weights = node_weights(&grid);
    Ok(exponent_pairs.iter().map(|&(p, r)| {
    let e = moments.exponent_index(r).expect("exponent was collected");
    let block_norm = |means: &[f64], b: usize| -> f64 {
        crate::geometry::mixed_from_means(&means[b * n_nodes..(b + 1) * n_nodes], &weights, p, r)
    };
    let sides = |means: &[f64]| -> (f64, f64) {
        match mode {
            MaxregMode::Full => {
                let lhs: f64 = (0..=pairs.len()).map(|b| block_norm(means, b)).sum();
                let rhs: f64 = (pairs.len() + 1..block_count).map(|b| block_norm(means, b)).sum();
                (lhs, rhs)
            }
            MaxregMode::SecondDerivs => (block_norm(means, 0), block_norm(means, 1) + block_norm(means, 2)),
            MaxregMode::DetOnly => (block_norm(means, 0), block_norm(means, 1)),
            MaxregMode::MomentSobolev => {
                let m = to_field(grid, means[..n_nodes].to_vec());
                let (mt, mxx) = moment_derivatives(&m);
                let q = p / r;
                let integral = |h: &DeterministicField| -> f64 {
                    h.data().iter().zip(&weights).map(|(v, w)| w * v.abs().powf(q)).sum()
                };
                let lhs = integral(&m) + integral(&mt) + integral(&mxx);
                let h1: f64 = (2..block_count).map(|b| block_norm(means, b)).sum();
                (lhs, block_norm(means, 1).powf(p) + h1.powf(p))
            }
        }
    };
    let ratio_of = |(lhs, rhs): (f64, f64)| {
        if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let (lhs, rhs) = sides(&moments.mean(e));
    let (ratio, se) = moments.estimate(|mean| ratio_of(sides(&mean(e))));
    debug_assert!(ratio == ratio_of((lhs, rhs)) || ratio.is_nan());
    let mut report = VerificationReport::new(format!("maxreg_{}", mode.label()), ratio, Check::Finite)
        .with_bound(match mode {
            MaxregMode::Full => "||u||_{H^2_{p,r}} <= N (||f||_{L_{p,r}} + ||g||_{H^1_{p,r}(l2)})",
            MaxregMode::SecondDerivs => "||u_xx||_{L_{p,r}} <= N (||f||_{L_{p,r}} + ||g_x||_{L_{p,r}})",
            MaxregMode::DetOnly => "||u_xx||_{L_{p,r}} <= N ||f||_{L_{p,r}}",
            MaxregMode::MomentSobolev => {
                "int |m^r|^(p/r) + |m^r_t|^(p/r) + |m^r_xx|^(p/r) <= N (||f||^p_{L_{p,r}} + ||g||^p_{H^1_{p,r}})"
            }
        })
        .with_detail("p", p)
        .with_detail("r", r)
        .with_detail("lhs", lhs)
        .with_detail("rhs", rhs)
        .with_detail("nx", grid.nx() as f64)
        .with_detail("nt", grid.nt() as f64)
        .with_detail("members", u.members() as f64);
    if mode == MaxregMode::MomentSobolev {
        report = report.with_detail("fd_order", 2.0);
    }
    if let Some(se) = se {
        report = report.with_std_error(se);
    }
    report
    }).collect())
}

/// ‖𝒢_r[f]‖_{L_p} / ‖f‖_{𝔹L_{p,r}} in one pass over members.
pub fn script_g_ratio(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    p: f64,
    r: f64,
) -> Result<VerificationReport> {
    Ok(script_g_ratios(paths, f, &[(p, r)])?.remove(0))
}

/// `script_g_ratio` for several (p, r) pairs.
pub fn script_g_ratios(
    paths: &CoefficientEnsemble,
    f: &RandomField,
    pairs: &[(f64, f64)],
) -> Result<Vec<VerificationReport>> {
    for &(p, r) in pairs {
        require(
            r >= 1.0 && p >= 1.0 && p.is_finite() && r.is_finite(),
            format!("need p, r >= 1 (p = {p}, r = {r})"),
        )?;
    }
    let exponents = distinct_exponents(pairs);
    let u = det_convolve(paths, f)?;
    let grid = *f.grid();
    let n_nodes = grid.slices() * grid.spatial_len();
    let eval = |m: usize| {
        let mut v = u.member(m).hessian_norm().data().to_vec();
        v.extend(node_values(&f.member(m)));
        v
    };
    let moments = if u.is_shared() && f.as_shared().is_some() {
        constant_moments(&eval(0), f.members(), &exponents)
    } else {
        moments_from(f.members(), 2 * n_nodes, &exponents, eval)
    };
    pairs
        .iter()
        .map(|&(p, r)| operator_ratio_report("script_G_ratio", &grid, &moments, n_nodes, p, r))
        .collect()
}

/// ‖𝔊_r[g]‖_{L_p} / ‖g‖_{𝔹L_{p,r}} in one pass over members.
pub fn frak_g_ratio(
    paths: &CoefficientEnsemble,
    g: &RandomField,
    p: f64,
    r: f64,
) -> Result<VerificationReport> {
    Ok(frak_g_ratios(paths, g, &[(p, r)])?.remove(0))
}

/// `frak_g_ratio` for several (p, r) pairs.
pub fn frak_g_ratios(
    paths: &CoefficientEnsemble,
    g: &RandomField,
    pairs: &[(f64, f64)],
) -> Result<Vec<VerificationReport>> {
    for &(p, r) in pairs {
        require(
            r >= 2.0 && p >= 1.0 && p.is_finite() && r.is_finite(),
            format!("need r >= 2, p >= 1 (p = {p}, r = {r})"),
        )?;
    }
    let exponents = distinct_exponents(pairs);
    let sq = square_functions(paths, g, DerivativeRoute::Kernel)?;
    let grid = *g.grid();
    let n_nodes = grid.slices() * grid.spatial_len();
    let eval = |m: usize| {
        let gm = g.member(m);
        let mut v = square_function(&sq.spec, &grid, &sq.decays, &gm, sq.route);
        v.extend(node_values(&gm));
        v
    };
    let moments = if g.as_shared().is_some() {
        constant_moments(&eval(0), g.members(), &exponents)
    } else {
        moments_from(g.members(), 2 * n_nodes, &exponents, eval)
    };
    pairs
        .iter()
        .map(|&(p, r)| operator_ratio_report("frak_G_ratio", &grid, &moments, n_nodes, p, r))
        .collect()
}

/// Inner exponents of `pairs` in first-seen order.
fn distinct_exponents(pairs: &[(f64, f64)]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for &(_, r) in pairs {
        if !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

fn operator_ratio_report(
    name: &str,
    grid: &SpaceTimeGrid,
    moments: &NodeMoments,
    n_nodes: usize,
    p: f64,
    r: f64,
) -> Result<VerificationReport> {
    let e = moments
        .exponent_index(r)
        .ok_or_else(|| Error::invalid(format!("no moments for r = {r}")))?;
    let weights = node_weights(grid);
    let sides = |means: &[f64]| {
        (
            crate::geometry::mixed_from_means(&means[..n_nodes], &weights, p, r),
            crate::geometry::mixed_from_means(&means[n_nodes..], &weights, p, r),
        )
    };
    let ratio_of = |(lhs, rhs): (f64, f64)| {
        if rhs > 0.0 {
            lhs / rhs
        } else if lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let (lhs, rhs) = sides(&moments.mean(e));
    let (ratio, se) = moments.estimate(|mean| ratio_of(sides(&mean(e))));
    let mut report = VerificationReport::new(name, ratio, Check::Finite)
        .with_bound("||Op[f]||_{L_p} <= N ||f||_{L_{p,r}}")
        .with_detail("p", p)
        .with_detail("r", r)
        .with_detail("lhs", lhs)
        .with_detail("rhs", rhs)
        .with_detail("nx", grid.nx() as f64)
        .with_detail("nt", grid.nt() as f64)
        .with_detail("members", moments.members as f64);
    if let Some(se) = se {
        report = report.with_std_error(se);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{CoefficientPath, SymMatrix};
    use crate::solvers::stoch_convolve;

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 4.0, 32, 0.5, 16).unwrap()
    }

    fn heat(g: &SpaceTimeGrid, members: usize) -> CoefficientEnsemble {
        CoefficientEnsemble::deterministic(
            CoefficientPath::constant(SymMatrix::identity(g.dim()), g.horizon()).unwrap(),
            members,
        )
    }

    fn bump(g: SpaceTimeGrid, members: usize) -> RandomField {
        RandomField::shared(
            DeterministicField::from_fn(g, 1, |t, _, x| {
                if x[0].abs() < 2.0 {
                    (1.0 + t) * (4.0 - x[0] * x[0]).powi(3) / 64.0
                } else {
                    0.0
                }
            }),
            members,
        )
    }

    #[test]
    fn script_g_zero_and_deterministic() {
        let g = grid();
        assert_eq!(
            script_g(&heat(&g, 3), &RandomField::zeros(g, 1, 3), 2.0)
                .unwrap()
                .max_abs(),
            0.0
        );
        let f = bump(g, 1);
        let u = det_convolve(&heat(&g, 1), &f).unwrap();
        let direct = u.member(0).hessian_norm();
        for r in [1.0, 2.0, 5.0] {
            let s = script_g(&heat(&g, 1), &f, r).unwrap();
            for (a, b) in s.data().iter().zip(direct.data()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn script_g_routes_agree() {
        let g = grid();
        let f = bump(g, 1);
        let a = script_g(&heat(&g, 1), &f, 2.0).unwrap();
        let b = script_g_via_data(&heat(&g, 1), &f, 2.0).unwrap();
        let diff = a.axpy(-1.0, &b).unwrap().max_abs();
        assert!(diff < 1e-10 * a.max_abs(), "{diff}");
    }

    #[test]
    fn pair_difference_basics() {
        let g = grid();
        let f = bump(g, 1);
        let paths = heat(&g, 1);
        let p = NodeIndex::new(8, 14);
        let q = NodeIndex::new(12, 18);
        let same = pair_difference(
            PairInputs::SecondDerivatives {
                paths: &paths,
                f: &f,
            },
            2.0,
            p,
            p,
        )
        .unwrap();
        assert_eq!(same, 0.0);
        let d = pair_difference(
            PairInputs::SecondDerivatives {
                paths: &paths,
                f: &f,
            },
            2.0,
            p,
            q,
        )
        .unwrap();
        let s = script_g(&paths, &f, 2.0).unwrap();
        assert!(d <= s.data()[p.flat(&g)] + s.data()[q.flat(&g)] + 1e-14);
        let outside = NodeIndex::new(99, 0);
        assert!(pair_difference(
            PairInputs::SecondDerivatives {
                paths: &paths,
                f: &f
            },
            2.0,
            p,
            outside
        )
        .is_err());
        let bg = pair_difference(
            PairInputs::FirstDerivativeSquare {
                paths: &paths,
                g: &f,
            },
            2.0,
            p,
            p,
        )
        .unwrap();
        assert_eq!(bg, 0.0);
    }

    #[test]
    fn frak_g_unit_noise_vanishes() {
        let g = grid();
        let one = RandomField::shared(DeterministicField::from_fn(g, 1, |_, _, _| 1.0), 4)
            .with_periodic(true);
        let v = frak_g(&heat(&g, 4), &one, 2.0, DerivativeRoute::Kernel).unwrap();
        assert!(v.max_abs() < 1e-14);
        let zero = RandomField::zeros(g, 2, 4);
        assert_eq!(
            frak_g(&heat(&g, 4), &zero, 4.0, DerivativeRoute::Data)
                .unwrap()
                .max_abs(),
            0.0
        );
    }

    #[test]
    fn frak_g_routes_agree_and_match_isometry() {
        let g = grid();
        let members = 600;
        let noise = bump(g, members);
        let paths = heat(&g, members);
        let a = frak_g(&paths, &noise, 2.0, DerivativeRoute::Kernel).unwrap();
        let b = frak_g(&paths, &noise, 2.0, DerivativeRoute::Data).unwrap();
        assert!(a.axpy(-1.0, &b).unwrap().max_abs() < 1e-12 * a.max_abs());
        let w = WienerEnsemble::generate(members, 1, g.nt(), g.horizon(), 17).unwrap();
        let u = stoch_convolve(&paths, &noise, &w).unwrap();
        let node = NodeIndex::new(12, 13);
        let samples: Vec<f64> = (0..members)
            .map(|m| u.member(m).u_x.slice(node.slice, 0)[node.node].powi(2))
            .collect();
        let (mc, se) = mean_and_se(&samples);
        let exact = a.data()[node.flat(&g)].powi(2);
        assert!((mc - exact).abs() < 3.0 * se, "{mc} vs {exact} (se {se})");
    }

    #[test]
    fn moment_field_gaussian_moments() {
        use rand_distr::{Distribution, StandardNormal};
        let g = SpaceTimeGrid::new(1, 1.0, 8, 1.0, 8).unwrap();
        let members = 4000;
        let v = 0.7f64;
        let field = RandomField::generated(g, 1, members, Some(3), move |m| {
            let mut rng = crate::wiener::stream_rng(3, m as u64 + 1);
            let z: f64 = StandardNormal.sample(&mut rng);
            DeterministicField::from_fn(g, 1, |_, _, _| v.sqrt() * z)
        });
        let m2 = moment_field_of(&field, 2.0).unwrap();
        let m4 = moment_field_of(&field, 4.0).unwrap();
        assert!((m2.m.data()[5] - v).abs() < 3.0 * m2.std_error.data()[5]);
        assert!((m4.m.data()[5] - 3.0 * v * v).abs() < 3.0 * m4.std_error.data()[5]);
        let det = DeterministicField::from_fn(g, 1, |t, _, x| t - x[0]);
        let m = moment_field_of(&RandomField::shared(det.clone(), 1), 3.0).unwrap();
        for (a, b) in m.m.data().iter().zip(det.data()) {
            assert_eq!(*a, abs_pow(*b, 3.0));
        }
    }

    #[test]
    fn level_split_invariants() {
        let g = grid();
        let f = RandomField::generated(g, 1, 5, None, move |m| {
            DeterministicField::from_fn(g, 1, move |t, _, x| {
                (m as f64 + 1.0) * (t - x[0].abs()).max(0.0)
            })
        });
        let norm = ensemble_norm(&f, 2.0);
        for lambda in [0.0, 0.2, norm.max_abs() + 1.0] {
            let s = level_split(&f, lambda, 2.0).unwrap();
            for m in 0..5 {
                let sum = s.f1.member(m).axpy(1.0, &s.f2.member(m)).unwrap();
                assert_eq!(sum, *f.member(m));
            }
            assert!(ensemble_norm(&s.f2, 2.0).max_abs() <= lambda);
            if lambda > norm.max_abs() {
                assert_eq!(s.f1.member(2).max_abs(), 0.0);
            }
        }
        assert!(level_split(&f, -1.0, 2.0).is_err());
    }

    #[test]
    fn maxreg_zero_data_and_preconditions() {
        let g = grid();
        let paths = heat(&g, 2);
        let zero = RandomField::zeros(g, 1, 2);
        let u = det_convolve(&paths, &zero).unwrap();
        for mode in [
            MaxregMode::Full,
            MaxregMode::SecondDerivs,
            MaxregMode::DetOnly,
            MaxregMode::MomentSobolev,
        ] {
            let rep = maxreg_ratio(&u, &zero, &zero, 2.0, 2.0, mode).unwrap();
            assert_eq!(rep.observed, 0.0);
            assert!(rep.passed());
        }
        let err = maxreg_ratio(&u, &zero, &zero, 2.0, 3.0, MaxregMode::Full).unwrap_err();
        assert!(err.to_string().contains("2 ≤ r ≤ p"));
        assert!(maxreg_ratio(&u, &zero, &zero, 2.0, 1.5, MaxregMode::DetOnly).is_ok());
        assert!(maxreg_ratio(&u, &zero, &zero, 2.0, 1.0, MaxregMode::DetOnly).is_err());
        let nonzero = bump(g, 2);
        let w = det_convolve(&paths, &nonzero).unwrap();
        let fail = maxreg_ratio(&w, &zero, &zero, 2.0, 2.0, MaxregMode::DetOnly).unwrap();
        assert!(!fail.passed());
    }

    #[test]
    fn domination_scaling_invariance() {
        let g = grid();
        let paths = heat(&g, 1);
        let f2 = bump(g, 1);
        let zero = RandomField::zeros(g, 1, 1);
        let probes = vec![NodeIndex::new(8, 16), NodeIndex::new(10, 12)];
        let radii = crate::geometry::dyadic_radii(&g);
        let a = sharp_domination_check(
            &paths,
            &zero,
            &f2,
            2.0,
            &probes,
            &radii,
            CenterStride::Adaptive,
        )
        .unwrap();
        let b = sharp_domination_check(
            &paths,
            &zero,
            &f2.scaled(3.5),
            2.0,
            &probes,
            &radii,
            CenterStride::Adaptive,
        )
        .unwrap();
        assert!(a.passed());
        assert!((a.observed - b.observed).abs() <= 1e-10 * a.observed.max(1e-300));
        let c = sharp_domination_check(
            &paths,
            &f2,
            &zero,
            2.0,
            &probes,
            &radii,
            CenterStride::Adaptive,
        )
        .unwrap();
        assert_eq!(c.observed, 0.0);
    }
}
