//! Outer-region kernel integrals
//!
//! ```text
//! ∫_ρ [ ∫_{|ρ−t0|^{1/2} + |z−x0| ≥ 8c} |D^γp(t,ρ,x−z) − D^γp(s,ρ,y−z)| dz ]^r dρ,   r|γ| = 2,
//! ```
//!
//! and their uniformity over dyadic radii, centers, point pairs and paths.
//! One space dimension. In space the integrand is a signed combination of
//! Hermite–Gaussians with closed-form primitives, so the z-integral is exact
//! between located sign changes. In time, Gauss–Legendre panels grow
//! geometrically away from max(t, s), with the kinks of the integrand
//! (s, t, the region switch |ρ − t0| = (8c)², path breakpoints) as panel edges.

use std::f64::consts::PI;

use gauss_quad::legendre::GaussLegendre;
use rand::Rng;

use crate::coefficients::{CoefficientEnsemble, CoefficientPath};
use crate::error::{Error, Result};
use crate::geometry::Cylinder;
use crate::kernel::MultiIndex;
use crate::parallel::ordered_map;
use crate::report::{Check, VerificationReport};
use crate::wiener::stream_rng;

/// Beyond this many widths a Hermite–Gaussian of order ≤ 5 has no sign
/// change and is below e^{-72} of its peak.
const WINDOW_WIDTHS: f64 = 12.0;
/// Largest |zero| of He_k for k ≤ 5 is below this.
const HERMITE_ZERO_BOUND: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HormanderQuery {
    pub gamma: MultiIndex,
    pub r: f64,
    pub cylinder: Cylinder,
    /// (t, x)
    pub first: (f64, Vec<f64>),
    /// (s, y)
    pub second: (f64, Vec<f64>),
    /// Spatial truncation radius around x0; default 8c + 12 sqrt(K T_out).
    pub r_out: Option<f64>,
    /// Time window [t0 − T_out, ·); default (8c)² · 64.
    pub t_out: Option<f64>,
    /// Radius factor of the excluded region (default 8).
    pub exclusion: f64,
}

impl HormanderQuery {
    pub fn new(
        gamma: MultiIndex,
        r: f64,
        cylinder: Cylinder,
        first: (f64, Vec<f64>),
        second: (f64, Vec<f64>),
    ) -> Result<Self> {
        if !(r >= 1.0 && r.is_finite()) || (r * gamma.order() as f64 - 2.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "the outer-region integral needs r >= 1 and r|gamma| = 2 (r = {r}, |gamma| = {})",
                gamma.order()
            )));
        }
        if gamma.components().len() != 1 || cylinder.x0.len() != 1 {
            return Err(Error::Unsupported(
                "outer-region integrals are implemented in one space dimension".into(),
            ));
        }
        for (label, (t, x)) in [("(t, x)", &first), ("(s, y)", &second)] {
            if x.len() != 1 || !cylinder.contains(*t, x) {
                return Err(Error::Domain(format!(
                    "{label} = ({t}, {x:?}) is not inside the cylinder Q_c"
                )));
            }
        }
        Ok(Self {
            gamma,
            r,
            cylinder,
            first,
            second,
            r_out: None,
            t_out: None,
            exclusion: 8.0,
        })
    }

    pub fn with_truncation(mut self, r_out: Option<f64>, t_out: Option<f64>) -> Self {
        self.r_out = r_out;
        self.t_out = t_out;
        self
    }

    pub fn with_exclusion(mut self, factor: f64) -> Self {
        self.exclusion = factor;
        self
    }

    fn order(&self) -> usize {
        self.gamma.order()
    }
}

#[derive(Clone, Debug)]
pub struct Resolution {
    pub gl_order: usize,
    /// Ratio of successive time-panel lengths.
    pub panel_ratio: f64,
    /// Spatial samples per kernel width when locating sign changes.
    pub samples_per_width: usize,
    pub max_escalations: usize,
    /// Escalate the truncation while tail > tail_fraction · value.
    pub tail_fraction: f64,
}

impl Default for Resolution {
    fn default() -> Self {
        Self {
            gl_order: 10,
            panel_ratio: 2.0,
            samples_per_width: 8,
            max_escalations: 6,
            tail_fraction: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OuterIntegral {
    pub value: f64,
    /// Bound on the part of the integral cut off by the truncation.
    pub tail_bound: f64,
    pub r_out: f64,
    pub t_out: f64,
    pub escalations: usize,
}

/// He_k(u), probabilists' Hermite polynomial.
pub fn hermite(k: usize, u: f64) -> f64 {
    let (mut a, mut b) = (1.0, u);
    if k == 0 {
        return a;
    }
    for n in 1..k {
        let next = u * b - n as f64 * a;
        a = b;
        b = next;
    }
    b
}

fn std_normal(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// ∂_w^k of the Gaussian density with standard deviation σ, at w.
fn gauss_derivative(k: usize, sigma: f64, w: f64) -> f64 {
    let u = w / sigma;
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * hermite(k, u) * std_normal(u) / sigma.powi(k as i32 + 1)
}

/// ∫ |He_k(u)| φ(u) du over the line.
pub fn hermite_l1(k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    // d/du (He_{k−1} φ) = −He_k φ, so the integral between consecutive
    // zeros of He_k is a difference of He_{k−1} φ.
    let prim = |u: f64| hermite(k - 1, u) * std_normal(u);
    let zeros = sign_changes(
        |u| hermite(k, u),
        &linspace(-HERMITE_ZERO_BOUND - 1.0, HERMITE_ZERO_BOUND + 1.0, 4001),
    );
    let mut edges = vec![f64::NEG_INFINITY];
    edges.extend(zeros);
    edges.push(f64::INFINITY);
    let at = |u: f64| if u.is_infinite() { 0.0 } else { prim(u) };
    edges.windows(2).map(|w| (at(w[0]) - at(w[1])).abs()).sum()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Roots of `f` bracketed by consecutive sign changes over `samples`.
fn sign_changes(f: impl Fn(f64) -> f64, samples: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut prev = (samples[0], f(samples[0]));
    for &x in &samples[1..] {
        let v = f(x);
        if v == 0.0 {
            out.push(x);
        } else if prev.1 != 0.0 && (v > 0.0) != (prev.1 > 0.0) {
            let (mut lo, mut hi, mut flo) = (prev.0, x, prev.1);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid);
                if (fm > 0.0) == (flo > 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * (lo.abs() + hi.abs()) {
                    break;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = (x, v);
    }
    out
}

/// One signed Hermite–Gaussian term σ-scaled around `center`.
#[derive(Clone, Copy, Debug)]
struct Term {
    sign: f64,
    center: f64,
    sigma: f64,
}

struct Inner<'a> {
    k: usize,
    terms: &'a [Term],
    samples_per_width: usize,
}

impl Inner<'_> {
    fn value(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.sign * gauss_derivative(self.k, t.sigma, t.center - z))
            .sum()
    }

    fn primitive(&self, z: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| -t.sign * gauss_derivative(self.k - 1, t.sigma, t.center - z))
            .sum()
    }

    fn samples(&self, a: f64, b: f64) -> Vec<f64> {
        let mut pts = vec![a, b];
        for t in self.terms {
            let lo = (t.center - WINDOW_WIDTHS * t.sigma).max(a);
            let hi = (t.center + WINDOW_WIDTHS * t.sigma).min(b);
            if lo >= hi {
                continue;
            }
            let n = ((hi - lo) / t.sigma * self.samples_per_width as f64).ceil() as usize + 1;
            pts.extend(linspace(lo, hi, n.max(2)));
        }
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts
    }

    /// ∫_a^b |F| exactly up to root location.
    fn abs_integral(&self, a: f64, b: f64) -> f64 {
        if a >= b || self.terms.is_empty() {
            return 0.0;
        }
        let pts = self.samples(a, b);
        let mut edges = vec![a];
        edges.extend(sign_changes(|z| self.value(z), &pts));
        edges.push(b);
        edges
            .windows(2)
            .map(|w| (self.primitive(w[1]) - self.primitive(w[0])).abs())
            .sum()
    }

    /// ∫_a^b max over term groups of |F_group| by composite Simpson on the
    /// union of sample points, thinned to the finest kernel spacing.
    fn sup_integral(groups: &[Inner<'_>], a: f64, b: f64) -> f64 {
        if a >= b {
            return 0.0;
        }
        let spacing = groups
            .iter()
            .flat_map(|g| {
                g.terms
                    .iter()
                    .map(move |t| t.sigma / g.samples_per_width as f64)
            })
            .fold(f64::INFINITY, f64::min);
        let mut pts: Vec<f64> = groups.iter().flat_map(|g| g.samples(a, b)).collect();
        pts.sort_by(f64::total_cmp);
        let mut thinned = vec![pts[0]];
        for &p in &pts[1..] {
            if p - thinned[thinned.len() - 1] >= 0.5 * spacing || p == b {
                thinned.push(p);
            }
        }
        thinned.dedup();
        let sup = |z: f64| groups.iter().map(|g| g.value(z).abs()).fold(0.0, f64::max);
        let mut left = sup(thinned[0]);
        let mut total = 0.0;
        for w in thinned.windows(2) {
            let right = sup(w[1]);
            total += (w[1] - w[0]) / 6.0 * (left + 4.0 * sup(0.5 * (w[0] + w[1])) + right);
            left = right;
        }
        total
    }

    /// Gaussian mass of |D^k p| beyond distance `gap` on both sides.
    fn spatial_tail(&self, gap: f64, l1: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let u = gap / t.sigma;
                let scale = t.sigma.powi(-(self.k as i32));
                if u > HERMITE_ZERO_BOUND {
                    2.0 * scale * (hermite(self.k - 1, u) * std_normal(u)).abs()
                } else {
                    scale * l1[self.k]
                }
            })
            .sum()
    }
}

/// Time-panel edges on (lo, hi): geometric in hi − ρ, plus kinks.
fn time_panels(lo: f64, hi: f64, kinks: &[f64], first: f64, ratio: f64) -> Vec<f64> {
    let mut edges = vec![lo, hi];
    let mut tau = first;
    while hi - tau > lo {
        edges.push(hi - tau);
        tau *= ratio;
    }
    edges.extend(kinks.iter().copied().filter(|k| *k > lo && *k < hi));
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * (1.0 + b.abs()));
    edges
}

/// Shared geometry of one query at one truncation.
struct Setup {
    k: usize,
    r: f64,
    t: f64,
    x: f64,
    s: f64,
    y: f64,
    t0: f64,
    x0: f64,
    excl: f64,
    r_out: f64,
    rho_lo: f64,
    rho_hi: f64,
}

impl Setup {
    fn new(q: &HormanderQuery, k_up: f64, t_out: f64) -> Self {
        let c = q.cylinder.c;
        let excl = q.exclusion * c;
        let r_out = q.r_out.unwrap_or(excl + 12.0 * (k_up * t_out).sqrt());
        let (t, s) = (q.first.0, q.second.0);
        Self {
            k: q.order(),
            r: q.r,
            t,
            x: q.first.1[0],
            s,
            y: q.second.1[0],
            t0: q.cylinder.t0,
            x0: q.cylinder.x0[0],
            excl,
            r_out,
            rho_lo: q.cylinder.t0 - t_out,
            rho_hi: t.max(s),
        }
    }

    fn terms(&self, path: &CoefficientPath, rho: f64) -> Vec<Term> {
        let mut out = Vec::with_capacity(2);
        for (sign, time, center) in [(1.0, self.t, self.x), (-1.0, self.s, self.y)] {
            if rho < time {
                let a = path.integral(rho, time).get(0, 0);
                out.push(Term {
                    sign,
                    center,
                    sigma: (2.0 * a).sqrt(),
                });
            }
        }
        // Identical points cancel exactly.
        if out.len() == 2 && out[0].center == out[1].center && out[0].sigma == out[1].sigma {
            out.clear();
        }
        out
    }

    /// Region pieces in z at time ρ: |z − x0| ∈ [ℓ, R_out].
    fn pieces(&self, rho: f64) -> Vec<(f64, f64)> {
        let ell = (self.excl - (rho - self.t0).abs().sqrt()).max(0.0);
        if ell >= self.r_out {
            return Vec::new();
        }
        if ell == 0.0 {
            vec![(self.x0 - self.r_out, self.x0 + self.r_out)]
        } else {
            vec![
                (self.x0 - self.r_out, self.x0 - ell),
                (self.x0 + ell, self.x0 + self.r_out),
            ]
        }
    }

    /// |ρ − t0|^{1/2} + |z − x0| ≥ exclusion · c, up to rounding.
    fn in_region(&self, rho: f64, z: f64) -> bool {
        (rho - self.t0).abs().sqrt() + (z - self.x0).abs() >= self.excl * (1.0 - 1e-12)
    }

    fn gap(&self) -> f64 {
        self.r_out - (self.x - self.x0).abs().max((self.y - self.x0).abs())
    }

    fn panels(&self, paths: &[&CoefficientPath], c: f64, ratio: f64) -> Vec<f64> {
        let mut kinks = vec![
            self.s,
            self.t,
            self.t0 - self.excl * self.excl,
            self.t0 + self.excl * self.excl,
        ];
        for p in paths {
            kinks.extend_from_slice(p.breakpoints());
        }
        time_panels(self.rho_lo, self.rho_hi, &kinks, c * c / 256.0, ratio)
    }

    /// Truncated-time tail from the L1 bounds of the kernel derivatives over
    /// ρ < t0 − T_out.
    fn time_tail(&self, kappa: f64, k_up: f64, l1: &[f64]) -> f64 {
        let k = self.k as i32;
        let r = self.r;
        let tau = self.t.min(self.s) - self.rho_lo;
        let a1 = r * (k as f64 + 2.0) / 2.0;
        let a2 = r * (k as f64 + 1.0) / 2.0;
        let time_part = (self.t - self.s).abs()
            * k_up
            * l1[self.k + 2]
            * (2.0 * kappa).powf(-(k as f64 + 2.0) / 2.0);
        let space_part =
            (self.x - self.y).abs() * l1[self.k + 1] * (2.0 * kappa).powf(-(k as f64 + 1.0) / 2.0);
        2f64.powf(r - 1.0)
            * (time_part.powf(r) * tau.powf(1.0 - a1) / (a1 - 1.0)
                + space_part.powf(r) * tau.powf(1.0 - a2) / (a2 - 1.0))
    }
}

fn l1_table() -> Vec<f64> {
    (0..=6).map(hermite_l1).collect()
}

/// The outer-region integral for one deterministic path, escalating the
/// truncation until the tail bound is below `tail_fraction` of the value.
pub fn outer_region_integral(
    path: &CoefficientPath,
    q: &HormanderQuery,
    res: &Resolution,
) -> Result<OuterIntegral> {
    outer_region_integral_sup(&[path], q, res)
}

/// Like [`outer_region_integral`] with sup over `paths` inside the z-integral.
/// With one path this is exactly the single-path integral; otherwise it is
/// never reported below the largest single-path value, which it dominates.
pub fn outer_region_integral_sup(
    paths: &[&CoefficientPath],
    q: &HormanderQuery,
    res: &Resolution,
) -> Result<OuterIntegral> {
    if paths.is_empty() {
        return Err(Error::invalid("need at least one coefficient path"));
    }
    if paths.iter().any(|p| p.dim() != 1) {
        return Err(Error::Unsupported(
            "outer-region integrals are implemented in one space dimension".into(),
        ));
    }
    if !(res.gl_order >= 2 && res.panel_ratio > 1.0 && res.samples_per_width >= 2) {
        return Err(Error::invalid(
            "quadrature resolution parameters must be positive",
        ));
    }
    let kappa = paths
        .iter()
        .map(|p| p.floor())
        .fold(f64::INFINITY, f64::min);
    let k_up = paths.iter().map(|p| p.ceiling()).fold(0.0, f64::max);
    let c = q.cylinder.c;
    let mut t_out = q.t_out.unwrap_or((q.exclusion * c).powi(2) * 64.0);
    let rule = GaussLegendre::new(res.gl_order.try_into().expect("order >= 2"));
    let l1 = l1_table();
    let mut escalations = 0;
    loop {
        let setup = Setup::new(q, k_up, t_out);
        let (value, space_tail) = integrate(&setup, paths, &rule, res, &l1, c);
        let time_tail = setup.time_tail(kappa, k_up, &l1);
        let tail = space_tail + time_tail;
        let mut result = OuterIntegral {
            value,
            tail_bound: tail,
            r_out: setup.r_out,
            t_out,
            escalations,
        };
        // Half the budget, so reported tails sit clearly inside it.
        let done = value == 0.0 && tail == 0.0
            || tail <= 0.5 * res.tail_fraction * value
            || escalations >= res.max_escalations;
        if done {
            if paths.len() > 1 {
                // The sup-inside integral dominates every single-path one.
                for p in paths {
                    let single = integrate(&setup, &[*p], &rule, res, &l1, c).0;
                    result.value = result.value.max(single);
                }
            }
            return Ok(result);
        }
        // The value only grows with the window, so aim the analytic time
        // tail at half the budget against the current value.
        let target = 0.25 * res.tail_fraction * value;
        let mut next = t_out * 2.0;
        while Setup::new(q, k_up, next).time_tail(kappa, k_up, &l1) > target && next < t_out * 1e6 {
            next *= 2.0;
        }
        escalations += 1;
        t_out = next;
    }
}

/// (value, spatial-truncation tail) at one truncation.
fn integrate(
    setup: &Setup,
    paths: &[&CoefficientPath],
    rule: &GaussLegendre,
    res: &Resolution,
    l1: &[f64],
    c: f64,
) -> (f64, f64) {
    let edges = setup.panels(paths, c, res.panel_ratio);
    let gap = setup.gap();
    let nodes: Vec<(f64, f64)> = edges
        .windows(2)
        .flat_map(|w| {
            let (a, b) = (w[0], w[1]);
            rule.as_node_weight_pairs()
                .iter()
                .map(move |(x, wt)| (0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * wt))
                .collect::<Vec<_>>()
        })
        .collect();
    let (mut value, mut tail) = (0.0, 0.0);
    for (rho, w) in nodes {
        let term_sets: Vec<Vec<Term>> = paths.iter().map(|p| setup.terms(p, rho)).collect();
        let inners: Vec<Inner<'_>> = term_sets
            .iter()
            .map(|terms| Inner {
                k: setup.k,
                terms,
                samples_per_width: res.samples_per_width,
            })
            .collect();
        let pieces = setup.pieces(rho);
        debug_assert!(pieces
            .iter()
            .all(|(a, b)| setup.in_region(rho, *a) && setup.in_region(rho, *b)));
        let inner = if inners.len() == 1 {
            pieces
                .iter()
                .map(|(a, b)| inners[0].abs_integral(*a, *b))
                .sum::<f64>()
        } else {
            pieces
                .iter()
                .map(|(a, b)| Inner::sup_integral(&inners, *a, *b))
                .sum::<f64>()
        };
        let cut: f64 = inners.iter().map(|i| i.spatial_tail(gap, l1)).sum();
        let v = inner.powf(setup.r);
        value += w * v;
        tail += w * ((inner + cut).powf(setup.r) - v);
    }
    (value, tail)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HormanderMode {
    /// |γ| = 2, r = 1.
    DeterministicHxx,
    /// |γ| = 1, r = 2.
    StochasticHx,
}

impl HormanderMode {
    pub fn label(&self) -> &'static str {
        match self {
            HormanderMode::DeterministicHxx => "deterministic_hxx",
            HormanderMode::StochasticHx => "stochastic_hx",
        }
    }

    pub fn gamma_order(&self) -> usize {
        match self {
            HormanderMode::DeterministicHxx => 2,
            HormanderMode::StochasticHx => 1,
        }
    }

    pub fn exponent(&self) -> f64 {
        2.0 / self.gamma_order() as f64
    }
}

/// One CSV row: the sup over point pairs for one (c, center, path).
#[derive(Clone, Debug, PartialEq)]
pub struct HormanderRow {
    pub mode: HormanderMode,
    pub c: f64,
    pub center: usize,
    pub t0: f64,
    pub x0: f64,
    pub value: f64,
    pub tail_bound: f64,
    /// `None` for the sup-over-paths variant.
    pub path_id: Option<usize>,
}

pub fn rows_to_csv(rows: &[HormanderRow]) -> String {
    let mut out = String::from("mode,c,center,value,tail_bound,path_id\r\n");
    for r in rows {
        let id = r
            .path_id
            .map_or_else(|| "sup".to_string(), |i| i.to_string());
        out.push_str(&format!(
            "{},{:?},{},{:?},{:?},{}\r\n",
            r.mode.label(),
            r.c,
            r.center,
            r.value,
            r.tail_bound,
            id
        ));
    }
    out
}

#[derive(Clone, Debug)]
pub struct UniformitySettings {
    pub centers: usize,
    pub point_pairs: usize,
    pub omega_uniform: bool,
    pub seed: u64,
    /// Pass iff max_c sup / min_c sup is below this.
    pub factor: f64,
    /// Center times are drawn from [t_min, t_max].
    pub center_times: (f64, f64),
    pub resolution: Resolution,
}

impl Default for UniformitySettings {
    fn default() -> Self {
        Self {
            centers: 5,
            point_pairs: 10,
            omega_uniform: false,
            seed: 0,
            factor: 4.0,
            center_times: (0.25, 0.75),
            resolution: Resolution::default(),
        }
    }
}

pub struct UniformityReport {
    /// Variation of the sup across c.
    pub report: VerificationReport,
    /// Largest tail_bound / value.
    pub tail_report: VerificationReport,
    pub rows: Vec<HormanderRow>,
}

/// Points strictly inside Q_c(t0, x0), drawn per (c, center) stream.
fn sample_pairs(
    c: f64,
    t0: f64,
    x0: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<((f64, f64), (f64, f64))> {
    let shrink = 0.999;
    let draw = |rng: &mut dyn rand::RngCore| {
        let t = t0 + shrink * c * c * rng.gen_range(-1.0..1.0);
        let x = x0 + shrink * c * rng.gen_range(-1.0..1.0);
        (t, x)
    };
    (0..count).map(|_| (draw(rng), draw(rng))).collect()
}

/// Sup of the outer-region integral over sampled centers, point pairs and
/// paths (or, with `omega_uniform`, of the sup-inside integral), per radius.
pub fn hormander_uniformity_report(
    paths: &CoefficientEnsemble,
    mode: HormanderMode,
    c_grid: &[f64],
    settings: &UniformitySettings,
) -> Result<UniformityReport> {
    if c_grid.is_empty() {
        return Err(Error::invalid("c_grid must not be empty"));
    }
    if c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite()))
        || settings.centers == 0
        || settings.point_pairs == 0
    {
        return Err(Error::invalid(
            "radii must be positive and sample counts at least 1",
        ));
    }
    if paths.dim() != 1 {
        return Err(Error::Unsupported(
            "Hörmander reports are implemented in one space dimension".into(),
        ));
    }
    // Distinct paths only: a shared ensemble is one path.
    let distinct: Vec<&CoefficientPath> = match paths.deterministic_path() {
        Some(p) => vec![p],
        None => (0..paths.len()).map(|i| paths.path(i)).collect(),
    };
    let gamma = MultiIndex::axis(1, mode.gamma_order())?;
    // Jobs: (c index, center index) with their point pairs.
    let mut jobs = Vec::new();
    for (ci, &c) in c_grid.iter().enumerate() {
        let mut rng = stream_rng(settings.seed, 1 + ci as u64);
        for center in 0..settings.centers {
            let t0 = rng.gen_range(settings.center_times.0..=settings.center_times.1);
            let x0 = rng.gen_range(-1.0..=1.0);
            let pairs = sample_pairs(c, t0, x0, settings.point_pairs, &mut rng);
            jobs.push((ci, c, center, t0, x0, pairs));
        }
    }
    let path_sets: Vec<(Option<usize>, Vec<&CoefficientPath>)> = if settings.omega_uniform {
        vec![(None, distinct.clone())]
    } else {
        distinct
            .iter()
            .enumerate()
            .map(|(i, p)| (Some(i), vec![*p]))
            .collect()
    };
    let tasks: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..path_sets.len()).map(move |p| (j, p)))
        .collect();
    let results = ordered_map(tasks.len(), |i| -> Result<HormanderRow> {
        let (j, pi) = tasks[i];
        let (_, c, center, t0, x0, ref pairs) = jobs[j];
        let (path_id, ref set) = path_sets[pi];
        let cyl = Cylinder::new(t0, vec![x0], c)?;
        let (mut best, mut best_tail) = (0.0f64, 0.0f64);
        for ((t, x), (s, y)) in pairs {
            let q = HormanderQuery::new(
                gamma.clone(),
                mode.exponent(),
                cyl.clone(),
                (*t, vec![*x]),
                (*s, vec![*y]),
            )?;
            let v = outer_region_integral_sup(set, &q, &settings.resolution)?;
            if v.value > best || best == 0.0 {
                best = best.max(v.value);
                best_tail = v.tail_bound;
            }
        }
        Ok(HormanderRow {
            mode,
            c,
            center,
            t0,
            x0,
            value: best,
            tail_bound: best_tail,
            path_id,
        })
    });
    let rows: Vec<HormanderRow> = results.into_iter().collect::<Result<_>>()?;
    let per_c: Vec<(f64, f64)> = c_grid
        .iter()
        .map(|&c| {
            (
                c,
                rows.iter()
                    .filter(|r| r.c == c)
                    .map(|r| r.value)
                    .fold(0.0, f64::max),
            )
        })
        .collect();
    let hi = per_c.iter().map(|p| p.1).fold(0.0, f64::max);
    let lo = per_c.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let variation = if hi == 0.0 {
        1.0
    } else if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    };
    let worst_tail = rows
        .iter()
        .map(|r| {
            if r.value > 0.0 {
                r.tail_bound / r.value
            } else if r.tail_bound > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    let suffix = if settings.omega_uniform {
        "_omega_uniform"
    } else {
        ""
    };
    let bound = match mode {
        HormanderMode::DeterministicHxx => {
            "int_{outside Q_8c} |p_xx(t,rho,x-z) - p_xx(s,rho,y-z)| dz drho <= N"
        }
        HormanderMode::StochasticHx => {
            "int [int_{outside Q_8c} |p_x(t,rho,x-z) - p_x(s,rho,y-z)| dz]^2 drho <= N"
        }
    };
    let report = VerificationReport::new(
        format!("hormander_{}{suffix}", mode.label()),
        variation,
        Check::Below(settings.factor),
    )
    .with_bound(bound)
    .with_detail("sup_value", hi)
    .with_detail("min_sup_over_c", lo)
    .with_detail("centers", settings.centers as f64)
    .with_detail("point_pairs", settings.point_pairs as f64)
    .with_detail("paths", distinct.len() as f64)
    .with_series(per_c);
    let tail_report = VerificationReport::new(
        format!("hormander_{}{suffix}_tail", mode.label()),
        worst_tail,
        Check::Below(settings.resolution.tail_fraction),
    )
    .with_bound("truncation tail < 1% of value")
    .with_detail(
        "max_tail_bound",
        rows.iter().map(|r| r.tail_bound).fold(0.0, f64::max),
    );
    Ok(UniformityReport {
        report,
        tail_report,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::SymMatrix;
    use crate::kernel::{accumulate_covariance, kernel_derivative};

    fn heat() -> CoefficientPath {
        CoefficientPath::constant(SymMatrix::identity(1), 1.0).unwrap()
    }

    fn query(k: usize, c: f64, dt: f64, dx: f64) -> HormanderQuery {
        let cyl = Cylinder::new(1.0, vec![0.0], c).unwrap();
        HormanderQuery::new(
            MultiIndex::axis(1, k).unwrap(),
            2.0 / k as f64,
            cyl,
            (1.0 + dt, vec![dx]),
            (1.0 - dt, vec![-dx]),
        )
        .unwrap()
    }

    #[test]
    fn hermite_l1_known_values() {
        assert!((hermite_l1(1) - (2.0 / PI).sqrt()).abs() < 1e-14);
        // ∫|u²−1|φ = 4φ(1)
        assert!((hermite_l1(2) - 4.0 * std_normal(1.0)).abs() < 1e-14);
    }

    #[test]
    fn gaussian_derivatives_match_kernel_module() {
        let path = CoefficientPath::constant(SymMatrix::scaled_identity(1, 1.7), 1.0).unwrap();
        let cov = accumulate_covariance(&path, 0.2, 0.9).unwrap();
        let sigma = (2.0 * cov.a().get(0, 0)).sqrt();
        for k in 0..=4 {
            for w in [-1.3, 0.0, 0.4] {
                let a = gauss_derivative(k, sigma, w);
                let b =
                    kernel_derivative(&cov, &[w], &MultiIndex::axis(1, k).unwrap(), None).unwrap();
                assert!(
                    (a - b).abs() <= 1e-12 * b.abs().max(1e-12),
                    "k={k} w={w}: {a} vs {b}"
                );
            }
        }
    }

    /// Composite Simpson in log(t_max − ρ) and in z, on the same truncated
    /// window, with kernel values from the kernel module.
    fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn matches_independent_quadrature() {
        let (t_out, r_out) = (200.0, 30.0);
        let q = query(2, 1.0, 0.5, 0.5).with_truncation(Some(r_out), Some(t_out));
        let fixed = Resolution {
            max_escalations: 0,
            ..Resolution::default()
        };
        let fast = outer_region_integral(&heat(), &q, &fixed).unwrap();
        let path = heat();
        let gamma = MultiIndex::axis(1, 2).unwrap();
        let (t, x, s, y, t0) = (1.5, 0.5, 0.5, -0.5, 1.0);
        let kern = |time: f64, rho: f64, w: f64| -> f64 {
            if rho >= time {
                return 0.0;
            }
            let cov = accumulate_covariance(&path, rho, time).unwrap();
            kernel_derivative(&cov, &[w], &gamma, None).unwrap()
        };
        let inner = |rho: f64| -> f64 {
            let ell = (8.0 - (rho - t0).abs().sqrt()).max(0.0);
            let f = |z: f64| (kern(t, rho, x - z) - kern(s, rho, y - z)).abs();
            if ell == 0.0 {
                simpson(-r_out, r_out, 6000, f)
            } else {
                simpson(-r_out, -ell, 3000, f) + simpson(ell, r_out, 3000, f)
            }
        };
        // ρ = t − e^u, split at the kinks ρ = s and |ρ − t0| = 64.
        let seg =
            |lo: f64, hi: f64| simpson(lo.ln(), hi.ln(), 400, |u| inner(t - u.exp()) * u.exp());
        let oracle =
            seg(1e-6, t - s) + seg(t - s, t - t0 + 64.0) + seg(t - t0 + 64.0, t - t0 + t_out);
        let rel = (fast.value - oracle).abs() / oracle;
        assert!(rel < 1e-3, "{} vs {oracle} (rel {rel})", fast.value);
    }

    #[test]
    fn identical_points_give_zero() {
        let cyl = Cylinder::new(1.0, vec![0.0], 1.0).unwrap();
        let q = HormanderQuery::new(
            MultiIndex::axis(1, 2).unwrap(),
            1.0,
            cyl,
            (1.2, vec![0.1]),
            (1.2, vec![0.1]),
        )
        .unwrap();
        let v = outer_region_integral(&heat(), &q, &Resolution::default()).unwrap();
        assert_eq!(v.value, 0.0);
        assert_eq!(v.tail_bound, 0.0);
    }

    #[test]
    fn rejects_bad_queries() {
        let cyl = Cylinder::new(1.0, vec![0.0], 1.0).unwrap();
        let g2 = MultiIndex::axis(1, 2).unwrap();
        assert!(HormanderQuery::new(
            g2.clone(),
            2.0,
            cyl.clone(),
            (1.0, vec![0.0]),
            (1.0, vec![0.0])
        )
        .is_err());
        assert!(matches!(
            HormanderQuery::new(g2, 1.0, cyl, (2.5, vec![0.0]), (1.0, vec![0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn parabolic_scaling_invariance() {
        for k in [1, 2] {
            let a =
                outer_region_integral(&heat(), &query(k, 1.0, 0.5, 0.5), &Resolution::default())
                    .unwrap();
            let cyl = Cylinder::new(1.0, vec![0.0], 2.0).unwrap();
            let q = HormanderQuery::new(
                MultiIndex::axis(1, k).unwrap(),
                2.0 / k as f64,
                cyl,
                (3.0, vec![1.0]),
                (-1.0, vec![-1.0]),
            )
            .unwrap();
            let b = outer_region_integral(&heat(), &q, &Resolution::default()).unwrap();
            assert!(
                (a.value - b.value).abs() < 1e-6 * a.value,
                "k={k}: {} vs {}",
                a.value,
                b.value
            );
            assert!(a.tail_bound < 0.01 * a.value);
        }
    }

    #[test]
    fn larger_exclusion_never_increases() {
        let q = query(2, 1.0, 0.5, 0.5);
        let a = outer_region_integral(&heat(), &q, &Resolution::default()).unwrap();
        let b = outer_region_integral(
            &heat(),
            &q.clone().with_exclusion(16.0),
            &Resolution::default(),
        )
        .unwrap();
        assert!(b.value <= a.value);
    }

    #[test]
    fn sup_inside_dominates_and_reduces() {
        let q = query(2, 0.5, 0.2, 0.3);
        let res = Resolution::default();
        let p1 = heat();
        let p2 = CoefficientPath::new(
            vec![0.0, 0.9, 2.0],
            vec![SymMatrix::identity(1), SymMatrix::scaled_identity(1, 2.0)],
        )
        .unwrap();
        let single = outer_region_integral(&p1, &q, &res).unwrap();
        let one = outer_region_integral_sup(&[&p1], &q, &res).unwrap();
        assert_eq!(single, one);
        let both = outer_region_integral_sup(&[&p1, &p2], &q, &res).unwrap();
        let second = outer_region_integral(&p2, &q, &res).unwrap();
        assert!(both.value >= single.value && both.value >= second.value);
    }
}
