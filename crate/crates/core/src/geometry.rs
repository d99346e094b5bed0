//! Mixed and nested ensemble norms, parabolic cylinders, mean oscillation,
//! and the sharp and maximal functions over a dyadic cylinder family.
//!
//! Quadrature: the periodic rectangle rule in space (weight h^d) and the
//! trapezoid rule in time. Fields are extended by zero outside the grid, so
//! cylinder averages divide by the number of lattice points in the cylinder,
//! including those that fall outside.

use crate::error::{Error, Result};
use crate::field::{DeterministicField, RandomField};
use crate::grid::SpaceTimeGrid;
use crate::parallel::{ordered_fold, ordered_map};
use crate::report::{Check, VerificationReport};
use crate::stats::{abs_pow, node_moments, node_values, NodeMoments};

/// Relative slack that keeps lattice points on a cylinder boundary outside,
/// independently of rounding in their coordinates.
const BOUNDARY_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct MixedNormReport {
    pub value: f64,
    pub p: f64,
    pub r: f64,
    pub nx: usize,
    pub nt: usize,
    pub members: usize,
    /// Monte Carlo standard error of `value`, if estimable.
    pub std_error: Option<f64>,
}

fn check_exponents(p: f64, r: f64) -> Result<()> {
    if !(p >= 1.0 && r >= 1.0) || !p.is_finite() || !r.is_finite() {
        return Err(Error::invalid(format!(
            "exponents must be finite and >= 1 (p = {p}, r = {r})"
        )));
    }
    Ok(())
}

/// Quadrature weight of every (slice, node) pair, slice-major.
pub fn node_weights(grid: &SpaceTimeGrid) -> Vec<f64> {
    let n = grid.spatial_len();
    let hd = grid.cell_volume();
    (0..grid.slices())
        .flat_map(|i| std::iter::repeat_n(grid.time_weight(i) * hd, n))
        .collect()
}

/// (Σ w (mean_ω |u|^r)^{p/r})^{1/p} given per-node means of |u|^r.
pub fn mixed_from_means(means: &[f64], weights: &[f64], p: f64, r: f64) -> f64 {
    let q = p / r;
    let s: f64 = means.iter().zip(weights).map(|(m, w)| w * m.powf(q)).sum();
    s.powf(1.0 / p)
}

pub fn mixed_from_moments(
    moments: &NodeMoments,
    grid: &SpaceTimeGrid,
    p: f64,
    r: f64,
) -> Result<(f64, Option<f64>)> {
    let e = moments
        .exponent_index(r)
        .ok_or_else(|| Error::invalid(format!("moments lack exponent {r}")))?;
    let w = node_weights(grid);
    Ok(moments.estimate(|mean| mixed_from_means(&mean(e), &w, p, r)))
}

/// ‖u‖ with outer L_p over (t, x) and inner L_r over ω.
pub fn mixed_norm(u: &RandomField, p: f64, r: f64) -> Result<MixedNormReport> {
    check_exponents(p, r)?;
    if u.members() == 0 {
        return Err(Error::invalid("random field has no members"));
    }
    let moments = node_moments(u, &[r]);
    let (value, std_error) = mixed_from_moments(&moments, u.grid(), p, r)?;
    Ok(MixedNormReport {
        value,
        p,
        r,
        nx: u.grid().nx(),
        nt: u.grid().nt(),
        members: u.members(),
        std_error,
    })
}

/// (mean_ω (Σ w |u|^r)^{p/r})^{1/p}
pub fn nested_norm(u: &RandomField, p_outer: f64, r_inner: f64) -> Result<MixedNormReport> {
    check_exponents(p_outer, r_inner)?;
    if u.members() == 0 {
        return Err(Error::invalid("random field has no members"));
    }
    let w = node_weights(u.grid());
    let q = p_outer / r_inner;
    let per_member = |f: &DeterministicField| {
        let v = node_values(f);
        let s: f64 = v
            .iter()
            .zip(&w)
            .map(|(x, w)| w * abs_pow(*x, r_inner))
            .sum();
        s.powf(q)
    };
    let values: Vec<f64> = match u.as_shared() {
        Some(f) => vec![per_member(f); u.members()],
        None => ordered_map(u.members(), |i| per_member(&u.member(i))),
    };
    let (mean, se) = crate::stats::mean_and_se(&values);
    let value = mean.powf(1.0 / p_outer);
    let std_error = (values.len() >= 2 && mean > 0.0).then(|| value / (p_outer * mean) * se);
    Ok(MixedNormReport {
        value,
        p: p_outer,
        r: r_inner,
        nx: u.grid().nx(),
        nt: u.grid().nt(),
        members: u.members(),
        std_error,
    })
}

/// Q_c(t0, x0) = (t0 − c², t0 + c²) × B_c(x0), open.
#[derive(Clone, Debug, PartialEq)]
pub struct Cylinder {
    pub t0: f64,
    pub x0: Vec<f64>,
    pub c: f64,
}

impl Cylinder {
    pub fn new(t0: f64, x0: Vec<f64>, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("cylinder radius must be positive"));
        }
        Ok(Self { t0, x0, c })
    }

    /// |Q_c| = 2c² · vol(B_c)
    pub fn volume(&self) -> f64 {
        let d = self.x0.len() as f64;
        let ball = std::f64::consts::PI.powf(0.5 * d)
            / statrs::function::gamma::gamma(0.5 * d + 1.0)
            * self.c.powf(d);
        2.0 * self.c * self.c * ball
    }

    pub fn contains(&self, t: f64, x: &[f64]) -> bool {
        let c2 = self.c * self.c;
        let r2: f64 = x.iter().zip(&self.x0).map(|(a, b)| (a - b).powi(2)).sum();
        (t - self.t0).abs() < c2 * (1.0 - BOUNDARY_SLACK) && r2 < c2 * (1.0 - BOUNDARY_SLACK)
    }
}

/// Lattice points of a cylinder: in-grid (slice, node) pairs and the count of
/// all lattice points, inside the grid or not.
struct LatticeCover {
    inside: Vec<(usize, usize)>,
    total: usize,
}

fn lattice_cover(grid: &SpaceTimeGrid, q: &Cylinder) -> Result<LatticeCover> {
    if q.x0.len() != grid.dim() {
        return Err(Error::mismatch(
            "cylinder center dimension differs from grid",
        ));
    }
    let (dt, h, l) = (grid.dt(), grid.h(), grid.half_width());
    let c2 = q.c * q.c;
    let i_lo = ((q.t0 - c2) / dt).floor() as i64 - 1;
    let i_hi = ((q.t0 + c2) / dt).ceil() as i64 + 1;
    let times: Vec<i64> = (i_lo..=i_hi)
        .filter(|&i| ((i as f64) * dt - q.t0).abs() < c2 * (1.0 - BOUNDARY_SLACK))
        .collect();
    let ranges: Vec<(i64, i64)> =
        q.x0.iter()
            .map(|&x| {
                (
                    ((x - q.c + l) / h).floor() as i64 - 1,
                    ((x + q.c + l) / h).ceil() as i64 + 1,
                )
            })
            .collect();
    let mut spatial: Vec<(Vec<i64>, bool)> = Vec::new();
    let mut idx: Vec<i64> = ranges.iter().map(|r| r.0).collect();
    'odometer: loop {
        let r2: f64 = idx
            .iter()
            .zip(&q.x0)
            .map(|(&j, &x)| (-l + j as f64 * h - x).powi(2))
            .sum();
        if r2 < c2 * (1.0 - BOUNDARY_SLACK) {
            let in_grid = idx.iter().all(|&j| j >= 0 && (j as usize) < grid.nx());
            spatial.push((idx.clone(), in_grid));
        }
        let mut a = idx.len();
        loop {
            if a == 0 {
                break 'odometer;
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] <= ranges[a].1 {
                break;
            }
            idx[a] = ranges[a].0;
        }
    }
    let total = times.len() * spatial.len();
    let mut inside = Vec::new();
    for &i in &times {
        if i < 0 || i as usize > grid.nt() {
            continue;
        }
        for (s, ok) in &spatial {
            if *ok {
                let u: Vec<usize> = s.iter().map(|&j| j as usize).collect();
                inside.push((i as usize, grid.ravel(&u)));
            }
        }
    }
    Ok(LatticeCover { inside, total })
}

fn scalar_field(h: &DeterministicField) -> Result<&[f64]> {
    if h.channels() != 1 {
        return Err(Error::mismatch(
            "cylinder statistics need a one-channel field",
        ));
    }
    Ok(h.data())
}

/// Average of |h − h_Q| over lattice points of Q (zero outside the grid).
pub fn mean_oscillation(h: &DeterministicField, q: &Cylinder) -> Result<f64> {
    let data = scalar_field(h)?;
    let cover = lattice_cover(h.grid(), q)?;
    if cover.inside.is_empty() {
        return Err(Error::Domain("cylinder contains no grid node".into()));
    }
    let n = h.grid().spatial_len();
    let total = cover.total as f64;
    let mean = cover
        .inside
        .iter()
        .map(|&(i, j)| data[i * n + j])
        .sum::<f64>()
        / total;
    let dev: f64 = cover
        .inside
        .iter()
        .map(|&(i, j)| (data[i * n + j] - mean).abs())
        .sum::<f64>()
        + (cover.total - cover.inside.len()) as f64 * mean.abs();
    Ok(dev / total)
}

/// Average of |h| over lattice points of Q.
pub fn mean_abs(h: &DeterministicField, q: &Cylinder) -> Result<f64> {
    let data = scalar_field(h)?;
    let cover = lattice_cover(h.grid(), q)?;
    if cover.inside.is_empty() {
        return Err(Error::Domain("cylinder contains no grid node".into()));
    }
    let n = h.grid().spatial_len();
    Ok(cover
        .inside
        .iter()
        .map(|&(i, j)| data[i * n + j].abs())
        .sum::<f64>()
        / cover.total as f64)
}

/// c = 2^k h for k = 0..=log2(L/h).
pub fn dyadic_radii(grid: &SpaceTimeGrid) -> Vec<f64> {
    let h = grid.h();
    let kmax = (grid.half_width() / h).log2().floor().max(0.0) as i32;
    (0..=kmax).map(|k| h * 2f64.powi(k)).collect()
}

/// Which node-centred cylinders enter the sup.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterStride {
    /// Every grid node is a center.
    Every,
    /// Centers every ~c²/(2Δt) slices and ~c/(2h) nodes per axis, so every
    /// node still lies in some cylinder of each radius.
    Adaptive,
}

/// Offsets (Δi, Δj) of lattice points in a node-centred cylinder.
struct NodeStencil {
    times: Vec<i64>,
    spatial: Vec<[i64; 3]>,
}

fn node_stencil(grid: &SpaceTimeGrid, c: f64) -> NodeStencil {
    let (dt, h) = (grid.dt(), grid.h());
    let c2 = c * c;
    let it = (c2 / dt).ceil() as i64 + 1;
    let times = (-it..=it)
        .filter(|&i| (i as f64 * dt).abs() < c2 * (1.0 - BOUNDARY_SLACK))
        .collect();
    let jx = (c / h).ceil() as i64 + 1;
    let d = grid.dim();
    let mut spatial = Vec::new();
    let span = |a: usize| if a < d { -jx..=jx } else { 0..=0 };
    for a in span(0) {
        for b in span(1) {
            for e in span(2) {
                let r2 = ((a * a + b * b + e * e) as f64) * h * h;
                if r2 < c2 * (1.0 - BOUNDARY_SLACK) {
                    spatial.push([a, b, e]);
                }
            }
        }
    }
    NodeStencil { times, spatial }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Average {
    Oscillation,
    Absolute,
}

fn cylinder_sup(
    h: &DeterministicField,
    radii: &[f64],
    stride: CenterStride,
    kind: Average,
) -> Result<DeterministicField> {
    let data = scalar_field(h)?;
    if radii.is_empty() {
        return Err(Error::invalid("radius family is empty"));
    }
    let grid = *h.grid();
    let (n, nx, d) = (grid.spatial_len(), grid.nx() as i64, grid.dim());
    let slices = grid.slices();
    let mut out = DeterministicField::zeros(grid, 1);
    for &c in radii {
        let st = node_stencil(&grid, c);
        let total = (st.times.len() * st.spatial.len()) as f64;
        let (s_t, s_x) = match stride {
            CenterStride::Every => (1, 1),
            CenterStride::Adaptive => (
                ((c * c / (2.0 * grid.dt())).floor() as usize).max(1),
                ((c / (2.0 * grid.h())).floor() as usize).max(1),
            ),
        };
        let centers_t: Vec<usize> = (0..slices).step_by(s_t).collect();
        let mut centers_x = Vec::new();
        for f in 0..n {
            let idx = grid.unravel(f);
            if (0..d).all(|a| idx[a].is_multiple_of(s_x)) {
                centers_x.push(idx);
            }
        }
        let members = |ti: usize, cx: &[usize; 3]| {
            let mut pts = Vec::with_capacity(st.times.len() * st.spatial.len());
            for &di in &st.times {
                let i = ti as i64 + di;
                if i < 0 || i as usize >= slices {
                    continue;
                }
                'sp: for off in &st.spatial {
                    let mut idx = [0usize; 3];
                    for a in 0..d {
                        let j = cx[a] as i64 + off[a];
                        if j < 0 || j >= nx {
                            continue 'sp;
                        }
                        idx[a] = j as usize;
                    }
                    pts.push(i as usize * n + grid.ravel(&idx));
                }
            }
            pts
        };
        // Values per center in a fixed order, then a sequential scatter-max.
        let centers: Vec<(usize, [usize; 3])> = centers_t
            .iter()
            .flat_map(|&ti| centers_x.iter().map(move |cx| (ti, *cx)))
            .collect();
        let values = ordered_map(centers.len(), |k| {
            let (ti, cx) = centers[k];
            let pts = members(ti, &cx);
            let outside = total - pts.len() as f64;
            match kind {
                Average::Absolute => pts.iter().map(|&p| data[p].abs()).sum::<f64>() / total,
                Average::Oscillation => {
                    let mean = pts.iter().map(|&p| data[p]).sum::<f64>() / total;
                    (pts.iter().map(|&p| (data[p] - mean).abs()).sum::<f64>()
                        + outside * mean.abs())
                        / total
                }
            }
        });
        let dst = out.data_mut();
        for (k, &(ti, cx)) in centers.iter().enumerate() {
            let v = values[k];
            for p in members(ti, &cx) {
                if v > dst[p] {
                    dst[p] = v;
                }
            }
        }
    }
    Ok(out)
}

/// h^♯: the largest mean oscillation over family cylinders containing each node.
pub fn sharp_function(
    h: &DeterministicField,
    radii: &[f64],
    stride: CenterStride,
) -> Result<DeterministicField> {
    cylinder_sup(h, radii, stride, Average::Oscillation)
}

/// 𝓜h: the largest mean of |h| over family cylinders containing each node.
pub fn maximal_function(
    h: &DeterministicField,
    radii: &[f64],
    stride: CenterStride,
) -> Result<DeterministicField> {
    cylinder_sup(h, radii, stride, Average::Absolute)
}

/// Discrete L_p norm of a one-channel field over (0, T) × [−L, L)^d.
pub fn lp_norm(h: &DeterministicField, p: f64) -> f64 {
    let w = node_weights(h.grid());
    let v = node_values(h);
    v.iter()
        .zip(&w)
        .map(|(x, w)| w * abs_pow(*x, p))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// ‖h‖_p, ‖h^♯‖_p and ‖𝓜h‖_p with the ratios ‖h‖/‖h^♯‖ and ‖𝓜h‖/‖h‖;
/// passes when both ratios are finite (0/0 counts as 0).
pub fn fs_equivalence_report(
    h: &DeterministicField,
    p: f64,
    radii: &[f64],
    stride: CenterStride,
) -> Result<VerificationReport> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid(format!(
            "Fefferman-Stein comparison needs 1 < p < inf (p = {p})"
        )));
    }
    let sharp = sharp_function(h, radii, stride)?;
    let maximal = maximal_function(h, radii, stride)?;
    let (nh, ns, nm) = (lp_norm(h, p), lp_norm(&sharp, p), lp_norm(&maximal, p));
    let ratio = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a / b };
    let (r_sharp, r_max) = (ratio(nh, ns), ratio(nm, nh));
    let worst = if r_sharp.is_finite() && r_max.is_finite() {
        r_sharp.max(r_max)
    } else {
        f64::INFINITY
    };
    let pointwise = sharp
        .data()
        .iter()
        .zip(maximal.data())
        .map(|(s, m)| s - 2.0 * m)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(
        VerificationReport::new("fs_equivalence", worst, Check::Finite)
            .with_bound("||h||_p ~ ||h#||_p ~ ||Mh||_p")
            .with_detail("p", p)
            .with_detail("norm_h", nh)
            .with_detail("norm_sharp", ns)
            .with_detail("norm_maximal", nm)
            .with_detail("ratio_h_over_sharp", r_sharp)
            .with_detail("ratio_maximal_over_h", r_max)
            .with_detail("max_sharp_minus_twice_maximal", pointwise),
    )
}

/// Σ over nodes of `stat(node)` weighted by quadrature, for sub-box sums.
pub fn weighted_box_sum(h: &DeterministicField, include: impl Fn(f64, &[f64]) -> bool) -> f64 {
    let grid = h.grid();
    let n = grid.spatial_len();
    let v = node_values(h);
    let mut s = 0.0;
    for i in 0..grid.slices() {
        let t = grid.time(i);
        for j in 0..n {
            if include(t, &grid.point(j)) {
                s += grid.time_weight(i) * grid.cell_volume() * v[i * n + j];
            }
        }
    }
    s
}

/// Sum over members of per-member scalars in chunk order.
pub fn ensemble_mean(u: &RandomField, stat: impl Fn(&DeterministicField) -> f64 + Sync) -> f64 {
    let total = ordered_fold(
        u.members(),
        0.0,
        |i| stat(&u.member(i)),
        || 0.0,
        |a: &mut f64, _, v| *a += v,
        |t, _, a| *t += a,
    );
    total / u.members() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(1, 0.5, 16, 1.0, 16).unwrap()
    }

    #[test]
    fn constant_one_has_unit_norm() {
        let g = unit_grid();
        let u = RandomField::shared(DeterministicField::from_fn(g, 1, |_, _, _| 1.0), 3);
        for (p, r) in [(1.0, 1.0), (2.0, 2.0), (4.0, 2.0), (3.0, 1.5)] {
            assert!((mixed_norm(&u, p, r).unwrap().value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_signs_have_unit_norm() {
        let g = unit_grid();
        let members = (0..4)
            .map(|m| {
                DeterministicField::from_fn(
                    g,
                    1,
                    move |_, _, _| if m % 2 == 0 { 1.0 } else { -1.0 },
                )
            })
            .collect();
        let u = RandomField::stored(members).unwrap();
        assert!((mixed_norm(&u, 2.0, 3.0).unwrap().value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_indicator() {
        let g = unit_grid();
        let u = RandomField::shared(
            DeterministicField::from_fn(g, 1, |_, _, x| if x[0] < 0.0 { 1.0 } else { 0.0 }),
            2,
        );
        for r in [1.0, 2.0, 5.0] {
            assert!((mixed_norm(&u, 2.0, r).unwrap().value - 0.5f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn exponents_below_one_rejected() {
        let u = RandomField::zeros(unit_grid(), 1, 2);
        assert!(mixed_norm(&u, 0.5, 2.0).is_err());
        assert!(nested_norm(&u, 2.0, 0.9).is_err());
    }

    #[test]
    fn nested_constant_box() {
        let g = SpaceTimeGrid::new(1, 1.0, 16, 2.0, 16).unwrap();
        let u = RandomField::shared(DeterministicField::from_fn(g, 1, |_, _, _| -3.0), 4);
        let v: f64 = g.measure();
        for r in [1.0, 2.0, 3.0] {
            assert!((nested_norm(&u, 4.0, r).unwrap().value - 3.0 * v.powf(1.0 / r)).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_field_oscillation_is_one() {
        let g = SpaceTimeGrid::new(1, 1.0, 16, 1.0, 16).unwrap();
        let h = DeterministicField::from_fn(g, 1, |_, _, x| {
            if x[0] < -1e-12 {
                -1.0
            } else if x[0] > 1e-12 {
                1.0
            } else {
                0.0
            }
        });
        // Symmetric nodes around x = 0 (a node); the zero node contributes 0.
        let q = Cylinder::new(0.5, vec![0.0], 0.3).unwrap();
        let osc = mean_oscillation(&h, &q).unwrap();
        let cover = lattice_cover(&g, &q).unwrap();
        let zero_nodes = cover
            .inside
            .iter()
            .filter(|&&(_, j)| g.coord(j).abs() < 1e-12)
            .count();
        let expected = 1.0 - zero_nodes as f64 / cover.total as f64;
        assert!((osc - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_field_has_zero_sharp_interior() {
        let g = SpaceTimeGrid::new(1, 1.0, 16, 1.0, 16).unwrap();
        let h = DeterministicField::from_fn(g, 1, |_, _, _| 2.0);
        let q = Cylinder::new(0.5, vec![0.0], 0.2).unwrap();
        assert_eq!(mean_oscillation(&h, &q).unwrap(), 0.0);
        let m = maximal_function(&h, &[g.h()], CenterStride::Every).unwrap();
        assert!(m.data().iter().all(|v| (*v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn volume_formula() {
        let q = Cylinder::new(0.0, vec![0.0], 2.0).unwrap();
        assert!((q.volume() - 2.0 * 4.0 * 4.0).abs() < 1e-12);
        let q2 = Cylinder::new(0.0, vec![0.0, 0.0], 1.0).unwrap();
        assert!((q2.volume() - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }
}
