//! Streaming per-node ensemble moments with batch-means standard errors.
//!
//! Members are folded in the fixed chunk order of [`crate::parallel`]; chunk
//! `c` of `C` feeds batch `c * B / C` with `B = min(16, C)`. A statistic
//! F(node means) is then evaluated on the full ensemble and on each batch,
//! and its standard error is the batch standard deviation over sqrt(B).

use crate::field::{DeterministicField, RandomField};
use crate::parallel::{chunk_count, ordered_fold};

pub const MAX_BATCHES: usize = 16;

/// |v|^r with exact fast paths for small integer exponents.
#[inline]
pub fn abs_pow(v: f64, r: f64) -> f64 {
    let a = v.abs();
    if r == 2.0 {
        a * a
    } else if r == 1.0 {
        a
    } else if r == 4.0 {
        let s = a * a;
        s * s
    } else if r == 8.0 {
        let s = a * a;
        let q = s * s;
        q * q
    } else if r == 6.0 {
        let s = a * a;
        s * s * s
    } else if r == 3.0 {
        a * a * a
    } else {
        a.powf(r)
    }
}

/// Node value used for statistics: the l2 norm over channels.
pub fn node_values(f: &DeterministicField) -> Vec<f64> {
    if f.channels() == 1 {
        return f.data().to_vec();
    }
    f.channel_norm().data().to_vec()
}

#[derive(Clone, Debug)]
pub struct NodeMoments {
    pub nodes: usize,
    pub exponents: Vec<f64>,
    pub members: usize,
    /// [exponent][node] Σ_ω |v|^r
    sums: Vec<f64>,
    /// [batch][exponent][node]
    batch_sums: Vec<f64>,
    batch_members: Vec<usize>,
}

impl NodeMoments {
    pub fn batches(&self) -> usize {
        self.batch_members.len()
    }

    /// mean_ω |v|^r at every node for exponent index `e`.
    pub fn mean(&self, e: usize) -> Vec<f64> {
        let m = self.members as f64;
        self.sums[e * self.nodes..(e + 1) * self.nodes]
            .iter()
            .map(|s| s / m)
            .collect()
    }

    pub fn batch_mean(&self, b: usize, e: usize) -> Vec<f64> {
        let m = self.batch_members[b] as f64;
        let base = (b * self.exponents.len() + e) * self.nodes;
        self.batch_sums[base..base + self.nodes]
            .iter()
            .map(|s| s / m)
            .collect()
    }

    pub fn exponent_index(&self, r: f64) -> Option<usize> {
        self.exponents.iter().position(|&e| e == r)
    }

    /// Full-ensemble value of `stat` and its batch-means standard error
    /// (`None` with fewer than two batches).
    pub fn estimate(&self, stat: impl Fn(&dyn Fn(usize) -> Vec<f64>) -> f64) -> (f64, Option<f64>) {
        let full = stat(&|e| self.mean(e));
        let b = self.batches();
        if b < 2 {
            return (full, None);
        }
        let vals: Vec<f64> = (0..b).map(|i| stat(&|e| self.batch_mean(i, e))).collect();
        let mean = vals.iter().sum::<f64>() / b as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
        (full, Some((var / b as f64).sqrt()))
    }
}

/// Per-node sums of |v|^r over members for each exponent, where v is the
/// channel l2 norm of each member.
pub fn node_moments(u: &RandomField, exponents: &[f64]) -> NodeMoments {
    let nodes = u.grid().slices() * u.grid().spatial_len();
    if let Some(shared) = u.as_shared() {
        return constant_moments(&node_values(shared), u.members(), exponents);
    }
    moments_from(u.members(), nodes, exponents, |i| node_values(&u.member(i)))
}

/// Moments of identical members: every batch sees the same means.
pub fn constant_moments(values: &[f64], members: usize, exponents: &[f64]) -> NodeMoments {
    let nodes = values.len();
    let ne = exponents.len();
    let chunks = chunk_count(members);
    let batches = chunks.clamp(1, MAX_BATCHES);
    let mut out = NodeMoments {
        nodes,
        exponents: exponents.to_vec(),
        members,
        sums: vec![0.0; ne * nodes],
        batch_sums: vec![0.0; batches * ne * nodes],
        batch_members: vec![0; batches],
    };
    for (e, &r) in exponents.iter().enumerate() {
        for (n, x) in values.iter().enumerate() {
            out.sums[e * nodes + n] = abs_pow(*x, r) * members as f64;
        }
    }
    let per = members.div_ceil(batches);
    for b in 0..batches {
        let count = per.min(members.saturating_sub(b * per)).max(1);
        out.batch_members[b] = count;
        for e in 0..ne {
            for n in 0..nodes {
                out.batch_sums[(b * ne + e) * nodes + n] =
                    abs_pow(values[n], exponents[e]) * count as f64;
            }
        }
    }
    out
}

/// Streams `values(i)` (one value per node, `nodes` long) over members.
pub fn moments_from(
    members: usize,
    nodes: usize,
    exponents: &[f64],
    values: impl Fn(usize) -> Vec<f64> + Sync,
) -> NodeMoments {
    let ne = exponents.len();
    let chunks = chunk_count(members);
    let batches = chunks.clamp(1, MAX_BATCHES);
    let init = NodeMoments {
        nodes,
        exponents: exponents.to_vec(),
        members,
        sums: vec![0.0; ne * nodes],
        batch_sums: vec![0.0; batches * ne * nodes],
        batch_members: vec![0; batches],
    };
    ordered_fold(
        members,
        init,
        |i| {
            let v = values(i);
            assert_eq!(
                v.len(),
                nodes,
                "member {i} produced {} values, expected {nodes}",
                v.len()
            );
            v
        },
        || (vec![0.0; ne * nodes], 0usize),
        |acc: &mut (Vec<f64>, usize), _, v| {
            for (e, &r) in exponents.iter().enumerate() {
                let dst = &mut acc.0[e * nodes..(e + 1) * nodes];
                for (d, x) in dst.iter_mut().zip(&v) {
                    *d += abs_pow(*x, r);
                }
            }
            acc.1 += 1;
        },
        |total, chunk, (sums, count)| {
            let b = chunk * batches / chunks;
            for (t, s) in total.sums.iter_mut().zip(&sums) {
                *t += s;
            }
            let base = b * ne * nodes;
            for (t, s) in total.batch_sums[base..base + ne * nodes]
                .iter_mut()
                .zip(&sums)
            {
                *t += s;
            }
            total.batch_members[b] += count;
        },
    )
}

/// Mean and standard error of per-member scalars.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::SpaceTimeGrid;

    #[test]
    fn abs_pow_fast_paths_agree() {
        for &r in &[1.0, 2.0, 3.0, 4.0, 6.0, 8.0, 2.5] {
            for &v in &[-1.7, 0.0, 0.3, 2.0] {
                let exact = f64::abs(v).powf(r);
                assert!((abs_pow(v, r) - exact).abs() <= 1e-14 * exact.max(1.0));
            }
        }
    }

    #[test]
    fn shared_and_generated_agree() {
        let g = SpaceTimeGrid::new(1, 1.0, 8, 1.0, 8).unwrap();
        let f = DeterministicField::from_fn(g, 1, |t, _, x| t + x[0]);
        let shared = RandomField::shared(f.clone(), 40);
        let gen = RandomField::generated(g, 1, 40, None, move |_| f.clone());
        let a = node_moments(&shared, &[2.0]);
        let b = node_moments(&gen, &[2.0]);
        for (x, y) in a.mean(0).iter().zip(b.mean(0)) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(a.batches(), b.batches());
    }
}
