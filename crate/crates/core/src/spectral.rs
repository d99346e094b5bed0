//! Periodic FFT on the spatial grid and Fourier multipliers.
//!
//! Transforms are unnormalized forward, `1/N` inverse. Wavenumbers are
//! ξ_j = π j / L for j < nx/2 and π (j − nx) / L otherwise; the Nyquist mode
//! is dropped from odd-order multipliers so real data stay real.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::coefficients::SymMatrix;
use crate::grid::SpaceTimeGrid;

#[derive(Clone)]
pub struct Spectral {
    dim: usize,
    nx: usize,
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// One-dimensional wavenumbers.
    xi: Vec<f64>,
    /// ξ_iξ_j per mode for each lower-triangle pair, in `hessian_pairs` order.
    pair_products: Vec<Vec<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral")
            .field("dim", &self.dim)
            .field("nx", &self.nx)
            .finish()
    }
}

impl Spectral {
    pub fn new(grid: &SpaceTimeGrid) -> Self {
        let nx = grid.nx();
        let mut planner = FftPlanner::new();
        let l = grid.half_width();
        let xi: Vec<f64> = (0..nx)
            .map(|j| {
                let m = if j < nx.div_ceil(2) {
                    j as f64
                } else {
                    j as f64 - nx as f64
                };
                std::f64::consts::PI * m / l
            })
            .collect();
        let mut s = Self {
            dim: grid.dim(),
            nx,
            len: grid.spatial_len(),
            forward: planner.plan_fft_forward(nx),
            inverse: planner.plan_fft_inverse(nx),
            xi,
            pair_products: Vec::new(),
        };
        s.pair_products = hessian_pairs(s.dim)
            .into_iter()
            .map(|(i, j)| {
                (0..s.len)
                    .map(|f| {
                        let idx = s.mode_index(f);
                        s.xi[idx[i]] * s.xi[idx[j]]
                    })
                    .collect()
            })
            .collect();
        s
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn is_nyquist(&self, j: usize) -> bool {
        self.nx.is_multiple_of(2) && j == self.nx / 2
    }

    fn along_axes(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        if self.dim == 1 {
            fft.process(buf);
            return;
        }
        let nx = self.nx;
        let mut line = vec![Complex64::default(); nx];
        for axis in 0..self.dim {
            let stride = nx.pow((self.dim - 1 - axis) as u32);
            for base in 0..self.len {
                // Start of a line: the axis index is zero.
                if !(base / stride).is_multiple_of(nx) {
                    continue;
                }
                for (k, l) in line.iter_mut().enumerate() {
                    *l = buf[base + k * stride];
                }
                fft.process(&mut line);
                for (k, l) in line.iter().enumerate() {
                    buf[base + k * stride] = *l;
                }
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        self.along_axes(buf, &self.forward);
    }

    /// Normalized inverse.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.along_axes(buf, &self.inverse);
        let s = 1.0 / self.len as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    pub fn forward_real(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut buf: Vec<Complex64>, out: &mut [f64]) {
        self.inverse(&mut buf);
        for (o, v) in out.iter_mut().zip(&buf) {
            *o = v.re;
        }
    }

    fn mode_index(&self, flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut f = flat;
        for a in (0..self.dim).rev() {
            idx[a] = f % self.nx;
            f /= self.nx;
        }
        idx
    }

    /// Wavevector of a flat mode index.
    pub fn wavevector(&self, flat: usize) -> Vec<f64> {
        let idx = self.mode_index(flat);
        (0..self.dim).map(|a| self.xi[idx[a]]).collect()
    }

    /// (Mξ, ξ) for every mode.
    pub fn quadratic_symbol(&self, m: &SymMatrix) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for ((i, j), prod) in hessian_pairs(self.dim).into_iter().zip(&self.pair_products) {
            let w = if i == j {
                m.get(i, i)
            } else {
                2.0 * m.get(i, j)
            };
            if w == 0.0 {
                continue;
            }
            for (o, p) in out.iter_mut().zip(prod) {
                *o += w * p;
            }
        }
        out
    }

    /// Symbol of −Σ m_ij D_ij for central finite differences:
    /// 4 sin²(ξ_i h/2)/h² on the diagonal, sin(ξ_i h) sin(ξ_j h)/h² off it.
    pub fn fd_symbol(&self, m: &SymMatrix, h: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len];
        for (f, o) in out.iter_mut().enumerate() {
            let idx = self.mode_index(f);
            for (i, j) in hessian_pairs(self.dim) {
                let (a, b) = (self.xi[idx[i]] * h, self.xi[idx[j]] * h);
                *o += if i == j {
                    m.get(i, i) * 4.0 * (0.5 * a).sin().powi(2)
                } else {
                    2.0 * m.get(i, j) * a.sin() * b.sin()
                } / (h * h);
            }
        }
        out
    }

    /// Multiplier of ∂_axis: iξ_axis, zero on the Nyquist line.
    pub fn first_derivative(&self, axis: usize) -> Vec<Complex64> {
        (0..self.len)
            .map(|f| {
                let j = self.mode_index(f)[axis];
                if self.is_nyquist(j) {
                    Complex64::default()
                } else {
                    Complex64::new(0.0, self.xi[j])
                }
            })
            .collect()
    }

    /// Multiplier of ∂_i∂_j: −ξ_iξ_j (mixed terms vanish on Nyquist lines).
    pub fn second_derivative(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.len)
            .map(|f| {
                let idx = self.mode_index(f);
                if i != j && (self.is_nyquist(idx[i]) || self.is_nyquist(idx[j])) {
                    0.0
                } else {
                    -self.xi[idx[i]] * self.xi[idx[j]]
                }
            })
            .collect()
    }
}

/// Lower-triangle pairs (i, j), i ≥ j, in storage order.
pub fn hessian_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim)
        .flat_map(|i| (0..=i).map(move |j| (i, j)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let g = SpaceTimeGrid::new(2, 1.0, 8, 1.0, 8).unwrap();
        let s = Spectral::new(&g);
        let values: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; 64];
        s.inverse_real(s.forward_real(&values), &mut out);
        for (a, b) in values.iter().zip(&out) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_of_sine() {
        let g = SpaceTimeGrid::new(1, std::f64::consts::PI, 32, 1.0, 8).unwrap();
        let s = Spectral::new(&g);
        let u: Vec<f64> = (0..32).map(|j| (2.0 * g.coord(j)).sin()).collect();
        let mut hat = s.forward_real(&u);
        for (h, m) in hat.iter_mut().zip(s.first_derivative(0)) {
            *h *= m;
        }
        let mut du = vec![0.0; 32];
        s.inverse_real(hat, &mut du);
        for j in 0..32 {
            assert!((du[j] - 2.0 * (2.0 * g.coord(j)).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_second_derivative_2d() {
        let g = SpaceTimeGrid::new(2, std::f64::consts::PI, 16, 1.0, 8).unwrap();
        let s = Spectral::new(&g);
        let u: Vec<f64> = (0..g.spatial_len())
            .map(|f| {
                let x = g.point(f);
                x[0].sin() * (2.0 * x[1]).cos()
            })
            .collect();
        let mut hat = s.forward_real(&u);
        for (h, m) in hat.iter_mut().zip(s.second_derivative(1, 0)) {
            *h *= m;
        }
        let mut d = vec![0.0; u.len()];
        s.inverse_real(hat, &mut d);
        for f in 0..u.len() {
            let x = g.point(f);
            let exact = -2.0 * x[0].cos() * (2.0 * x[1]).sin();
            assert!((d[f] - exact).abs() < 1e-11);
        }
    }
}
