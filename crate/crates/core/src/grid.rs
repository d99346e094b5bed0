//! Uniform periodic space-time grid on [0, T] × [−L, L)^d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nodes are x_j = −L + j h (j = 0..nx per axis) and t_i = i Δt
/// (i = 0..=nt), so a field holds `nt + 1` time slices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    dim: usize,
    half_width: f64,
    nx: usize,
    horizon: f64,
    nt: usize,
}

impl SpaceTimeGrid {
    pub fn new(dim: usize, half_width: f64, nx: usize, horizon: f64, nt: usize) -> Result<Self> {
        if dim == 0 || dim > 3 {
            return Err(Error::invalid(format!("dimension {dim} outside 1..=3")));
        }
        if nx < 8 || nt < 8 {
            return Err(Error::invalid(format!(
                "grid needs nx, nt >= 8 (got nx = {nx}, nt = {nt})"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite() && horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::invalid(
                "half-width and horizon must be positive and finite",
            ));
        }
        Ok(Self {
            dim,
            half_width,
            nx,
            horizon,
            nt,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// nx^d
    pub fn spatial_len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn slices(&self) -> usize {
        self.nt + 1
    }

    pub fn time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.nt as f64
    }

    pub fn coord(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.h()
    }

    /// Per-axis indices of a flat spatial index; axis 0 varies slowest.
    pub fn unravel(&self, mut flat: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        for a in (0..self.dim).rev() {
            idx[a] = flat % self.nx;
            flat /= self.nx;
        }
        idx
    }

    pub fn ravel(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.nx + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let idx = self.unravel(flat);
        (0..self.dim).map(|a| self.coord(idx[a])).collect()
    }

    /// h^d
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Trapezoid weights in time: Δt inside, Δt/2 at both ends. With the
    /// periodic rectangle rule in space this integrates constants exactly.
    pub fn time_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nt {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }

    /// |(0, T) × [−L, L)^d|
    pub fn measure(&self) -> f64 {
        self.horizon * (2.0 * self.half_width).powi(self.dim as i32)
    }

    /// The same domain with `nx` and `nt` scaled.
    pub fn refined(&self, nx: usize, nt: usize) -> Result<Self> {
        Self::new(self.dim, self.half_width, nx, self.horizon, nt)
    }

    /// Whether `x` lies in the central sub-box [−L/2, L/2]^d.
    pub fn in_support_box(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.abs() <= 0.5 * self.half_width + 1e-12)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacings() {
        let g = SpaceTimeGrid::new(1, 2.0, 16, 1.0, 8).unwrap();
        assert_eq!(g.h(), 0.25);
        assert_eq!(g.dt(), 0.125);
        assert_eq!(g.coord(0), -2.0);
        let total: f64 = (0..g.slices()).map(|i| g.time_weight(i)).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ravel_round_trip() {
        let g = SpaceTimeGrid::new(3, 1.0, 8, 1.0, 8).unwrap();
        for flat in [0, 1, 9, 100, 511] {
            let idx = g.unravel(flat);
            assert_eq!(g.ravel(&idx), flat);
        }
    }

    #[test]
    fn small_grids_rejected() {
        assert!(SpaceTimeGrid::new(1, 1.0, 4, 1.0, 8).is_err());
        assert!(SpaceTimeGrid::new(1, 1.0, 8, 1.0, 7).is_err());
    }
}
