//! Independent Wiener increments for an ensemble of ω-paths.
//!
//! Path `m` draws from `ChaCha20Rng::seed_from_u64(master_seed)` on stream
//! `m + 1`, step-major then channel, so any single path can be regenerated
//! without the others and the ensemble is identical for every thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct WienerEnsemble {
    members: usize,
    channels: usize,
    steps: usize,
    horizon: f64,
    master_seed: u64,
    /// [path][step][channel]
    increments: Vec<f64>,
}

/// RNG for stream `stream` of `master_seed`. Stream 0 is reserved for
/// ensemble-wide draws; stream m + 1 belongs to path m.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

impl WienerEnsemble {
    pub fn generate(
        members: usize,
        channels: usize,
        steps: usize,
        horizon: f64,
        master_seed: u64,
    ) -> Result<Self> {
        if members == 0 || channels == 0 || steps == 0 {
            return Err(Error::invalid(
                "Wiener ensemble needs members, channels and steps >= 1",
            ));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        let sd = (horizon / steps as f64).sqrt();
        let per_path = steps * channels;
        let chunks = crate::parallel::ordered_map(members, |m| {
            let mut rng = stream_rng(master_seed, m as u64 + 1);
            (0..per_path)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect::<Vec<f64>>()
        });
        Ok(Self {
            members,
            channels,
            steps,
            horizon,
            master_seed,
            increments: chunks.concat(),
        })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn time(&self, step: usize) -> f64 {
        self.horizon * step as f64 / self.steps as f64
    }

    /// W^k(t_{step+1}) − W^k(t_step) on path `m`.
    pub fn increment(&self, m: usize, step: usize, channel: usize) -> f64 {
        self.increments[(m * self.steps + step) * self.channels + channel]
    }

    /// All channels of one step.
    pub fn step_increments(&self, m: usize, step: usize) -> &[f64] {
        let base = (m * self.steps + step) * self.channels;
        &self.increments[base..base + self.channels]
    }

    /// W^k(t_step) on path `m`.
    pub fn position(&self, m: usize, step: usize, channel: usize) -> f64 {
        (0..step).map(|j| self.increment(m, j, channel)).sum()
    }

    /// Copy with increments at index `>= step` set to zero.
    pub fn with_future_zeroed(&self, step: usize) -> Self {
        let mut out = self.clone();
        for m in 0..self.members {
            for j in step.min(self.steps)..self.steps {
                for k in 0..self.channels {
                    out.increments[(m * self.steps + j) * self.channels + k] = 0.0;
                }
            }
        }
        out
    }

    /// The same Brownian paths on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let mut increments = vec![0.0; self.members * steps * self.channels];
        for m in 0..self.members {
            for j in 0..self.steps {
                for k in 0..self.channels {
                    increments[(m * steps + j / factor) * self.channels + k] +=
                        self.increment(m, j, k);
                }
            }
        }
        Ok(Self {
            steps,
            increments,
            ..self.clone()
        })
    }

    /// Keeps the first `members` paths.
    pub fn truncate_members(&self, members: usize) -> Self {
        let members = members.min(self.members);
        Self {
            members,
            increments: self.increments[..members * self.steps * self.channels].to_vec(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_reproducible_and_path_local() {
        let a = WienerEnsemble::generate(10, 2, 16, 1.0, 42).unwrap();
        let b = WienerEnsemble::generate(10, 2, 16, 1.0, 42).unwrap();
        assert_eq!(a, b);
        let small = WienerEnsemble::generate(3, 2, 16, 1.0, 42).unwrap();
        assert_eq!(small, a.truncate_members(3));
        let other = WienerEnsemble::generate(10, 2, 16, 1.0, 43).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn cell_variance_matches_dt() {
        let (m, nt) = (4000, 4);
        let w = WienerEnsemble::generate(m, 2, nt, 1.0, 9).unwrap();
        let dt = w.dt();
        for step in 0..nt {
            for k in 0..2 {
                let sq: Vec<f64> = (0..m).map(|i| w.increment(i, step, k).powi(2)).collect();
                let mean = sq.iter().sum::<f64>() / m as f64;
                // Var of ΔW² is 2 dt².
                let se = (2.0f64).sqrt() * dt / (m as f64).sqrt();
                assert!((mean - dt).abs() < 5.0 * se, "step {step} ch {k}: {mean}");
            }
        }
    }

    #[test]
    fn coarsening_preserves_positions() {
        let w = WienerEnsemble::generate(3, 1, 16, 2.0, 1).unwrap();
        let c = w.coarsen(4).unwrap();
        assert_eq!(c.steps(), 4);
        for m in 0..3 {
            for s in 0..=4 {
                assert!((c.position(m, s, 0) - w.position(m, 4 * s, 0)).abs() < 1e-14);
            }
        }
    }
}
