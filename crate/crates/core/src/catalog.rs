//! Named test problems for the data f and g.
//!
//! Shapes are fixed in units of the support half-width s = L/2, so a problem
//! samples the same continuous function on every grid of a domain; that is
//! what makes refinement studies meaningful. Everything except the periodic
//! problems vanishes outside [−s, s]^d. Channel k of a multi-channel field is
//! a shifted or reshaped variant scaled by 1/(k + 1).

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DeterministicField, RandomField};
use crate::grid::SpaceTimeGrid;
use crate::wiener::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    GaussBump,
    CompactBump,
    MollifiedStep,
    WavePacket,
    RandomFourier,
    RandomAmplitude,
    /// (1 + t) sin x₁, the forcing of u = t sin x₁; needs L ∈ πℕ.
    ManufacturedSin,
    Zero,
    /// ≡ 1, periodic.
    Unit,
}

impl Problem {
    /// The sweep used by the operator and maximal-regularity suites.
    pub const CATALOG: [Problem; 6] = [
        Problem::GaussBump,
        Problem::CompactBump,
        Problem::MollifiedStep,
        Problem::WavePacket,
        Problem::RandomFourier,
        Problem::RandomAmplitude,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Problem::GaussBump => "gauss_bump",
            Problem::CompactBump => "compact_bump",
            Problem::MollifiedStep => "mollified_step",
            Problem::WavePacket => "wave_packet",
            Problem::RandomFourier => "random_fourier",
            Problem::RandomAmplitude => "random_amplitude",
            Problem::ManufacturedSin => "manufactured_sin",
            Problem::Zero => "zero",
            Problem::Unit => "unit",
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Problem::RandomFourier | Problem::RandomAmplitude)
    }

    /// Periodic on the grid rather than supported in the central box.
    pub fn is_periodic(&self) -> bool {
        matches!(self, Problem::ManufacturedSin | Problem::Unit)
    }

    pub fn check_domain(&self, half_width: f64) -> Result<()> {
        if *self == Problem::ManufacturedSin {
            let k = half_width / PI;
            if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
                return Err(Error::invalid(format!(
                    "manufactured_sin is periodic only when L is a multiple of pi (L = {half_width})"
                )));
            }
        }
        Ok(())
    }

    /// The problem on `grid` with `channels` channels and `members` members;
    /// random problems draw member m from stream m + 1 of `seed`.
    pub fn field(
        &self,
        grid: &SpaceTimeGrid,
        channels: usize,
        members: usize,
        seed: u64,
    ) -> Result<RandomField> {
        self.check_domain(grid.half_width())?;
        if channels == 0 || members == 0 {
            return Err(Error::invalid(
                "problems need at least one channel and one member",
            ));
        }
        let grid = *grid;
        let s = 0.5 * grid.half_width();
        let horizon = grid.horizon();
        let field = match *self {
            Problem::RandomFourier => {
                RandomField::generated(grid, channels, members, Some(seed), move |m| {
                    let coeffs: Vec<FourierCoefficients> = {
                        let mut rng = stream_rng(seed, m as u64 + 1);
                        (0..channels)
                            .map(|_| FourierCoefficients::draw(&mut rng))
                            .collect()
                    };
                    DeterministicField::from_fn(grid, channels, |t, k, x| {
                        coeffs[k].eval(t, x, s, horizon) / (k + 1) as f64
                    })
                })
            }
            Problem::RandomAmplitude => {
                RandomField::generated(grid, channels, members, Some(seed), move |m| {
                    let amps: Vec<f64> = {
                        let mut rng = stream_rng(seed, m as u64 + 1);
                        (0..channels).map(|_| rng.sample(StandardNormal)).collect()
                    };
                    DeterministicField::from_fn(grid, channels, |t, k, x| {
                        amps[k] * compact_bump(t, k, x, s) / (k + 1) as f64
                    })
                })
            }
            p => {
                let f = DeterministicField::from_fn(grid, channels, |t, k, x| {
                    p.deterministic(t, k, x, s, horizon) / (k + 1) as f64
                });
                RandomField::shared(f, members)
            }
        };
        Ok(field.with_periodic(self.is_periodic()))
    }

    fn deterministic(&self, t: f64, k: usize, x: &[f64], s: f64, horizon: f64) -> f64 {
        match self {
            Problem::GaussBump => {
                let w = s / 8.0;
                let r = shifted_radius(x, (k % 4) as f64 * w / 2.0);
                (1.0 + t)
                    * (-0.5 * (r / w).powi(2)).exp()
                    * cutoff(shifted_radius(x, 0.0), 0.8 * s, 0.95 * s)
            }
            Problem::CompactBump => compact_bump(t, k, x, s),
            Problem::MollifiedStep => {
                let r = shifted_radius(x, 0.0);
                let radius = s / 3.0 * (1.0 - 0.1 * k as f64).max(0.5);
                let space =
                    0.5 * (1.0 + ((radius - r) / (s / 40.0)).tanh()) * cutoff(r, 0.7 * s, 0.9 * s);
                let time = 0.5 * (1.0 + ((t - 0.5 * horizon) / (horizon / 40.0)).tanh());
                space * time
            }
            Problem::WavePacket => {
                let w = s / 6.0;
                let r = shifted_radius(x, 0.0);
                let nu = TAU * 4.0 / s;
                (nu * x[0] + k as f64).cos()
                    * (-0.5 * (r / w).powi(2)).exp()
                    * cutoff(r, 0.8 * s, 0.95 * s)
                    * (TAU * t / horizon).cos()
            }
            Problem::ManufacturedSin => {
                if k == 0 {
                    (1.0 + t) * x[0].sin()
                } else {
                    0.0
                }
            }
            Problem::Zero => 0.0,
            Problem::Unit => 1.0,
            Problem::RandomFourier | Problem::RandomAmplitude => {
                unreachable!("random problems are generated per member")
            }
        }
    }
}

/// |x − shift e₁|
fn shifted_radius(x: &[f64], shift: f64) -> f64 {
    x.iter()
        .enumerate()
        .map(|(a, v)| if a == 0 { (v - shift).powi(2) } else { v * v })
        .sum::<f64>()
        .sqrt()
}

/// exp(1 − 1/(1 − ρ²)) on ρ < 1.
fn bump(rho: f64) -> f64 {
    if rho.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - rho * rho)).exp()
    }
}

fn smooth_step(u: f64) -> f64 {
    let psi = |v: f64| if v <= 0.0 { 0.0 } else { (-1.0 / v).exp() };
    psi(u) / (psi(u) + psi(1.0 - u))
}

/// C^∞, 1 on [0, a], 0 on [b, ∞).
fn cutoff(r: f64, a: f64, b: f64) -> f64 {
    1.0 - smooth_step((r - a) / (b - a))
}

fn compact_bump(t: f64, k: usize, x: &[f64], s: f64) -> f64 {
    let r = shifted_radius(x, (k % 4) as f64 * s / 16.0);
    (1.0 + t) * bump(r / (0.5 * s))
}

/// Σ_j (a_j cos(jπx₁/s) + b_j sin(jπx₁/s))/j² in space times
/// Σ_m c_m cos(mπt/T)/(m+1)² in time, under a radial bump.
struct FourierCoefficients {
    a: [f64; 6],
    b: [f64; 6],
    c: [f64; 4],
}

impl FourierCoefficients {
    fn draw(rng: &mut impl Rng) -> Self {
        let mut next = || rng.sample::<f64, _>(StandardNormal);
        Self {
            a: std::array::from_fn(|_| next()),
            b: std::array::from_fn(|_| next()),
            c: std::array::from_fn(|_| next()),
        }
    }

    fn eval(&self, t: f64, x: &[f64], s: f64, horizon: f64) -> f64 {
        let envelope = bump(shifted_radius(x, 0.0) / (0.9 * s));
        if envelope == 0.0 {
            return 0.0;
        }
        let space: f64 = (1..=6)
            .map(|j| {
                let arg = j as f64 * PI * x[0] / s;
                (self.a[j - 1] * arg.cos() + self.b[j - 1] * arg.sin()) / (j * j) as f64
            })
            .sum();
        let time: f64 = (0..4)
            .map(|m| self.c[m] * (m as f64 * PI * t / horizon).cos() / ((m + 1) * (m + 1)) as f64)
            .sum();
        envelope * space * time
    }
}
