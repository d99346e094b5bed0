//! Experiment configuration: strict TOML, documented defaults, validation
//! with key paths, and a content hash.
//!
//! Every table is optional; an empty file is the default experiment
//! (d = 1, nx = nt = 256, M = 2000, K_max = 4, all suites). Unknown keys are
//! errors.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Problem;
use crate::coefficients::{EllipticityBand, PathKind};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;

/// Smallest ensemble accepted for a Monte Carlo backed check.
pub const MIN_MC_MEMBERS: usize = 100;
/// Gaussian mass allowed outside radius L/2 over the horizon.
const WRAP_MASS: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuiteName {
    Kernel,
    Hormander,
    Solver,
    Operators,
    Maxreg,
    MomentSobolev,
    All,
}

impl SuiteName {
    pub const EACH: [SuiteName; 6] = [
        SuiteName::Kernel,
        SuiteName::Hormander,
        SuiteName::Solver,
        SuiteName::Operators,
        SuiteName::Maxreg,
        SuiteName::MomentSobolev,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SuiteName::Kernel => "kernel",
            SuiteName::Hormander => "hormander",
            SuiteName::Solver => "solver",
            SuiteName::Operators => "operators",
            SuiteName::Maxreg => "maxreg",
            SuiteName::MomentSobolev => "moment_sobolev",
            SuiteName::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::EACH
            .into_iter()
            .chain([SuiteName::All])
            .find(|n| n.label() == s)
            .ok_or_else(|| Error::Config {
                location: "suite".into(),
                message: format!("unknown suite {s:?}"),
            })
    }
}

impl fmt::Display for SuiteName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Spatial half-width: a number, or `"auto"` for the smallest L keeping the
/// kernel mass beyond L/2 below 1e-10 over the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HalfWidth {
    Value(f64),
    Keyword(AutoKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
    pub half_width: HalfWidth,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            nx: 256,
            nt: 256,
            horizon: 1.0,
            half_width: HalfWidth::Keyword(AutoKeyword::Auto),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandConfig {
    pub kappa: f64,
    pub k_up: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            k_up: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    Constant,
    PiecewiseRandom,
    SinusoidClipped,
}

impl From<CoefficientKind> for PathKind {
    fn from(k: CoefficientKind) -> Self {
        match k {
            CoefficientKind::Constant => PathKind::Constant,
            CoefficientKind::PiecewiseRandom => PathKind::PiecewiseRandom,
            CoefficientKind::SinusoidClipped => PathKind::SinusoidClipped,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientConfig {
    pub kind: CoefficientKind,
    pub intervals: usize,
    /// Deterministic paths sampled for the kernel and Hörmander suites.
    pub paths: usize,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        Self {
            kind: CoefficientKind::PiecewiseRandom,
            intervals: 8,
            paths: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Forcing for `solve-det` / `solve-spde`.
    pub f: Problem,
    /// Noise coefficient for `solve-spde` and the moment suite.
    pub g: Problem,
    /// Problems swept by the operator and maximal-regularity suites.
    pub catalog: Vec<Problem>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            f: Problem::GaussBump,
            g: Problem::CompactBump,
            catalog: Problem::CATALOG.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    /// M
    pub members: usize,
    /// K_max
    pub channels: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 2000,
            channels: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    pub samples: usize,
    /// Allowed relative change of N_fit when the sample set doubles.
    pub stability: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            samples: 10_000,
            stability: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HormanderConfig {
    pub c_grid: Vec<f64>,
    pub centers: usize,
    pub point_pairs: usize,
    pub factor: f64,
}

impl Default for HormanderConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            centers: 5,
            point_pairs: 10,
            factor: 4.0,
        }
    }
}

/// Exponent pairs are written `[r, p]`; `grids` holds the coarse and fine
/// nx = nt of the refinement pair, `drift` the allowed relative change.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorsConfig {
    pub exponents: Vec<[f64; 2]>,
    pub members: usize,
    pub grids: [usize; 2],
    pub drift: f64,
    /// Probes of the sharp-function domination check.
    pub probes: usize,
}

impl Default for OperatorsConfig {
    fn default() -> Self {
        Self {
            exponents: vec![[2.0, 2.0], [2.0, 4.0], [4.0, 8.0]],
            members: 100,
            grids: [128, 256],
            drift: 0.1,
            probes: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaxregConfig {
    pub exponents: Vec<[f64; 2]>,
    pub members: usize,
    pub grids: [usize; 2],
    pub drift: f64,
}

impl Default for MaxregConfig {
    fn default() -> Self {
        Self {
            exponents: vec![[2.0, 2.0], [2.0, 4.0], [4.0, 4.0]],
            members: 200,
            grids: [128, 256],
            drift: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MomentSobolevConfig {
    pub exponents: Vec<[f64; 2]>,
    pub probes: usize,
}

impl Default for MomentSobolevConfig {
    fn default() -> Self {
        Self {
            exponents: vec![[2.0, 2.0], [2.0, 4.0], [4.0, 4.0]],
            probes: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub suites: Vec<SuiteName>,
    pub output: PathBuf,
    pub grid: GridConfig,
    pub band: BandConfig,
    pub coefficients: CoefficientConfig,
    pub data: DataConfig,
    pub ensemble: EnsembleConfig,
    pub kernel: KernelConfig,
    pub hormander: HormanderConfig,
    pub operators: OperatorsConfig,
    pub maxreg: MaxregConfig,
    pub moment_sobolev: MomentSobolevConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            suites: vec![SuiteName::All],
            output: PathBuf::from("out"),
            grid: GridConfig::default(),
            band: BandConfig::default(),
            coefficients: CoefficientConfig::default(),
            data: DataConfig::default(),
            ensemble: EnsembleConfig::default(),
            kernel: KernelConfig::default(),
            hormander: HormanderConfig::default(),
            operators: OperatorsConfig::default(),
            maxreg: MaxregConfig::default(),
            moment_sobolev: MomentSobolevConfig::default(),
        }
    }
}

fn invalid(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        location: location.into(),
        message: message.into(),
    }
}

/// Smallest L with erfc(L / (2 sqrt(4 K T))) below the wrap tolerance, i.e.
/// kernel mass beyond L/2 negligible for every admissible coefficient.
pub fn auto_half_width(k_up: f64, horizon: f64) -> f64 {
    let z = statrs::function::erf::erfc_inv(WRAP_MASS);
    2.0 * z * (4.0 * k_up * horizon).sqrt()
}

fn check_stochastic_exponents(location: &str, pairs: &[[f64; 2]]) -> Result<()> {
    if pairs.is_empty() {
        return Err(invalid(location, "at least one [r, p] pair is required"));
    }
    for (i, [r, p]) in pairs.iter().enumerate() {
        if !(r.is_finite() && p.is_finite() && 2.0 <= *r && r <= p) {
            return Err(invalid(
                format!("{location}[{i}]"),
                format!("r = {r}, p = {p} violates 2 ≤ r ≤ p"),
            ));
        }
    }
    Ok(())
}

fn check_members(location: &str, members: usize) -> Result<()> {
    if members < MIN_MC_MEMBERS {
        return Err(invalid(
            location,
            format!("Monte Carlo checks need M >= {MIN_MC_MEMBERS} (got {members})"),
        ));
    }
    Ok(())
}

fn check_refinement(
    location: &str,
    exponents: &[[f64; 2]],
    members: usize,
    grids: [usize; 2],
    drift: f64,
) -> Result<()> {
    check_stochastic_exponents(&format!("{location}.exponents"), exponents)?;
    check_members(&format!("{location}.members"), members)?;
    let [coarse, fine] = grids;
    if !(coarse >= 8 && fine > coarse && fine % coarse == 0) {
        return Err(invalid(
            format!("{location}.grids"),
            format!(
                "need 8 <= coarse < fine with fine a multiple of coarse (got {coarse}, {fine})"
            ),
        ));
    }
    if !(drift > 0.0) {
        return Err(invalid(format!("{location}.drift"), "must be positive"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let location = e.span().map_or_else(
                || "config".to_string(),
                |s| format!("bytes {}..{}", s.start, s.end),
            );
            invalid(location, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text).map_err(|e| e.context(format!("loading {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the canonical serialization, hex encoded. The output
    /// directory is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn band(&self) -> Result<EllipticityBand> {
        EllipticityBand::new(self.band.kappa, self.band.k_up)
    }

    pub fn half_width(&self) -> f64 {
        match self.grid.half_width {
            HalfWidth::Value(v) => v,
            HalfWidth::Keyword(AutoKeyword::Auto) => {
                auto_half_width(self.band.k_up, self.grid.horizon)
            }
        }
    }

    pub fn grid(&self) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::new(
            self.grid.dim,
            self.half_width(),
            self.grid.nx,
            self.grid.horizon,
            self.grid.nt,
        )
    }

    /// The configured domain at another resolution.
    pub fn grid_at(&self, nx: usize, nt: usize) -> Result<SpaceTimeGrid> {
        SpaceTimeGrid::new(self.grid.dim, self.half_width(), nx, self.grid.horizon, nt)
    }

    /// Suites to run, `all` expanded, in canonical order.
    pub fn selected_suites(&self) -> Vec<SuiteName> {
        if self.suites.contains(&SuiteName::All) {
            return SuiteName::EACH.to_vec();
        }
        SuiteName::EACH
            .into_iter()
            .filter(|s| self.suites.contains(s))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().map_err(|e| invalid("grid", e.to_string()))?;
        if let HalfWidth::Value(v) = self.grid.half_width {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(
                    "grid.half_width",
                    format!("must be positive or \"auto\" (got {v})"),
                ));
            }
        }
        self.band().map_err(|e| invalid("band", e.to_string()))?;
        if self.coefficients.intervals == 0 {
            return Err(invalid("coefficients.intervals", "must be at least 1"));
        }
        if self.coefficients.paths == 0 {
            return Err(invalid("coefficients.paths", "must be at least 1"));
        }
        if self.ensemble.channels == 0 {
            return Err(invalid("ensemble.channels", "K_max must be at least 1"));
        }
        let stochastic = self.selected_suites();
        let needs = |s: SuiteName| stochastic.contains(&s);
        if needs(SuiteName::Solver) || needs(SuiteName::MomentSobolev) {
            check_members("ensemble.members", self.ensemble.members)?;
        } else if self.ensemble.members == 0 {
            return Err(invalid("ensemble.members", "must be at least 1"));
        }
        if !(self.kernel.samples >= 1 && self.kernel.stability > 0.0) {
            return Err(invalid("kernel", "samples >= 1 and stability > 0 required"));
        }
        let h = &self.hormander;
        if h.c_grid.is_empty() {
            return Err(invalid("hormander.c_grid", "must not be empty"));
        }
        for (i, c) in h.c_grid.iter().enumerate() {
            let k = c.log2();
            if !(*c > 0.0 && (k - k.round()).abs() < 1e-12) {
                return Err(invalid(
                    format!("hormander.c_grid[{i}]"),
                    format!("{c} is not a dyadic radius 2^k"),
                ));
            }
        }
        if h.centers == 0 || h.point_pairs == 0 || !(h.factor > 1.0) {
            return Err(invalid(
                "hormander",
                "centers, point_pairs >= 1 and factor > 1 required",
            ));
        }
        let o = &self.operators;
        check_refinement("operators", &o.exponents, o.members, o.grids, o.drift)?;
        if self.operators.probes == 0 {
            return Err(invalid("operators.probes", "must be at least 1"));
        }
        let m = &self.maxreg;
        check_refinement("maxreg", &m.exponents, m.members, m.grids, m.drift)?;
        check_stochastic_exponents("moment_sobolev.exponents", &self.moment_sobolev.exponents)?;
        if self.moment_sobolev.probes == 0 {
            return Err(invalid("moment_sobolev.probes", "must be at least 1"));
        }
        for (loc, p) in [("data.f", self.data.f), ("data.g", self.data.g)]
            .into_iter()
            .chain(self.data.catalog.iter().map(|p| ("data.catalog", *p)))
        {
            p.check_domain(self.half_width())
                .map_err(|e| invalid(loc, e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_documented_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!((cfg.grid.dim, cfg.grid.nx, cfg.grid.nt), (1, 256, 256));
        assert_eq!((cfg.ensemble.members, cfg.ensemble.channels), (2000, 4));
        assert_eq!(cfg.selected_suites(), SuiteName::EACH.to_vec());
    }

    #[test]
    fn unknown_keys_are_fatal() {
        let err = ExperimentConfig::from_toml("[grid]\nnx = 64\nnz = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("nz"), "{err}");
        assert!(ExperimentConfig::from_toml("colour = 1").is_err());
    }

    #[test]
    fn exponent_order_is_enforced() {
        let err = ExperimentConfig::from_toml("[maxreg]\nexponents = [[3.0, 2.0]]\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("2 ≤ r ≤ p"), "{err}");
        assert!(err.contains("maxreg.exponents[0]"), "{err}");
    }

    #[test]
    fn small_ensembles_rejected_for_mc_suites() {
        let err = ExperimentConfig::from_toml("[ensemble]\nmembers = 50\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("ensemble.members"), "{err}");
        // Without Monte Carlo suites a small M is fine.
        assert!(
            ExperimentConfig::from_toml("suites = [\"kernel\"]\n[ensemble]\nmembers = 50\n")
                .is_ok()
        );
    }

    #[test]
    fn hash_round_trips() {
        let cfg =
            ExperimentConfig::from_toml("seed = 9\n[grid]\nnx = 64\nhalf_width = 12.0\n").unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let other =
            ExperimentConfig::from_toml("seed = 10\n[grid]\nnx = 64\nhalf_width = 12.0\n").unwrap();
        assert_ne!(cfg.hash(), other.hash());
    }

    #[test]
    fn auto_half_width_bounds_wrap_mass() {
        let l = auto_half_width(4.0, 1.0);
        let tail = statrs::function::erf::erfc(0.5 * l / (4.0 * 4.0f64).sqrt());
        assert!(tail <= 1.0001e-10 && tail > 0.9e-10, "{tail}");
    }
}
