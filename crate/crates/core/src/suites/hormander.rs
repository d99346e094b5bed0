//! Hörmander-integral uniformity in c (criterion 3).

use crate::coefficients::CoefficientEnsemble;
use crate::config::{ExperimentConfig, SuiteName};
use crate::error::Result;
use crate::hormander::{
    hormander_uniformity_report, rows_to_csv, HormanderMode, UniformitySettings,
};

use super::{config_paths, derived_seed, purpose, Recorder, SuiteOutput};

const UNIFORMITY: usize = 3;

pub(super) fn run(cfg: &ExperimentConfig) -> Result<SuiteOutput> {
    let mut rec = Recorder::new(SuiteName::Hormander, cfg);
    let paths = rec.step("sample paths", || config_paths(cfg, cfg.grid.dim))?;
    let ensemble = CoefficientEnsemble::from_paths(paths, false)?;
    let horizon = cfg.grid.horizon;
    let h = &cfg.hormander;
    for (m, mode) in [HormanderMode::DeterministicHxx, HormanderMode::StochasticHx]
        .into_iter()
        .enumerate()
    {
        for omega_uniform in [false, true] {
            let settings = UniformitySettings {
                centers: h.centers,
                point_pairs: h.point_pairs,
                omega_uniform,
                seed: derived_seed(cfg.seed, purpose::HORMANDER).wrapping_add(m as u64),
                factor: h.factor,
                center_times: (0.25 * horizon, 0.75 * horizon),
                ..UniformitySettings::default()
            };
            let step = format!("{} omega_uniform={omega_uniform}", mode.label());
            let out = rec.step(&step, || {
                hormander_uniformity_report(&ensemble, mode, &h.c_grid, &settings)
            })?;
            let file = format!(
                "hormander_{}{}.csv",
                mode.label(),
                if omega_uniform { "_omega_uniform" } else { "" }
            );
            rec.artifact(&file, rows_to_csv(&out.rows));
            rec.push(UNIFORMITY, out.report);
            rec.push(UNIFORMITY, out.tail_report);
        }
    }
    Ok(rec.finish())
}
