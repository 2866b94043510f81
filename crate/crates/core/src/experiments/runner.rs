//! End-to-end runs driven by an [`ExperimentConfig`].

use super::config::{ExperimentConfig, ReferenceSource};
use super::problems::Problem;
use super::reference::{cached_reference, reference_solution};
use crate::baseline::{default_grid_resolution, run_frank_wolfe, FrankWolfeConfig};
use crate::error::Result;
use crate::geometry::PointSet;
use crate::refinement::{run, RefinementLog};

/// Spike locations for the Hausdorff column, as configured.
pub fn reference_points(cfg: &ExperimentConfig, problem: &Problem) -> Result<Option<PointSet>> {
    Ok(match cfg.reference {
        ReferenceSource::None => None,
        ReferenceSource::GroundTruth => Some(problem.ground_truth.locations()),
        ReferenceSource::FineTune => {
            let mu = match &cfg.reference_cache {
                Some(dir) => cached_reference(problem, cfg.finetune_iterations, dir)?,
                None => reference_solution(problem, cfg.finetune_iterations)?,
            };
            Some(mu.locations())
        }
    })
}

/// Runs adaptive refinement on the configured problem.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RefinementLog> {
    let problem = cfg.problem()?;
    let mut rc = cfg.run_config(&problem)?;
    rc.reference = reference_points(cfg, &problem)?;
    run(&rc)
}

/// Runs the Frank-Wolfe baseline on the configured problem.
pub fn run_baseline(cfg: &ExperimentConfig) -> Result<RefinementLog> {
    let problem = cfg.problem()?;
    let mut fw = FrankWolfeConfig::new(problem.operator.clone(), problem.data.clone(), cfg.fw_iterations);
    fw.grid_resolution = cfg.grid_resolution.unwrap_or_else(|| default_grid_resolution(cfg.dimension));
    fw.solver = cfg.solver_settings();
    fw.reference = reference_points(cfg, &problem)?;
    run_frank_wolfe(&fw)
}
