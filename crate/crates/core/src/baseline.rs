//! Frank-Wolfe exchange baseline.
//!
//! Each iteration solves the discretized problem on the points gathered so far
//! and adds one approximate global maximizer of `|A*q|`, found by a grid scan
//! followed by projected gradient ascent. The maximizer is a heuristic: nothing
//! certifies that the scan found the global maximum.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::{hausdorff, CellPartition, PointSet};
use crate::operator::GaussianOperator;
use crate::refinement::{clock, IterationRecord, RefinementLog, SolverSettings, Termination, ATOM_THRESHOLD, SCHEMA_VERSION};
use crate::selection::CandidateSet;
use crate::solver::{solve_discretized_warm, DiscreteMeasure};

/// Stop once `max |A*q| <= 1 + CERTIFY_TOL`.
pub const CERTIFY_TOL: f64 = 1e-9;

/// Projected ascent steps applied to the best grid point.
pub const ASCENT_STEPS: usize = 50;

/// Grid spacing used by the CLI: `1e-4` in 1D, `1/512` per axis otherwise.
pub fn default_grid_resolution(dim: usize) -> f64 {
    if dim == 1 {
        1e-4
    } else {
        1.0 / 512.0
    }
}

#[derive(Clone, Debug)]
pub struct FrankWolfeConfig {
    pub operator: GaussianOperator,
    pub data: Vec<f64>,
    pub grid_resolution: f64,
    pub iterations: usize,
    pub solver: SolverSettings,
    pub reference: Option<PointSet>,
}

impl FrankWolfeConfig {
    pub fn new(operator: GaussianOperator, data: Vec<f64>, iterations: usize) -> Self {
        let res = default_grid_resolution(operator.dim());
        Self {
            operator,
            data,
            grid_resolution: res,
            iterations,
            solver: SolverSettings::default(),
            reference: None,
        }
    }
}

/// Best point of a uniform grid of spacing about `resolution`, by `|A*q|`.
pub fn grid_argmax(op: &GaussianOperator, q: &[f64], resolution: f64) -> (Vec<f64>, f64) {
    let d = op.dim();
    let n = (1.0 / resolution).ceil() as usize + 1;
    let total = n.pow(d as u32);
    let point = |flat: usize| -> Vec<f64> {
        let mut f = flat;
        (0..d)
            .map(|_| {
                let i = f % n;
                f /= n;
                i as f64 / (n - 1) as f64
            })
            .collect()
    };
    let score = |flat: usize| (op.certificate(q, &point(flat)).abs(), flat);
    let pick = |a: (f64, usize), b: (f64, usize)| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };
    #[cfg(feature = "parallel")]
    let (value, best) = {
        use rayon::prelude::*;
        (0..total).into_par_iter().map(score).reduce(|| (-1.0, usize::MAX), pick)
    };
    #[cfg(not(feature = "parallel"))]
    let (value, best) = (0..total).map(score).fold((-1.0, usize::MAX), pick);
    (point(best), value)
}

/// Projected gradient ascent on `|A*q|` with step `sigma^2 / 4`, returning
/// the best iterate visited (the fixed step can overshoot where `|A*q|` is large).
pub fn polish(op: &GaussianOperator, q: &[f64], x0: &[f64], steps: usize) -> Vec<f64> {
    let step = op.sigma() * op.sigma() / 4.0;
    let mut x = x0.to_vec();
    let mut best = (op.certificate(q, &x).abs(), x.clone());
    for _ in 0..steps {
        let sign = op.certificate(q, &x).signum();
        let g = op.certificate_grad(q, &x);
        for (xi, gi) in x.iter_mut().zip(g.iter()) {
            *xi = (*xi + step * sign * gi).clamp(0.0, 1.0);
        }
        let v = op.certificate(q, &x).abs();
        if v > best.0 {
            best = (v, x.clone());
        }
    }
    best.1
}

/// Runs Frank-Wolfe from the corners of the unit cube.
pub fn run_frank_wolfe(config: &FrankWolfeConfig) -> Result<RefinementLog> {
    if !(config.grid_resolution > 0.0) {
        return Err(Error::Config(format!(
            "grid resolution must be positive, got {}",
            config.grid_resolution
        )));
    }
    let op = &config.operator;
    let y = &config.data;
    if y.len() != op.len() {
        return Err(Error::Config(format!(
            "data has {} entries but the operator has {} measurements",
            y.len(),
            op.len()
        )));
    }
    let tol = config.solver.tol_for(y);
    let mut points = CellPartition::unit(op.dim()).vertices();
    let mut weights: Vec<f64> = vec![0.0; points.len()];
    let mut records = Vec::new();
    let elapsed = clock();

    let (termination, sol) = loop {
        let k = records.len();
        let sol = solve_discretized_warm(op, &points, y, tol, config.solver.max_solver_iterations, Some(&weights))
            .map_err(|e| Error::AtIteration {
                iteration: k,
                source: Box::new(e),
            })?;
        let q = if config.solver.rescale_dual {
            sol.rescaled_dual()
        } else {
            sol.q.clone()
        };
        let (seed, _) = grid_argmax(op, &q, config.grid_resolution);
        let best = polish(op, &q, &seed, ASCENT_STEPS);
        let value = op.certificate(&q, &best).abs();
        let certified = value <= 1.0 + CERTIFY_TOL;
        let last = certified || k + 1 >= config.iterations;

        let dist = match &config.reference {
            Some(r) if !r.is_empty() => Some(hausdorff(&points, r)?),
            _ => None,
        };
        records.push(IterationRecord {
            iteration: k,
            vertices: points.len(),
            primal: sol.primal,
            gap: sol.gap,
            feas_violation: sol.feas_violation,
            solver_iterations: sol.iterations,
            q,
            candidates: CandidateSet::default(),
            refined: Vec::new(),
            added_points: if last { Vec::new() } else { vec![best.clone()] },
            dist_hausdorff: dist,
            wall_time_s: elapsed(),
        });
        if certified {
            break (Termination::Certified, sol);
        }
        if last {
            break (Termination::IterationCap, sol);
        }
        weights = sol.weights.clone();
        points.push(&best)?;
        weights.push(0.0);
    };

    Ok(RefinementLog {
        schema_version: SCHEMA_VERSION,
        method: "frank-wolfe".into(),
        dim: op.dim(),
        records,
        termination,
        final_measure: merge_atoms(&DiscreteMeasure::from_vertices(&points, &sol.weights, ATOM_THRESHOLD)),
        final_q: sol.q,
    })
}

/// Combines atoms placed at identical locations.
fn merge_atoms(mu: &DiscreteMeasure) -> DiscreteMeasure {
    let mut by_location: BTreeMap<Vec<u64>, (f64, Vec<f64>)> = BTreeMap::new();
    for atom in mu.atoms() {
        let key: Vec<u64> = atom.location.iter().map(|c| c.to_bits()).collect();
        by_location
            .entry(key)
            .or_insert_with(|| (0.0, atom.location.clone()))
            .0 += atom.weight;
    }
    let atoms = by_location.into_values().filter(|(w, _)| *w != 0.0).collect();
    DiscreteMeasure::new(mu.dim(), atoms).expect("locations come from a valid measure")
}
