//! The adaptive refinement loop.
//!
//! Each iteration solves the discretized problem on the partition vertices,
//! flags candidate cells with the configured selection rule, and subdivides
//! only the candidates of largest edge length. The loop stops when no cell is
//! flagged or when the largest flagged cell is finer than `2^-J`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{hausdorff, CellPartition, DyadicCell, PointSet, VertexKey};
use crate::operator::GaussianOperator;
use crate::selection::{select_candidates, CandidateSet, SelectionRule};
use crate::solver::{default_tol_gap, solve_discretized_warm, DiscreteMeasure, DualSolution};

/// Weights at or below this magnitude are not reported as atoms.
pub const ATOM_THRESHOLD: f64 = 1e-12;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Duality-gap tolerance; `None` selects `1e-9 * max(1, |y|^2 / 2)`.
    pub tol_gap: Option<f64>,
    /// Maximum active-set updates per solve.
    pub max_solver_iterations: usize,
    /// Hand the feasibility-rescaled dual to the selection rule instead of the raw one.
    pub rescale_dual: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_gap: None,
            max_solver_iterations: 10_000,
            rescale_dual: false,
        }
    }
}

impl SolverSettings {
    pub fn tol_for(&self, y: &[f64]) -> f64 {
        self.tol_gap.unwrap_or_else(|| default_tol_gap(y))
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub operator: GaussianOperator,
    pub data: Vec<f64>,
    pub rule: SelectionRule,
    /// Target precision `J`: stop once every candidate is finer than `2^-J`.
    pub target_level: u32,
    pub initial_partition: CellPartition,
    pub solver: SolverSettings,
    pub max_iterations: usize,
    /// Reference spike locations for the Hausdorff column.
    pub reference: Option<PointSet>,
    /// Re-solve the primal on the candidate vertices only for the reported measure.
    pub restrict_final_to_candidates: bool,
}

impl RunConfig {
    pub fn new(operator: GaussianOperator, data: Vec<f64>, rule: SelectionRule, target_level: u32) -> Self {
        let dim = operator.dim();
        Self {
            operator,
            data,
            rule,
            target_level,
            initial_partition: CellPartition::unit(dim),
            solver: SolverSettings::default(),
            max_iterations: 200,
            reference: None,
            restrict_final_to_candidates: false,
        }
    }

    pub fn with_reference(mut self, reference: PointSet) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.solver = solver;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.target_level < 1 {
            return Err(Error::Config("target level must be at least 1".into()));
        }
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.data.len() != self.operator.len() {
            return Err(Error::Config(format!(
                "data has {} entries but the operator has {} measurements",
                self.data.len(),
                self.operator.len()
            )));
        }
        if self.initial_partition.dim() != self.operator.dim() {
            return Err(Error::Config("initial partition dimension differs from the operator".into()));
        }
        self.initial_partition.validate()
    }
}

/// One row of the refinement history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `|V_k|`.
    pub vertices: usize,
    pub primal: f64,
    pub gap: f64,
    pub feas_violation: f64,
    pub solver_iterations: usize,
    /// The dual vector handed to the selection rule.
    pub q: Vec<f64>,
    pub candidates: CandidateSet,
    pub refined: Vec<DyadicCell>,
    /// Points added by an exchange step that does not refine cells.
    #[serde(default)]
    pub added_points: Vec<Vec<f64>>,
    /// `hausdorff(V_k | X*)` when a reference was supplied.
    pub dist_hausdorff: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    NoCandidates,
    TargetReached,
    IterationCap,
    /// The certificate is at most one everywhere (exchange baseline).
    Certified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementLog {
    pub schema_version: u32,
    pub method: String,
    pub dim: usize,
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_measure: DiscreteMeasure,
    pub final_q: Vec<f64>,
}

impl RefinementLog {
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    /// A log with no iterations, e.g. for header-only tables.
    pub fn empty(method: impl Into<String>, dim: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            method: method.into(),
            dim,
            records: Vec::new(),
            termination: Termination::NoCandidates,
            final_measure: DiscreteMeasure::empty(dim),
            final_q: Vec::new(),
        }
    }
}

#[cfg(not(target_arch = "wasm32"))]
pub(crate) fn clock() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

#[cfg(target_arch = "wasm32")]
pub(crate) fn clock() -> impl Fn() -> f64 {
    || 0.0
}

/// Everything known about one iteration before the partition is refined.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    /// The partition the candidates were selected from.
    pub partition: &'a CellPartition,
    /// `V_k`, in the column order of `solution.weights`.
    pub vertices: &'a PointSet,
    pub solution: &'a DualSolution,
}

/// Runs the adaptive refinement algorithm.
pub fn run(config: &RunConfig) -> Result<RefinementLog> {
    run_with(config, |_| {})
}

/// Like [`run`], calling `observe` after each iteration.
pub fn run_with<F>(config: &RunConfig, mut observe: F) -> Result<RefinementLog>
where
    F: FnMut(&IterationView),
{
    config.validate()?;
    let op = &config.operator;
    let y = &config.data;
    let tol = config.solver.tol_for(y);
    let threshold = (-(config.target_level as f64)).exp2();
    let elapsed = clock();

    let mut partition = config.initial_partition.clone();
    let mut warm: BTreeMap<VertexKey, f64> = BTreeMap::new();
    let mut records = Vec::new();

    let (termination, (vertices, sol, candidates)) = loop {
        let k = records.len();
        let keys: Vec<VertexKey> = partition.vertex_keys().into_iter().collect();
        let vertices = crate::geometry::key_points(partition.dim(), keys.iter());
        let seed: Vec<f64> = keys.iter().map(|key| warm.get(key).copied().unwrap_or(0.0)).collect();

        let sol = solve_discretized_warm(op, &vertices, y, tol, config.solver.max_solver_iterations, Some(&seed))
            .map_err(|e| Error::AtIteration {
                iteration: k,
                source: Box::new(e),
            })?;
        let q = if config.solver.rescale_dual {
            sol.rescaled_dual()
        } else {
            sol.q.clone()
        };
        let candidates = select_candidates(op, &partition, &q, &config.rule).map_err(|e| Error::AtIteration {
            iteration: k,
            source: Box::new(e),
        })?;

        let dist = match &config.reference {
            Some(r) if !r.is_empty() => Some(hausdorff(&vertices, r)?),
            _ => None,
        };

        let max_edge = candidates.max_edge_length();
        let refined: Vec<DyadicCell> = match max_edge {
            Some(h) if h >= threshold => candidates
                .cells
                .iter()
                .filter(|c| c.edge_length() == h)
                .cloned()
                .collect(),
            _ => Vec::new(),
        };

        let record = IterationRecord {
            iteration: k,
            vertices: vertices.len(),
            primal: sol.primal,
            gap: sol.gap,
            feas_violation: sol.feas_violation,
            solver_iterations: sol.iterations,
            q,
            candidates: candidates.clone(),
            refined: refined.clone(),
            added_points: Vec::new(),
            dist_hausdorff: dist,
            wall_time_s: elapsed(),
        };
        observe(&IterationView {
            record: &record,
            partition: &partition,
            vertices: &vertices,
            solution: &sol,
        });
        records.push(record);

        match max_edge {
            None => break (Termination::NoCandidates, (vertices, sol, candidates)),
            Some(h) if h < threshold => break (Termination::TargetReached, (vertices, sol, candidates)),
            _ => {}
        }
        warm = keys.into_iter().zip(sol.weights.iter().copied()).collect();
        partition.refine(&refined).map_err(|e| Error::AtIteration {
            iteration: k,
            source: Box::new(e),
        })?;
        if records.len() >= config.max_iterations {
            break (Termination::IterationCap, (vertices, sol, candidates));
        }
    };

    let final_measure = if config.restrict_final_to_candidates && !candidates.is_empty() {
        let keys: std::collections::BTreeSet<VertexKey> =
            candidates.cells.iter().flat_map(|c| c.vertex_keys()).collect();
        let cand_vertices = crate::geometry::key_points(partition.dim(), keys.iter());
        let restricted = solve_discretized_warm(op, &cand_vertices, y, tol, config.solver.max_solver_iterations, None)?;
        DiscreteMeasure::from_vertices(&cand_vertices, &restricted.weights, ATOM_THRESHOLD)
    } else {
        DiscreteMeasure::from_vertices(&vertices, &sol.weights, ATOM_THRESHOLD)
    };

    Ok(RefinementLog {
        schema_version: SCHEMA_VERSION,
        method: format!("refinement:{}", config.rule),
        dim: op.dim(),
        records,
        termination,
        final_measure,
        final_q: sol.q,
    })
}

/// Maximizes `sign * A*q` from `x0` over `[0,1]^D` by safeguarded Newton / gradient steps.
pub fn ascend(op: &GaussianOperator, q: &[f64], x0: &[f64], max_steps: usize) -> Vec<f64> {
    let d = x0.len();
    let sign = op.certificate(q, x0).signum();
    let f = |x: &[f64]| sign * op.certificate(q, x);
    let project = |x: &mut Vec<f64>| x.iter_mut().for_each(|c| *c = c.clamp(0.0, 1.0));
    let s2 = op.sigma() * op.sigma();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    for _ in 0..max_steps {
        let jet = op.jet(q, &x, true);
        let g = &jet.grad * sign;
        let h = jet.hess.expect("requested") * sign;
        // Newton direction when the Hessian is negative definite, else steepest ascent.
        let newton = h
            .clone()
            .cholesky()
            .is_none()
            .then(|| (-h.clone()).cholesky())
            .flatten()
            .map(|ch| ch.solve(&g));
        let dir: Vec<f64> = match newton {
            Some(step) => step.iter().copied().collect(),
            None => g.iter().map(|v| v * s2 / (fx.abs().max(1e-300))).collect(),
        };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-12 {
            let mut cand: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            project(&mut cand);
            let fc = f(&cand);
            if fc > fx {
                let step: f64 = cand.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                x = cand;
                fx = fc;
                moved = step > 1e-15;
                break;
            }
            t *= 0.5;
        }
        if !moved || d == 0 {
            break;
        }
    }
    x
}

/// Diagnostic estimate of the local maximizers of `|A*q|` with value at least 1.
///
/// Scans a uniform grid of spacing `resolution` together with the partition
/// vertices, keeps discrete local maxima, polishes them by local ascent and
/// returns the distinct polished points with `|A*q| >= 1`. Not used by the
/// algorithm itself.
pub fn local_maximizers(op: &GaussianOperator, q: &[f64], partition: &CellPartition, resolution: f64) -> PointSet {
    let d = op.dim();
    let mut out = PointSet::empty(d);
    if !(resolution > 0.0) || q.iter().all(|&v| v == 0.0) {
        return out;
    }
    let n = (1.0 / resolution).ceil() as usize + 1;
    let total = n.pow(d as u32);
    let coord = |flat: usize| -> Vec<f64> {
        let mut f = flat;
        (0..d)
            .map(|_| {
                let i = f % n;
                f /= n;
                i as f64 / (n - 1) as f64
            })
            .collect()
    };
    let eval = |flat: usize| op.certificate(q, &coord(flat)).abs();
    #[cfg(feature = "parallel")]
    let values: Vec<f64> = {
        use rayon::prelude::*;
        (0..total).into_par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let values: Vec<f64> = (0..total).map(eval).collect();

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    for flat in 0..total {
        let v = values[flat];
        let mut idx = Vec::with_capacity(d);
        let mut f = flat;
        for _ in 0..d {
            idx.push(f % n);
            f /= n;
        }
        let mut is_max = true;
        'nb: for nb in 0..3usize.pow(d as u32) {
            let mut g = nb;
            let mut other = 0usize;
            let mut stride = 1usize;
            let mut center = true;
            for &i in &idx {
                let off = (g % 3) as isize - 1;
                g /= 3;
                center &= off == 0;
                let j = i as isize + off;
                if j < 0 || j >= n as isize {
                    continue 'nb;
                }
                other += j as usize * stride;
                stride *= n;
            }
            if !center && values[other] > v {
                is_max = false;
                break;
            }
        }
        if is_max && v > 0.5 {
            seeds.push(coord(flat));
        }
    }
    seeds.extend(partition.vertices().iter().map(|v| v.to_vec()));

    let mut found: Vec<Vec<f64>> = Vec::new();
    for s in seeds {
        let x = ascend(op, q, &s, 200);
        if op.certificate(q, &x).abs() < 1.0 {
            continue;
        }
        let dup = found.iter().any(|p| {
            p.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() < 1e-7
        });
        if !dup {
            found.push(x);
        }
    }
    for p in found {
        out.push(&p).expect("ascent stays in the unit cube");
    }
    out
}
