//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes the configuration text shown in the page editor and
//! returns JSON, so the page needs no generated TypeScript types.

use serde::Serialize;
use tvrefine::experiments::{run_experiment, ExperimentConfig};
use tvrefine::selection::{grad_lb_first, grad_lb_second, ub_first_order, ub_second_order, ub_third_order};
use tvrefine::{CellPartition, DyadicCell, Error, Result, SelectionRule};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Row {
    iteration: usize,
    vertices: usize,
    primal: f64,
    dist_hausdorff: Option<f64>,
}

#[derive(Serialize)]
struct Snapshot {
    q: Vec<f64>,
    /// Partition the candidates were selected from, as `[level, index...]`.
    leaves: Vec<Vec<u64>>,
    candidates: Vec<Vec<u64>>,
}

#[derive(Serialize)]
struct RunSummary {
    dim: usize,
    termination: String,
    rows: Vec<Row>,
    snapshots: Vec<Snapshot>,
    atoms: Vec<(f64, Vec<f64>)>,
    truth: Vec<(f64, Vec<f64>)>,
}

#[derive(Serialize)]
struct CellReport {
    upper: [f64; 3],
    grad_lower: [f64; 2],
    sampled_sup: f64,
}

fn encode(cell: &DyadicCell) -> Vec<u64> {
    std::iter::once(cell.level() as u64).chain(cell.index().iter().copied()).collect()
}

fn load(config: &str, rule: &str, target_level: u32, max_iterations: usize) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse(config)?;
    cfg.rule = rule.parse::<SelectionRule>()?;
    cfg.target_level = target_level;
    cfg.max_iterations = max_iterations;
    cfg.reference_cache = None;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs refinement and returns the table plus per-iteration snapshots.
pub fn refine_json(config: &str, rule: &str, target_level: u32, max_iterations: usize) -> Result<String> {
    let cfg = load(config, rule, target_level, max_iterations)?;
    let log = run_experiment(&cfg)?;
    let mut partition = CellPartition::uniform(cfg.dimension, cfg.initial_level)?;
    let mut snapshots = Vec::with_capacity(log.records.len());
    for r in &log.records {
        snapshots.push(Snapshot {
            q: r.q.clone(),
            leaves: partition.leaves().map(encode).collect(),
            candidates: r.candidates.cells.iter().map(encode).collect(),
        });
        partition.refine(&r.refined)?;
    }
    let atoms = |mu: &tvrefine::DiscreteMeasure| mu.atoms().iter().map(|a| (a.weight, a.location.clone())).collect();
    let summary = RunSummary {
        dim: log.dim,
        termination: format!("{:?}", log.termination),
        rows: log
            .records
            .iter()
            .map(|r| Row {
                iteration: r.iteration,
                vertices: r.vertices,
                primal: r.primal,
                dist_hausdorff: r.dist_hausdorff,
            })
            .collect(),
        snapshots,
        atoms: atoms(&log.final_measure),
        truth: atoms(&cfg.ground_truth()?),
    };
    Ok(serde_json::to_string(&summary)?)
}

fn parse_q(q_json: &str) -> Result<Vec<f64>> {
    Ok(serde_json::from_str(q_json)?)
}

/// `|A*q|` on a regular grid with `samples` points per axis (row-major, first axis fastest).
pub fn certificate_json(config: &str, q_json: &str, samples: usize) -> Result<String> {
    let cfg = ExperimentConfig::parse(config)?;
    let op = cfg.operator()?;
    let q = parse_q(q_json)?;
    if q.len() != op.len() {
        return Err(Error::Config(format!("q has {} entries, expected {}", q.len(), op.len())));
    }
    let n = samples.max(2);
    let d = op.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension { dim: d, max: 2 });
    }
    let total = n.pow(d as u32);
    let values: Vec<f64> = (0..total)
        .map(|flat| {
            let x: Vec<f64> = (0..d)
                .map(|axis| ((flat / n.pow(axis as u32)) % n) as f64 / (n - 1) as f64)
                .collect();
            op.certificate(&q, &x).abs()
        })
        .collect();
    Ok(serde_json::to_string(&values)?)
}

/// All bounds of one cell, plus a sampled supremum of `|A*q|` for comparison.
pub fn cell_bounds_json(config: &str, q_json: &str, level: u32, index: &[u64]) -> Result<String> {
    let cfg = ExperimentConfig::parse(config)?;
    let op = cfg.operator()?;
    let q = parse_q(q_json)?;
    let cell = DyadicCell::new(level, index.to_vec())?;
    if cell.dim() != op.dim() {
        return Err(Error::Config("cell dimension differs from the operator".into()));
    }
    let (lo, hi) = cell.bounds();
    let n: usize = if op.dim() == 1 { 1000 } else { 32 };
    let mut sup = 0.0f64;
    for flat in 0..n.pow(op.dim() as u32) {
        let x: Vec<f64> = (0..op.dim())
            .map(|a| lo[a] + (hi[a] - lo[a]) * ((flat / n.pow(a as u32)) % n) as f64 / (n - 1) as f64)
            .collect();
        sup = sup.max(op.certificate(&q, &x).abs());
    }
    let report = CellReport {
        upper: [
            ub_first_order(&op, &q, &cell),
            ub_second_order(&op, &q, &cell),
            ub_third_order(&op, &q, &cell)?,
        ],
        grad_lower: [grad_lb_first(&op, &q, &cell), grad_lb_second(&op, &q, &cell)?],
        sampled_sup: sup,
    };
    Ok(serde_json::to_string(&report)?)
}

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn refine(config: &str, rule: &str, target_level: u32, max_iterations: u32) -> std::result::Result<String, JsError> {
    js(refine_json(config, rule, target_level, max_iterations as usize))
}

#[wasm_bindgen]
pub fn certificate(config: &str, q_json: &str, samples: u32) -> std::result::Result<String, JsError> {
    js(certificate_json(config, q_json, samples as usize))
}

#[wasm_bindgen]
pub fn cell_bounds(config: &str, q_json: &str, level: u32, index: Vec<u64>) -> std::result::Result<String, JsError> {
    js(cell_bounds_json(config, q_json, level, &index))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_D: &str = "dimension = 1\nmeasurements = 20\nsigma = 0.1\namplitude = scaled\nweights = 8, -9\nlocations = 1/3, 2/3\nreference = truth\n";

    #[test]
    fn refine_produces_rows_and_snapshots() {
        let text = refine_json(ONE_D, "second", 10, 50).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows[0]["vertices"], 2);
        assert_eq!(rows[5]["vertices"], 33);
        assert_eq!(v["snapshots"].as_array().unwrap().len(), rows.len());
        assert_eq!(v["snapshots"][0]["leaves"][0], serde_json::json!([0, 0]));
    }

    #[test]
    fn certificate_and_bounds() {
        let run: serde_json::Value = serde_json::from_str(&refine_json(ONE_D, "second", 6, 20).unwrap()).unwrap();
        let q = run["snapshots"][3]["q"].to_string();
        let values: Vec<f64> = serde_json::from_str(&certificate_json(ONE_D, &q, 101).unwrap()).unwrap();
        assert_eq!(values.len(), 101);
        let report: serde_json::Value = serde_json::from_str(&cell_bounds_json(ONE_D, &q, 2, &[1]).unwrap()).unwrap();
        let sup = report["sampled_sup"].as_f64().unwrap();
        for ub in report["upper"].as_array().unwrap() {
            assert!(ub.as_f64().unwrap() >= sup);
        }
    }

    #[test]
    fn errors_are_reported() {
        assert!(refine_json("dimension = 9", "second", 5, 5).is_err());
        assert!(refine_json(ONE_D, "fourth", 5, 5).is_err());
        assert!(certificate_json(ONE_D, "[1, 2]", 10).is_err());
    }
}
