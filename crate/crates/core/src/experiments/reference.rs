//! Reference solutions obtained by fine-tuning the ground truth, with an on-disk cache.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::problems::Problem;
use crate::error::Result;
use crate::solver::{fine_tune, fine_tune_step, DiscreteMeasure};

/// Runs fixed-step fine-tuning from the ground truth.
pub fn reference_solution(problem: &Problem, iterations: usize) -> Result<DiscreteMeasure> {
    let step = fine_tune_step(&problem.operator, &problem.ground_truth, &problem.data);
    fine_tune(&problem.operator, &problem.ground_truth, &problem.data, step, iterations)
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    key: String,
    measure: DiscreteMeasure,
}

#[derive(Serialize)]
struct KeyInput<'a> {
    problem: &'a Problem,
    iterations: usize,
}

/// Hex SHA-256 of the problem and the iteration count.
pub fn cache_key(problem: &Problem, iterations: usize) -> String {
    let json = serde_json::to_vec(&KeyInput { problem, iterations }).expect("problem serializes");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn cache_path(dir: &Path, problem: &Problem, iterations: usize) -> PathBuf {
    dir.join(format!("reference-{}.json", cache_key(problem, iterations)))
}

/// Like [`reference_solution`], reusing `dir/reference-<key>.json` when present.
pub fn cached_reference(problem: &Problem, iterations: usize, dir: &Path) -> Result<DiscreteMeasure> {
    let key = cache_key(problem, iterations);
    let path = cache_path(dir, problem, iterations);
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(entry) = serde_json::from_str::<CacheEntry>(&text) {
            if entry.key == key {
                return Ok(entry.measure);
            }
        }
    }
    let measure = reference_solution(problem, iterations)?;
    fs::create_dir_all(dir)?;
    fs::write(&path, serde_json::to_string(&CacheEntry { key, measure: measure.clone() })?)?;
    Ok(measure)
}
