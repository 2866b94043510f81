//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` and blank lines are ignored. Arrays are comma
//! separated. Numbers may be written as fractions (`1/3`).
//!
//! ```text
//! dimension = 1
//! measurements = 20
//! sigma = 0.1
//! amplitude = scaled
//! weights = 8, -9
//! locations = 1/3, 2/3
//! rule = second
//! target_level = 21
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::problems::{grid_centers, Problem};
use crate::error::{Error, Result};
use crate::geometry::CellPartition;
use crate::operator::GaussianOperator;
use crate::refinement::{RunConfig, SolverSettings};
use crate::selection::{KappaMode, SelectionRule};
use crate::solver::DiscreteMeasure;

/// Normalization of the Gaussian measurement functions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Amplitude {
    /// `1 / (2 pi sigma)`.
    Standard,
    /// `(2 pi)^(-D/2) / sigma`, used by the builtin problems.
    Scaled,
    Fixed(f64),
}

impl Amplitude {
    pub fn value(&self, dim: usize, sigma: f64) -> f64 {
        match *self {
            Amplitude::Standard => 1.0 / (2.0 * std::f64::consts::PI * sigma),
            Amplitude::Scaled => GaussianOperator::scaled_amplitude(dim, sigma),
            Amplitude::Fixed(a) => a,
        }
    }
}

/// Where the Hausdorff column takes its reference spikes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceSource {
    /// Fine-tuned solution started at the ground truth.
    FineTune,
    GroundTruth,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dimension: usize,
    /// Centers `m / measurements` for `m` in `0..measurements` (1D only).
    pub measurements: Option<usize>,
    /// Centers on a `grid_side^D` grid.
    pub grid_side: Option<usize>,
    /// Explicit centers, `dimension` values each; overrides the two above.
    pub centers: Option<Vec<f64>>,
    pub sigma: f64,
    pub amplitude: Amplitude,
    pub weights: Vec<f64>,
    /// `dimension` coordinates per atom.
    pub locations: Vec<f64>,
    pub rule: SelectionRule,
    pub target_level: u32,
    pub max_iterations: usize,
    pub initial_level: u32,
    pub tol_gap: Option<f64>,
    pub max_solver_iterations: usize,
    pub rescale_dual: bool,
    pub reference: ReferenceSource,
    pub finetune_iterations: usize,
    pub reference_cache: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub fw_iterations: usize,
    pub grid_resolution: Option<f64>,
}

const KEYS: &[&str] = &[
    "dimension",
    "measurements",
    "grid_side",
    "centers",
    "sigma",
    "amplitude",
    "weights",
    "locations",
    "rule",
    "kappa_mode",
    "target_level",
    "max_iterations",
    "initial_level",
    "tol_gap",
    "max_solver_iterations",
    "rescale_dual",
    "reference",
    "finetune_iterations",
    "reference_cache",
    "output",
    "fw_iterations",
    "grid_resolution",
];

fn parse_number(s: &str) -> Result<f64> {
    let s = s.trim();
    let parsed = match s.split_once('/') {
        Some((a, b)) => a
            .trim()
            .parse::<f64>()
            .ok()
            .zip(b.trim().parse::<f64>().ok())
            .filter(|(_, d)| *d != 0.0)
            .map(|(n, d)| n / d),
        None => s.parse::<f64>().ok(),
    };
    match parsed {
        Some(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Config(format!("not a finite number: {s:?}"))),
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(parse_number).collect()
}

fn parse_int<T: FromStr>(key: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: not a non-negative integer: {s:?}")))
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true or false, got {other:?}"))),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// The 1D problem: 20 measurements, `sigma = 0.1`, spikes `8 δ(1/3) - 9 δ(2/3)`.
    pub fn builtin_1d() -> Self {
        Self {
            dimension: 1,
            measurements: Some(20),
            grid_side: None,
            centers: None,
            sigma: 0.1,
            amplitude: Amplitude::Scaled,
            weights: vec![8.0, -9.0],
            locations: vec![1.0 / 3.0, 2.0 / 3.0],
            rule: SelectionRule::second(),
            target_level: 21,
            max_iterations: 200,
            initial_level: 0,
            tol_gap: None,
            max_solver_iterations: 10_000,
            rescale_dual: false,
            reference: ReferenceSource::FineTune,
            finetune_iterations: 400_000,
            reference_cache: None,
            output: None,
            fw_iterations: 40,
            grid_resolution: None,
        }
    }

    /// The 2D problem on a 15 x 15 grid with `sigma = 2/15`.
    pub fn builtin_2d() -> Self {
        let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
        Self {
            dimension: 2,
            measurements: None,
            grid_side: Some(15),
            sigma: 2.0 / 15.0,
            weights: vec![-9.0, 8.0, 5.0],
            locations: vec![a, a, a, b, b, b],
            target_level: 12,
            max_iterations: 25,
            ..Self::builtin_1d()
        }
    }

    pub fn builtin(name: &str) -> Result<Self> {
        match name {
            "1d" => Ok(Self::builtin_1d()),
            "2d" => Ok(Self::builtin_2d()),
            other => Err(Error::Config(format!("unknown builtin problem {other:?} (expected 1d or 2d)"))),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::builtin_1d();
        // Fields whose builtin default only makes sense for the 1D problem.
        cfg.measurements = None;
        let mut seen = std::collections::BTreeSet::new();
        let mut kappa_mode = KappaMode::LocalCell;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key {key:?}", lineno + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", lineno + 1)));
            }
            match key {
                "dimension" => cfg.dimension = parse_int(key, value)?,
                "measurements" => cfg.measurements = Some(parse_int(key, value)?),
                "grid_side" => cfg.grid_side = Some(parse_int(key, value)?),
                "centers" => cfg.centers = Some(parse_list(value)?),
                "sigma" => cfg.sigma = parse_number(value)?,
                "amplitude" => {
                    cfg.amplitude = match value {
                        "standard" => Amplitude::Standard,
                        "scaled" => Amplitude::Scaled,
                        v => Amplitude::Fixed(parse_number(v)?),
                    }
                }
                "weights" => cfg.weights = parse_list(value)?,
                "locations" => cfg.locations = parse_list(value)?,
                "rule" => cfg.rule = value.parse()?,
                "kappa_mode" => {
                    kappa_mode = match value {
                        "local" => KappaMode::LocalCell,
                        "global" => KappaMode::GlobalTimesNorm,
                        v => return Err(Error::Config(format!("kappa_mode: expected local or global, got {v:?}"))),
                    }
                }
                "target_level" => cfg.target_level = parse_int(key, value)?,
                "max_iterations" => cfg.max_iterations = parse_int(key, value)?,
                "initial_level" => cfg.initial_level = parse_int(key, value)?,
                "tol_gap" => cfg.tol_gap = Some(parse_number(value)?),
                "max_solver_iterations" => cfg.max_solver_iterations = parse_int(key, value)?,
                "rescale_dual" => cfg.rescale_dual = parse_bool(key, value)?,
                "reference" => {
                    cfg.reference = match value {
                        "finetune" => ReferenceSource::FineTune,
                        "truth" => ReferenceSource::GroundTruth,
                        "none" => ReferenceSource::None,
                        v => {
                            return Err(Error::Config(format!(
                                "reference: expected finetune, truth or none, got {v:?}"
                            )))
                        }
                    }
                }
                "finetune_iterations" => cfg.finetune_iterations = parse_int(key, value)?,
                "reference_cache" => cfg.reference_cache = Some(PathBuf::from(value)),
                "output" => cfg.output = Some(PathBuf::from(value)),
                "fw_iterations" => cfg.fw_iterations = parse_int(key, value)?,
                "grid_resolution" => cfg.grid_resolution = Some(parse_number(value)?),
                _ => unreachable!("key list checked above"),
            }
        }
        if seen.contains("kappa_mode") {
            cfg.rule = cfg.rule.with_kappa_mode(kappa_mode);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration so that `parse(to_text())` reproduces it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("dimension", self.dimension.to_string());
        if let Some(m) = self.measurements {
            line("measurements", m.to_string());
        }
        if let Some(g) = self.grid_side {
            line("grid_side", g.to_string());
        }
        if let Some(c) = &self.centers {
            line("centers", join(c));
        }
        line("sigma", self.sigma.to_string());
        line(
            "amplitude",
            match self.amplitude {
                Amplitude::Standard => "standard".into(),
                Amplitude::Scaled => "scaled".into(),
                Amplitude::Fixed(a) => a.to_string(),
            },
        );
        line("weights", join(&self.weights));
        line("locations", join(&self.locations));
        let mut rule = self.rule;
        let mode = rule.kappa_mode;
        rule.kappa_mode = KappaMode::LocalCell;
        line("rule", rule.to_string());
        line(
            "kappa_mode",
            match mode {
                KappaMode::LocalCell => "local".into(),
                KappaMode::GlobalTimesNorm => "global".into(),
            },
        );
        line("target_level", self.target_level.to_string());
        line("max_iterations", self.max_iterations.to_string());
        line("initial_level", self.initial_level.to_string());
        if let Some(t) = self.tol_gap {
            line("tol_gap", t.to_string());
        }
        line("max_solver_iterations", self.max_solver_iterations.to_string());
        line("rescale_dual", self.rescale_dual.to_string());
        line(
            "reference",
            match self.reference {
                ReferenceSource::FineTune => "finetune".into(),
                ReferenceSource::GroundTruth => "truth".into(),
                ReferenceSource::None => "none".into(),
            },
        );
        line("finetune_iterations", self.finetune_iterations.to_string());
        if let Some(p) = &self.reference_cache {
            line("reference_cache", p.display().to_string());
        }
        if let Some(p) = &self.output {
            line("output", p.display().to_string());
        }
        line("fw_iterations", self.fw_iterations.to_string());
        if let Some(r) = self.grid_resolution {
            line("grid_resolution", r.to_string());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        match (&self.centers, self.measurements, self.grid_side) {
            (Some(c), _, _) if c.is_empty() || c.len() % d != 0 => {
                return Err(Error::Config(format!(
                    "centers must hold a positive multiple of {d} values, got {}",
                    c.len()
                )))
            }
            (Some(_), _, _) => {}
            (None, Some(m), _) if d == 1 && m >= 1 => {}
            (None, Some(_), _) if d != 1 => {
                return Err(Error::Config("measurements applies to dimension 1; use grid_side".into()))
            }
            (None, _, Some(g)) if g >= 2 => {}
            _ => {
                return Err(Error::Config(
                    "centers need one of: centers, measurements (1D) or grid_side >= 2".into(),
                ))
            }
        }
        if self.weights.is_empty() {
            return Err(Error::Config("weights must not be empty".into()));
        }
        if self.weights.contains(&0.0) {
            return Err(Error::Config("weights must be nonzero".into()));
        }
        if self.locations.len() != self.weights.len() * d {
            return Err(Error::Config(format!(
                "locations must hold {} values ({} atoms in dimension {d}), got {}",
                self.weights.len() * d,
                self.weights.len(),
                self.locations.len()
            )));
        }
        if self.locations.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Config("locations must lie in [0, 1]".into()));
        }
        if self.target_level < 1 || self.target_level > crate::geometry::MAX_LEVEL {
            return Err(Error::Config(format!(
                "target_level must be in 1..={}, got {}",
                crate::geometry::MAX_LEVEL,
                self.target_level
            )));
        }
        if self.initial_level >= self.target_level {
            return Err(Error::Config("initial_level must be below target_level".into()));
        }
        if self.max_iterations < 1 || self.max_solver_iterations < 1 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        if let Some(t) = self.tol_gap {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tol_gap must be positive, got {t}")));
            }
        }
        if let Some(r) = self.grid_resolution {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("grid_resolution must be in (0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<GaussianOperator> {
        let d = self.dimension;
        let centers = match (&self.centers, self.measurements, self.grid_side) {
            (Some(c), _, _) => c.clone(),
            (None, Some(m), _) if d == 1 => grid_centers(1, m),
            (None, _, Some(g)) => grid_centers(d, g),
            _ => return Err(Error::Config("no centers configured".into())),
        };
        GaussianOperator::with_amplitude(d, centers, self.sigma, self.amplitude.value(d, self.sigma))
            .map_err(|e| Error::Config(e.to_string()))
    }

    pub fn ground_truth(&self) -> Result<DiscreteMeasure> {
        let d = self.dimension;
        let atoms = self
            .weights
            .iter()
            .zip(self.locations.chunks_exact(d))
            .map(|(&w, x)| (w, x.to_vec()))
            .collect();
        DiscreteMeasure::new(d, atoms).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn problem(&self) -> Result<Problem> {
        self.validate()?;
        Problem::from_ground_truth(self.operator()?, self.ground_truth()?)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol_gap: self.tol_gap,
            max_solver_iterations: self.max_solver_iterations,
            rescale_dual: self.rescale_dual,
        }
    }

    /// Refinement settings for `problem`; the reference is attached separately.
    pub fn run_config(&self, problem: &Problem) -> Result<RunConfig> {
        let mut rc = RunConfig::new(
            problem.operator.clone(),
            problem.data.clone(),
            self.rule,
            self.target_level,
        );
        rc.initial_partition = CellPartition::uniform(self.dimension, self.initial_level)?;
        rc.max_iterations = self.max_iterations;
        rc.solver = self.solver_settings();
        Ok(rc)
    }
}
