//! Candidate-cell selection.
//!
//! A cell is a candidate when a certified upper bound on `sup_cell |A*q|`
//! reaches 1, optionally combined with a certified lower bound on
//! `inf_cell |grad A*q|` being non-positive. Upper bounds are Taylor
//! expansions at a vertex (orders 1 to 3) plus a kappa remainder; the
//! smallest value over the cell's vertices is kept.

pub mod quadratic;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CellPartition, DyadicCell};
use crate::operator::{GaussianOperator, Jet};

pub use quadratic::{max_abs_quadratic_on_box, min_affine_norm_on_box};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundOrder {
    First,
    Second,
    Third,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientFilter {
    None,
    FirstOrderGrad,
    SecondOrderGrad,
}

/// How the Lipschitz remainders are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaMode {
    /// Per-cell sums `sum_m |q_m| B_m(cell)`.
    #[default]
    LocalCell,
    /// Domain-wide constants times `|q|_2`.
    GlobalTimesNorm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRule {
    pub order: BoundOrder,
    pub gradient_filter: GradientFilter,
    pub kappa_mode: KappaMode,
}

impl SelectionRule {
    pub const fn new(order: BoundOrder, gradient_filter: GradientFilter) -> Self {
        Self {
            order,
            gradient_filter,
            kappa_mode: KappaMode::LocalCell,
        }
    }

    pub const fn first() -> Self {
        Self::new(BoundOrder::First, GradientFilter::None)
    }

    pub const fn second() -> Self {
        Self::new(BoundOrder::Second, GradientFilter::None)
    }

    pub const fn second_with_grad() -> Self {
        Self::new(BoundOrder::Second, GradientFilter::FirstOrderGrad)
    }

    pub const fn third() -> Self {
        Self::new(BoundOrder::Third, GradientFilter::None)
    }

    pub const fn third_with_grad2() -> Self {
        Self::new(BoundOrder::Third, GradientFilter::SecondOrderGrad)
    }

    pub fn with_kappa_mode(mut self, mode: KappaMode) -> Self {
        self.kappa_mode = mode;
        self
    }

    /// The same rule without its gradient filter.
    pub fn bound_only(self) -> Self {
        Self {
            gradient_filter: GradientFilter::None,
            ..self
        }
    }

    /// Rules available from the command line.
    pub fn all() -> [SelectionRule; 5] {
        [
            Self::first(),
            Self::second(),
            Self::second_with_grad(),
            Self::third(),
            Self::third_with_grad2(),
        ]
    }

    fn needs_hessian(&self) -> bool {
        self.order == BoundOrder::Third || self.gradient_filter == GradientFilter::SecondOrderGrad
    }
}

impl fmt::Display for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let order = match self.order {
            BoundOrder::First => "first",
            BoundOrder::Second => "second",
            BoundOrder::Third => "third",
        };
        let grad = match self.gradient_filter {
            GradientFilter::None => "",
            GradientFilter::FirstOrderGrad => "+grad",
            GradientFilter::SecondOrderGrad => "+grad2",
        };
        write!(f, "{order}{grad}")?;
        if self.kappa_mode == KappaMode::GlobalTimesNorm {
            write!(f, "@global")?;
        }
        Ok(())
    }
}

impl FromStr for SelectionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (body, mode) = match s.trim().strip_suffix("@global") {
            Some(b) => (b, KappaMode::GlobalTimesNorm),
            None => (s.trim(), KappaMode::LocalCell),
        };
        let rule = match body {
            "first" => Self::first(),
            "second" => Self::second(),
            "second+grad" => Self::second_with_grad(),
            "third" => Self::third(),
            "third+grad2" => Self::third_with_grad2(),
            "first+grad" => Self::new(BoundOrder::First, GradientFilter::FirstOrderGrad),
            "second+grad2" => Self::new(BoundOrder::Second, GradientFilter::SecondOrderGrad),
            "third+grad" => Self::new(BoundOrder::Third, GradientFilter::FirstOrderGrad),
            other => {
                return Err(Error::Config(format!(
                    "unknown rule '{other}' (expected first|second|second+grad|third|third+grad2)"
                )))
            }
        };
        Ok(rule.with_kappa_mode(mode))
    }
}

/// Supplies the kappa remainders for a given dual vector.
#[derive(Clone, Copy, Debug)]
pub struct KappaSource {
    global: Option<[f64; 3]>,
}

impl KappaSource {
    pub fn new(op: &GaussianOperator, q: &[f64], mode: KappaMode) -> Self {
        let global = match mode {
            KappaMode::LocalCell => None,
            KappaMode::GlobalTimesNorm => {
                let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let k = |r| op.kappa_global(r).expect("orders 1..=3 are valid") * qn;
                Some([k(1), k(2), k(3)])
            }
        };
        Self { global }
    }

    pub fn local() -> Self {
        Self { global: None }
    }

    pub fn kappa(&self, order: u32, op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> f64 {
        match (self.global, order) {
            (Some(g), 1..=3) => g[order as usize - 1],
            (_, 1) => op.kappa1_cell(q, cell),
            (_, 2) => op.kappa2_cell(q, cell),
            _ => op.kappa3_cell(q, cell),
        }
    }
}

fn vertex_jets(op: &GaussianOperator, q: &[f64], cell: &DyadicCell, hessian: bool) -> Vec<(Vec<f64>, Jet)> {
    cell.vertices()
        .iter()
        .map(|v| (v.to_vec(), op.jet(q, v, hessian)))
        .collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn first_order(jets: &[(Vec<f64>, Jet)], kappa1: f64, diam: f64) -> f64 {
    jets.iter().map(|(_, j)| j.value.abs()).fold(f64::INFINITY, f64::min) + kappa1 * diam
}

fn second_order(jets: &[(Vec<f64>, Jet)], kappa2: f64) -> f64 {
    jets.iter()
        .map(|(v, jet)| {
            jets.iter()
                .map(|(x, _)| {
                    let lin: f64 = jet
                        .grad
                        .iter()
                        .zip(x.iter().zip(v))
                        .map(|(g, (xi, vi))| g * (xi - vi))
                        .sum();
                    (jet.value + lin).abs() + 0.5 * kappa2 * dist2(x, v)
                })
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min)
}

fn relative_box(cell: &DyadicCell, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = cell.bounds();
    (
        lo.iter().zip(v).map(|(l, vi)| l - vi).collect(),
        hi.iter().zip(v).map(|(h, vi)| h - vi).collect(),
    )
}

fn third_order(cell: &DyadicCell, jets: &[(Vec<f64>, Jet)], kappa3: f64) -> Result<f64> {
    let mut best = f64::INFINITY;
    for (v, jet) in jets {
        let h = jet.hess.as_ref().expect("third-order bound needs Hessians");
        let (lo, hi) = relative_box(cell, v);
        let hrow: Vec<f64> = h.transpose().iter().copied().collect();
        best = best.min(max_abs_quadratic_on_box(jet.value, jet.grad.as_slice(), &hrow, &lo, &hi)?);
    }
    Ok(best + kappa3 * cell.diam().powi(3) / 6.0)
}

fn grad_first(jets: &[(Vec<f64>, Jet)], kappa2: f64, diam: f64) -> f64 {
    jets.iter().map(|(_, j)| j.grad.norm()).fold(0.0, f64::max) - kappa2 * diam
}

fn grad_second(cell: &DyadicCell, jets: &[(Vec<f64>, Jet)], kappa3: f64) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (v, jet) in jets {
        let h = jet.hess.as_ref().expect("second-order gradient bound needs Hessians");
        let (lo, hi) = relative_box(cell, v);
        let hrow: Vec<f64> = h.transpose().iter().copied().collect();
        best = best.max(min_affine_norm_on_box(jet.grad.as_slice(), &hrow, &lo, &hi)?);
    }
    Ok(best - kappa3 * cell.diam().powi(2) / 2.0)
}

/// `min_v |A*q(v)| + kappa_1 diam`.
pub fn ub_first_order(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> f64 {
    first_order(&vertex_jets(op, q, cell, false), op.kappa1_cell(q, cell), cell.diam())
}

/// `min_v max_{x in vert} |A*q(v) + <grad A*q(v), x - v>| + kappa_2 |x - v|^2 / 2`.
pub fn ub_second_order(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> f64 {
    second_order(&vertex_jets(op, q, cell, false), op.kappa2_cell(q, cell))
}

/// Exact second-order Taylor maximum over the cell plus `kappa_3 diam^3 / 6`.
pub fn ub_third_order(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> Result<f64> {
    third_order(cell, &vertex_jets(op, q, cell, true), op.kappa3_cell(q, cell))
}

/// `max_v |grad A*q(v)| - kappa_2 diam`.
pub fn grad_lb_first(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> f64 {
    grad_first(&vertex_jets(op, q, cell, false), op.kappa2_cell(q, cell), cell.diam())
}

/// `max_v min_{x in cell} |grad A*q(v) + (A*q)''(v)(x - v)| - kappa_3 diam^2 / 2`.
pub fn grad_lb_second(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> Result<f64> {
    grad_second(cell, &vertex_jets(op, q, cell, true), op.kappa3_cell(q, cell))
}

/// Bounds of one cell under a rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEvaluation {
    pub upper: f64,
    /// Gradient-norm lower bound, when the rule filters on it.
    pub grad_lower: Option<f64>,
}

impl CellEvaluation {
    /// Upper bound at least 1, and gradient lower bound at most 0 when present.
    pub fn selected(&self) -> bool {
        self.upper >= 1.0 && self.grad_lower.is_none_or(|g| g <= 0.0)
    }
}

/// Evaluates `rule` on one cell.
pub fn evaluate_cell(
    op: &GaussianOperator,
    q: &[f64],
    cell: &DyadicCell,
    rule: &SelectionRule,
    kappas: &KappaSource,
) -> Result<CellEvaluation> {
    let jets = vertex_jets(op, q, cell, rule.needs_hessian());
    let diam = cell.diam();
    let upper = match rule.order {
        BoundOrder::First => first_order(&jets, kappas.kappa(1, op, q, cell), diam),
        BoundOrder::Second => second_order(&jets, kappas.kappa(2, op, q, cell)),
        BoundOrder::Third => third_order(cell, &jets, kappas.kappa(3, op, q, cell))?,
    };
    let grad_lower = match rule.gradient_filter {
        GradientFilter::None => None,
        // Skip the lower bound when the cell is already rejected.
        _ if upper < 1.0 => Some(f64::INFINITY),
        GradientFilter::FirstOrderGrad => Some(grad_first(&jets, kappas.kappa(2, op, q, cell), diam)),
        GradientFilter::SecondOrderGrad => Some(grad_second(cell, &jets, kappas.kappa(3, op, q, cell))?),
    };
    Ok(CellEvaluation { upper, grad_lower })
}

/// The cells flagged by a rule, in partition order, with their upper bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub cells: Vec<DyadicCell>,
    pub bound_values: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Largest edge length among the candidates.
    pub fn max_edge_length(&self) -> Option<f64> {
        self.cells.iter().map(|c| c.edge_length()).reduce(f64::max)
    }

    pub fn contains(&self, cell: &DyadicCell) -> bool {
        self.cells.contains(cell)
    }
}

/// Evaluates every leaf of `partition` and returns those selected by `rule`.
pub fn select_candidates(
    op: &GaussianOperator,
    partition: &CellPartition,
    q: &[f64],
    rule: &SelectionRule,
) -> Result<CandidateSet> {
    let kappas = KappaSource::new(op, q, rule.kappa_mode);
    let leaves: Vec<&DyadicCell> = partition.leaves().collect();
    let eval = |c: &&DyadicCell| evaluate_cell(op, q, c, rule, &kappas);
    #[cfg(feature = "parallel")]
    let evals: Vec<Result<CellEvaluation>> = {
        use rayon::prelude::*;
        leaves.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let evals: Vec<Result<CellEvaluation>> = leaves.iter().map(eval).collect();

    let mut out = CandidateSet::default();
    for (cell, e) in leaves.into_iter().zip(evals) {
        let e = e?;
        if e.selected() {
            out.cells.push(cell.clone());
            out.bound_values.push(e.upper);
        }
    }
    Ok(out)
}

/// `|A*q|` and its gradient norm, for diagnostics.
pub fn certificate_abs_and_grad(op: &GaussianOperator, q: &[f64], x: &[f64]) -> (f64, f64) {
    let jet = op.jet(q, x, false);
    (jet.value.abs(), DVector::norm(&jet.grad))
}
