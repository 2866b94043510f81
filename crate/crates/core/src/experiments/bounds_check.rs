//! Randomized sweep comparing every selection bound with dense sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::DyadicCell;
use crate::operator::GaussianOperator;
use crate::selection::{grad_lb_first, grad_lb_second, ub_first_order, ub_second_order, ub_third_order};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundViolations {
    pub checked: usize,
    pub violations: usize,
    /// Largest amount by which a bound was on the wrong side (0 if never).
    pub max_excess: f64,
}

impl BoundViolations {
    fn record(&mut self, excess: f64, tol: f64) {
        self.checked += 1;
        if excess > tol {
            self.violations += 1;
        }
        self.max_excess = self.max_excess.max(excess);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundsCheckReport {
    pub samples: usize,
    pub seed: u64,
    /// Upper bounds of order 1, 2, 3 against the sampled `sup |A*q|`.
    pub upper: [BoundViolations; 3],
    /// First- and second-order gradient lower bounds against the sampled `inf |grad A*q|`.
    pub grad_lower: [BoundViolations; 2],
    /// `ub2 - kappa2 diam^2` and `ub3 - kappa3 diam^3 / 3` against the sampled `sup |A*q|`.
    pub taylor_gap: [BoundViolations; 2],
}

impl BoundsCheckReport {
    pub fn total_violations(&self) -> usize {
        self.upper
            .iter()
            .chain(&self.grad_lower)
            .chain(&self.taylor_gap)
            .map(|b| b.violations)
            .sum()
    }
}

/// Slack allowed on the Taylor-gap inequalities, which compare with a sampled supremum.
pub const TAYLOR_GAP_SLACK: f64 = 1e-3;

/// A random operator, dual vector and cell in dimension 1 or 2.
pub fn random_case(rng: &mut impl Rng, dim: usize) -> (GaussianOperator, Vec<f64>, DyadicCell) {
    let m = rng.random_range(3..=12);
    let sigma = rng.random_range(0.05..0.3);
    let centers: Vec<f64> = (0..m * dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let op = GaussianOperator::with_amplitude(dim, centers, sigma, GaussianOperator::scaled_amplitude(dim, sigma))
        .expect("valid random operator");
    let scale = 1.0 / op.amplitude();
    let q: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    let level = rng.random_range(0..=8u32);
    let index: Vec<u64> = (0..dim).map(|_| rng.random_range(0..1u64 << level)).collect();
    let cell = DyadicCell::new(level, index).expect("index within range");
    (op, q, cell)
}

/// Sampled `(sup |A*q|, inf |grad A*q|)` over the cell vertices plus uniform random points.
pub fn sample_cell(
    op: &GaussianOperator,
    q: &[f64],
    cell: &DyadicCell,
    points: usize,
    rng: &mut impl Rng,
) -> (f64, f64) {
    let (lo, hi) = cell.bounds();
    let mut sup = 0.0f64;
    let mut inf = f64::INFINITY;
    let mut visit = |x: &[f64]| {
        sup = sup.max(op.certificate(q, x).abs());
        inf = inf.min(op.certificate_grad(q, x).norm());
    };
    for v in cell.vertices().iter() {
        visit(v);
    }
    let mut x = vec![0.0; lo.len()];
    for _ in 0..points.saturating_sub(1 << lo.len()) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = rng.random_range(lo[i]..=hi[i]);
        }
        visit(&x);
    }
    (sup, inf)
}

/// Checks all bounds on `samples` random cases (alternating 1D and 2D).
pub fn check_bounds(samples: usize, seed: u64, points_per_cell: usize) -> Result<BoundsCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BoundsCheckReport {
        samples,
        seed,
        ..Default::default()
    };
    for i in 0..samples {
        let dim = 1 + i % 2;
        let (op, q, cell) = random_case(&mut rng, dim);
        let (sup, inf) = sample_cell(&op, &q, &cell, points_per_cell, &mut rng);
        let rel = 1e-12 * sup.max(1.0);
        let ub = [
            ub_first_order(&op, &q, &cell),
            ub_second_order(&op, &q, &cell),
            ub_third_order(&op, &q, &cell)?,
        ];
        for (slot, bound) in report.upper.iter_mut().zip(ub) {
            slot.record(sup - bound, rel);
        }
        let lb = [grad_lb_first(&op, &q, &cell), grad_lb_second(&op, &q, &cell)?];
        for (slot, bound) in report.grad_lower.iter_mut().zip(lb) {
            slot.record(bound - inf, 1e-12 * inf.max(1.0));
        }
        let diam = cell.diam();
        let gaps = [
            ub[1] - op.kappa2_cell(&q, &cell) * diam * diam,
            ub[2] - op.kappa3_cell(&q, &cell) * diam.powi(3) / 3.0,
        ];
        for (slot, low) in report.taylor_gap.iter_mut().zip(gaps) {
            slot.record(low - sup, TAYLOR_GAP_SLACK);
        }
    }
    Ok(report)
}
