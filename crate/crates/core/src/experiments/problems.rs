//! Builtin super-resolution problems.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::GaussianOperator;
use crate::solver::DiscreteMeasure;

/// A measurement operator, its noiseless data and the measure that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub operator: GaussianOperator,
    pub data: Vec<f64>,
    pub ground_truth: DiscreteMeasure,
}

impl Problem {
    pub fn from_ground_truth(operator: GaussianOperator, ground_truth: DiscreteMeasure) -> Result<Self> {
        if ground_truth.dim() != operator.dim() {
            return Err(Error::Config("ground truth dimension differs from the operator".into()));
        }
        let data = operator.forward(&ground_truth);
        Ok(Self {
            operator,
            data,
            ground_truth,
        })
    }
}

/// Centers `(m_1, ..., m_D) / side` for `m_i` in `0..side`, first axis fastest.
pub fn grid_centers(dim: usize, side: usize) -> Vec<f64> {
    let total = side.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    for flat in 0..total {
        let mut f = flat;
        for _ in 0..dim {
            out.push((f % side) as f64 / side as f64);
            f /= side;
        }
    }
    out
}

/// 1D problem: 20 Gaussian measurements of width 0.1 observing `8 δ(1/3) - 9 δ(2/3)`.
pub fn make_problem_1d() -> Problem {
    let sigma = 0.1;
    let op = GaussianOperator::with_amplitude(
        1,
        grid_centers(1, 20),
        sigma,
        GaussianOperator::scaled_amplitude(1, sigma),
    )
    .expect("valid builtin operator");
    let truth = DiscreteMeasure::new(1, vec![(8.0, vec![1.0 / 3.0]), (-9.0, vec![2.0 / 3.0])])
        .expect("valid builtin measure");
    Problem::from_ground_truth(op, truth).expect("dimensions agree")
}

/// 2D problem on a `grid_side x grid_side` grid of centers observing
/// `-9 δ(1/3,1/3) + 8 δ(1/3,2/3) + 5 δ(2/3,2/3)`.
pub fn make_problem_2d(grid_side: usize, sigma: f64) -> Result<Problem> {
    if grid_side < 2 {
        return Err(Error::Config(format!("grid_side must be at least 2, got {grid_side}")));
    }
    let op = GaussianOperator::with_amplitude(
        2,
        grid_centers(2, grid_side),
        sigma,
        GaussianOperator::scaled_amplitude(2, sigma),
    )?;
    let (a, b) = (1.0 / 3.0, 2.0 / 3.0);
    let truth = DiscreteMeasure::new(2, vec![(-9.0, vec![a, a]), (8.0, vec![a, b]), (5.0, vec![b, b])])?;
    Problem::from_ground_truth(op, truth)
}
