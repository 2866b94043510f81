//! Gaussian measurement operator `a_m(x) = c * exp(-|x - z_m|^2 / (2 sigma^2))`.
//!
//! Besides evaluation of `A*q = sum_m q_m a_m` and its first two derivatives,
//! this module provides per-cell upper bounds on the derivative norms of the
//! `a_m` (the kappa constants used by the selection rules). All bounds are
//! radial envelopes: with `d = dist(z_m, cell)` and `r = d + diam(cell)`,
//! `a_m <= rho(d)` on the cell and `|x - z_m| <= r`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DyadicCell;
use crate::solver::DiscreteMeasure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianOperator {
    dim: usize,
    centers: Vec<f64>,
    sigma: f64,
    amplitude: f64,
}

/// Value, gradient and (optionally) Hessian of `A*q` at a point.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: Option<DMatrix<f64>>,
}

impl GaussianOperator {
    /// Operator with amplitude `1 / (2 pi sigma)` in every dimension.
    pub fn new(dim: usize, centers: Vec<f64>, sigma: f64) -> Result<Self> {
        Self::with_amplitude(dim, centers, sigma, 1.0 / (2.0 * std::f64::consts::PI * sigma))
    }

    pub fn with_amplitude(dim: usize, centers: Vec<f64>, sigma: f64, amplitude: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be at least 1".into()));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::Domain(format!("amplitude must be positive, got {amplitude}")));
        }
        if centers.is_empty() || !centers.len().is_multiple_of(dim) {
            return Err(Error::Domain(format!(
                "{} center coordinates do not form a nonempty list of {dim}-vectors",
                centers.len()
            )));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("non-finite center".into()));
        }
        Ok(Self {
            dim,
            centers,
            sigma,
            amplitude,
        })
    }

    /// `(2 pi)^(-D/2) / sigma`. Coincides with `1 / (2 pi sigma)` for `D = 2`.
    pub fn scaled_amplitude(dim: usize, sigma: f64) -> f64 {
        (2.0 * std::f64::consts::PI).powf(-(dim as f64) / 2.0) / sigma
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of measurements `M`.
    pub fn len(&self) -> usize {
        self.centers.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn center(&self, m: usize) -> &[f64] {
        &self.centers[m * self.dim..(m + 1) * self.dim]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.centers.chunks_exact(self.dim)
    }

    /// Radial profile `rho(d) = c * exp(-d^2 / (2 sigma^2))`.
    pub fn radial(&self, d: f64) -> f64 {
        self.amplitude * (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }

    fn offset(&self, m: usize, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dim, x.iter().zip(self.center(m)).map(|(a, b)| a - b))
    }

    pub fn eval_a(&self, m: usize, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(self.center(m))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.amplitude * (-r2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// `a_m'(x) = -a_m(x) (x - z_m) / sigma^2`.
    pub fn grad_a(&self, m: usize, x: &[f64]) -> DVector<f64> {
        let r = self.offset(m, x);
        let a = self.eval_a(m, x);
        r * (-a / (self.sigma * self.sigma))
    }

    /// `a_m''(x) = a_m(x) [ -I / sigma^2 + r r^T / sigma^4 ]`.
    pub fn hess_a(&self, m: usize, x: &[f64]) -> DMatrix<f64> {
        let r = self.offset(m, x);
        let a = self.eval_a(m, x);
        let s2 = self.sigma * self.sigma;
        let mut h = &r * r.transpose() * (a / (s2 * s2));
        for i in 0..self.dim {
            h[(i, i)] -= a / s2;
        }
        h
    }

    /// Third derivative as a trilinear form `a_m'''(x)[u, v, w]`.
    pub fn third_a(&self, m: usize, x: &[f64], u: &[f64], v: &[f64], w: &[f64]) -> f64 {
        let r = self.offset(m, x);
        let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
        let (ru, rv, rw) = (dot(r.as_slice(), u), dot(r.as_slice(), v), dot(r.as_slice(), w));
        let a = self.eval_a(m, x);
        let s2 = self.sigma * self.sigma;
        a * (-ru * rv * rw / (s2 * s2 * s2) + (dot(u, v) * rw + dot(u, w) * rv + dot(v, w) * ru) / (s2 * s2))
    }

    /// The column `(a_1(x), ..., a_M(x))`.
    pub fn column(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|m| self.eval_a(m, x)).collect()
    }

    pub fn certificate(&self, q: &[f64], x: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.len());
        q.iter()
            .enumerate()
            .filter(|(_, &qm)| qm != 0.0)
            .map(|(m, &qm)| qm * self.eval_a(m, x))
            .sum()
    }

    pub fn certificate_grad(&self, q: &[f64], x: &[f64]) -> DVector<f64> {
        self.jet(q, x, false).grad
    }

    pub fn certificate_hess(&self, q: &[f64], x: &[f64]) -> DMatrix<f64> {
        self.jet(q, x, true).hess.expect("hessian requested")
    }

    /// Fused evaluation of `A*q` and its derivatives at `x`.
    pub fn jet(&self, q: &[f64], x: &[f64], with_hessian: bool) -> Jet {
        let d = self.dim;
        let s2 = self.sigma * self.sigma;
        let mut value = 0.0;
        let mut grad = DVector::zeros(d);
        let mut hess = with_hessian.then(|| DMatrix::zeros(d, d));
        let mut r = vec![0.0; d];
        for (m, &qm) in q.iter().enumerate() {
            if qm == 0.0 {
                continue;
            }
            let mut r2 = 0.0;
            for (i, ri) in r.iter_mut().enumerate() {
                *ri = x[i] - self.centers[m * d + i];
                r2 += *ri * *ri;
            }
            let w = qm * self.amplitude * (-r2 / (2.0 * s2)).exp();
            value += w;
            for i in 0..d {
                grad[i] -= w * r[i] / s2;
            }
            if let Some(h) = hess.as_mut() {
                for i in 0..d {
                    for j in 0..d {
                        h[(i, j)] += w * r[i] * r[j] / (s2 * s2);
                    }
                    h[(i, i)] -= w / s2;
                }
            }
        }
        Jet { value, grad, hess }
    }

    /// `(A mu)_m = sum_s alpha_s a_m(x_s)`.
    pub fn forward(&self, mu: &DiscreteMeasure) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for atom in mu.atoms() {
            for (m, o) in out.iter_mut().enumerate() {
                *o += atom.weight * self.eval_a(m, &atom.location);
            }
        }
        out
    }

    /// Upper bound on `sup_{x in cell} |a_m^(order)(x)|` (tensor operator norm).
    ///
    /// order 0: `rho(d)`; 1: `rho(d) r / s^2`; 2: `rho(d) max(s^2, r^2) / s^4`;
    /// 3: `rho(d) (r^3 + 3 s^2 r) / s^6`.
    pub fn derivative_envelope(&self, order: u32, m: usize, cell: &DyadicCell) -> f64 {
        let d = cell.dist_to_point(self.center(m));
        self.envelope_at(order, d, d + cell.diam())
    }

    fn envelope_at(&self, order: u32, d: f64, r: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let rho = self.radial(d);
        match order {
            0 => rho,
            1 => rho * r / s2,
            2 => rho * s2.max(r * r) / (s2 * s2),
            3 => rho * (r * r * r + 3.0 * s2 * r) / (s2 * s2 * s2),
            _ => f64::INFINITY,
        }
    }

    fn kappa_cell(&self, order: u32, q: &[f64], cell: &DyadicCell) -> f64 {
        let diam = cell.diam();
        q.iter()
            .enumerate()
            .filter(|(_, &qm)| qm != 0.0)
            .map(|(m, &qm)| {
                let d = cell.dist_to_point(self.center(m));
                qm.abs() * self.envelope_at(order, d, d + diam)
            })
            .sum()
    }

    /// `sum_m |q_m| sup_cell |a_m'|`.
    pub fn kappa1_cell(&self, q: &[f64], cell: &DyadicCell) -> f64 {
        self.kappa_cell(1, q, cell)
    }

    /// `sum_m |q_m| sup_cell ||a_m''||_2`, using the Gaussian Hessian envelope.
    pub fn kappa2_cell(&self, q: &[f64], cell: &DyadicCell) -> f64 {
        self.kappa_cell(2, q, cell)
    }

    /// `sum_m |q_m| sup_cell ||a_m'''||` for the trilinear operator norm.
    pub fn kappa3_cell(&self, q: &[f64], cell: &DyadicCell) -> f64 {
        self.kappa_cell(3, q, cell)
    }

    /// Upper estimate of `sup_{|q|_2 <= 1, x in [0,1]^D} ||(A*q)^(order)(x)||`
    /// as `sqrt(M) max_m B_{order,m}([0,1]^D)`.
    pub fn kappa_global(&self, order: u32) -> Result<f64> {
        if !(1..=3).contains(&order) {
            return Err(Error::Domain(format!("derivative order {order} not in 1..=3")));
        }
        let root = DyadicCell::root(self.dim);
        let max = (0..self.len())
            .map(|m| self.derivative_envelope(order, m, &root))
            .fold(0.0, f64::max);
        Ok((self.len() as f64).sqrt() * max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn op1() -> GaussianOperator {
        GaussianOperator::new(1, vec![0.3], 0.1).unwrap()
    }

    #[test]
    fn value_at_center() {
        let op = op1();
        assert_relative_eq!(op.eval_a(0, &[0.3]), 1.0 / (0.2 * std::f64::consts::PI), epsilon = 1e-12);
        assert_relative_eq!(op.eval_a(0, &[0.3]), 1.591549430918953, epsilon = 1e-12);
        assert!(op.eval_a(0, &[1e3]) == 0.0);
    }

    #[test]
    fn value_one_sigma_away() {
        let op = GaussianOperator::new(1, vec![0.5], 2.0 / 20.0).unwrap();
        let v = op.eval_a(0, &[0.6]);
        assert_relative_eq!(v, 1.591549430918953 * (-0.5f64).exp(), epsilon = 1e-12);
        assert!((v - 0.96532).abs() < 1e-5);
    }

    #[test]
    fn derivatives_at_center() {
        let op = GaussianOperator::new(2, vec![0.4, 0.6], 0.2).unwrap();
        let z = [0.4, 0.6];
        assert!(op.grad_a(0, &z).norm() == 0.0);
        let h = op.hess_a(0, &z);
        let a = op.eval_a(0, &z);
        let want = DMatrix::<f64>::identity(2, 2) * (-a / 0.04);
        assert_relative_eq!(h, want, epsilon = 1e-12);
    }

    #[test]
    fn hessian_trace_identity() {
        let op = GaussianOperator::new(2, vec![0.4, 0.6], 0.2).unwrap();
        let x = [0.1, 0.9];
        let a = op.eval_a(0, &x);
        let r2 = 0.3f64 * 0.3 + 0.3 * 0.3;
        let s2 = 0.04;
        assert_relative_eq!(op.hess_a(0, &x).trace(), a * (r2 - 2.0 * s2) / (s2 * s2), max_relative = 1e-12);
    }

    #[test]
    fn certificate_linearity() {
        let op = GaussianOperator::new(1, vec![0.1, 0.5, 0.9], 0.2).unwrap();
        assert_eq!(op.certificate(&[0.0; 3], &[0.4]), 0.0);
        assert_relative_eq!(op.certificate(&[0.0, 1.0, 0.0], &[0.4]), op.eval_a(1, &[0.4]));
        let q = [0.3, -1.2, 2.5];
        let brute: f64 = (0..3).map(|m| q[m] * op.eval_a(m, &[0.37])).sum();
        assert_relative_eq!(op.certificate(&q, &[0.37]), brute, epsilon = 1e-14);
    }

    #[test]
    fn forward_of_two_spikes() {
        let centers: Vec<f64> = (1..=20).map(|m| m as f64 / 20.0).collect();
        let op = GaussianOperator::new(1, centers, 0.1).unwrap();
        let mu = DiscreteMeasure::new(1, vec![(8.0, vec![1.0 / 3.0]), (-9.0, vec![2.0 / 3.0])]).unwrap();
        let y = op.forward(&mu);
        // entry m = 7 (1-based) is index 6
        let want = 8.0 * op.eval_a(6, &[1.0 / 3.0]) - 9.0 * op.eval_a(6, &[2.0 / 3.0]);
        assert_relative_eq!(y[6], want, epsilon = 1e-14);
        assert!(op.forward(&DiscreteMeasure::empty(1)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kappa_zero_dual() {
        let op = op1();
        let c = DyadicCell::root(1);
        assert_eq!(op.kappa1_cell(&[0.0], &c), 0.0);
        assert_eq!(op.kappa2_cell(&[0.0], &c), 0.0);
        assert_eq!(op.kappa3_cell(&[0.0], &c), 0.0);
    }

    #[test]
    fn kappa_closed_forms() {
        // center inside the cell: d = 0
        let op = GaussianOperator::new(2, vec![0.3, 0.3], 0.1).unwrap();
        let cell = DyadicCell::new(1, vec![0, 0]).unwrap();
        let rho0 = 1.0 / (2.0 * std::f64::consts::PI * 0.1);
        let s2: f64 = 0.01;
        let want = rho0 / (s2 * s2) * s2.max(2.0 * 0.25);
        assert_relative_eq!(op.kappa2_cell(&[1.0], &cell), want, max_relative = 1e-14);
        // center at a corner in 1D: B1 = rho(0) |w| / s^2
        let op = GaussianOperator::new(1, vec![0.5], 0.1).unwrap();
        let cell = DyadicCell::new(1, vec![1]).unwrap();
        assert_relative_eq!(op.kappa1_cell(&[1.0], &cell), rho0 * 0.5 / s2, max_relative = 1e-14);
        // homogeneity
        let q = [-1.7];
        assert_relative_eq!(op.kappa3_cell(&[2.0 * q[0]], &cell), 2.0 * op.kappa3_cell(&q, &cell));
    }

    #[test]
    fn kappa_global_single_center() {
        let op = GaussianOperator::new(1, vec![0.5], 0.1).unwrap();
        let root = DyadicCell::root(1);
        for r in 1..=3 {
            assert_eq!(op.kappa_global(r).unwrap(), op.derivative_envelope(r, 0, &root));
        }
        assert!(op.kappa_global(0).is_err());
        assert!(op.kappa_global(4).is_err());
    }

    #[test]
    fn invalid_construction() {
        assert!(GaussianOperator::new(1, vec![0.5], 0.0).is_err());
        assert!(GaussianOperator::new(1, vec![], 0.1).is_err());
        assert!(GaussianOperator::new(2, vec![0.5], 0.1).is_err());
        assert!(GaussianOperator::new(1, vec![f64::NAN], 0.1).is_err());
    }
}
