//! Discretized primal/dual pair for the quadratic data fit `f(q) = |q - y|^2 / 2`.
//!
//! On a finite vertex set `V` the primal is the LASSO
//! `min_alpha |alpha|_1 + |G alpha - y|^2 / 2` with `G[m, j] = a_m(v_j)`,
//! and the dual solution is recovered as `q = y - G alpha`. Its dual
//! objective is `<q, y> - |q|^2 / 2` subject to `|G^T q|_inf <= 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::linalg::PivotedQr;
use crate::operator::GaussianOperator;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub weight: f64,
    pub location: Vec<f64>,
}

/// Finite combination of Dirac masses on `[0,1]^D`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            atoms: Vec::new(),
        }
    }

    pub fn new(dim: usize, atoms: Vec<(f64, Vec<f64>)>) -> Result<Self> {
        let mut out = Self::empty(dim);
        for (w, x) in atoms {
            out.push(w, x)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, weight: f64, location: Vec<f64>) -> Result<()> {
        if location.len() != self.dim {
            return Err(Error::Domain(format!(
                "atom location has dimension {}, expected {}",
                location.len(),
                self.dim
            )));
        }
        if !weight.is_finite() || location.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Domain(format!(
                "atom ({weight}, {location:?}) is not a finite mass inside [0,1]^D"
            )));
        }
        self.atoms.push(Atom { weight, location });
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight.abs()).sum()
    }

    pub fn locations(&self) -> PointSet {
        PointSet::from_points(self.dim, self.atoms.iter().map(|a| &a.location))
            .expect("atom locations validated on insertion")
    }

    /// Atoms of `weights` placed on `vertices`, keeping entries with `|w| > threshold`.
    pub fn from_vertices(vertices: &PointSet, weights: &[f64], threshold: f64) -> Self {
        let atoms = vertices
            .iter()
            .zip(weights)
            .filter(|(_, w)| w.abs() > threshold)
            .map(|(x, &w)| Atom {
                weight: w,
                location: x.to_vec(),
            })
            .collect();
        Self {
            dim: vertices.dim(),
            atoms,
        }
    }
}

/// Solution of the discretized problem on a vertex list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    /// Raw dual vector `y - G alpha`.
    pub q: Vec<f64>,
    /// Primal weights aligned with the vertex list.
    pub weights: Vec<f64>,
    pub primal: f64,
    /// Dual objective of the feasibility-rescaled dual.
    pub dual: f64,
    pub gap: f64,
    /// `max(0, max_j |G[:, j]^T q| - 1)`.
    pub feas_violation: f64,
    /// Support updates performed by the solver.
    pub iterations: usize,
}

impl DualSolution {
    /// `q / max(1, |G^T q|_inf)`, feasible on the vertex set by construction.
    pub fn rescaled_dual(&self) -> Vec<f64> {
        let s = 1.0 + self.feas_violation;
        self.q.iter().map(|v| v / s).collect()
    }
}

/// Column-major design matrix `G[m, j] = a_m(v_j)`.
#[derive(Clone, Debug)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn assemble(op: &GaussianOperator, vertices: &PointSet) -> Self {
        let rows = op.len();
        let cols = vertices.len();
        #[cfg(feature = "parallel")]
        let data: Vec<f64> = {
            use rayon::prelude::*;
            let pts: Vec<&[f64]> = vertices.iter().collect();
            pts.par_iter().flat_map_iter(|v| op.column(v)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let data: Vec<f64> = vertices.iter().flat_map(|v| op.column(v)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// `G alpha`.
    pub fn apply(&self, alpha: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for (j, &a) in alpha.iter().enumerate() {
            if a != 0.0 {
                for (o, g) in out.iter_mut().zip(self.column(j)) {
                    *o += a * g;
                }
            }
        }
        out
    }

    /// `G^T q`.
    pub fn correlate(&self, q: &[f64]) -> Vec<f64> {
        (0..self.cols).map(|j| dot(self.column(j), q)).collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `1e-9 * max(1, |y|^2 / 2)`.
pub fn default_tol_gap(y: &[f64]) -> f64 {
    1e-9 * (0.5 * dot(y, y)).max(1.0)
}

/// LASSO objective `|alpha|_1 + |G alpha - y|^2 / 2`.
pub fn lasso_objective(design: &Design, y: &[f64], alpha: &[f64]) -> f64 {
    let ga = design.apply(alpha);
    let r2: f64 = ga.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    alpha.iter().map(|a| a.abs()).sum::<f64>() + 0.5 * r2
}

/// Cold-start solve; see [`solve_discretized_warm`].
pub fn solve_discretized(
    op: &GaussianOperator,
    vertices: &PointSet,
    y: &[f64],
    tol_gap: f64,
    max_iter: usize,
) -> Result<DualSolution> {
    solve_discretized_warm(op, vertices, y, tol_gap, max_iter, None)
}

/// Solves the LASSO on `vertices` to duality gap `tol_gap`.
///
/// `warm` seeds the weights (same length as `vertices`); `max_iter` bounds the
/// number of active-set updates.
pub fn solve_discretized_warm(
    op: &GaussianOperator,
    vertices: &PointSet,
    y: &[f64],
    tol_gap: f64,
    max_iter: usize,
    warm: Option<&[f64]>,
) -> Result<DualSolution> {
    if vertices.is_empty() {
        return Err(Error::Domain("vertex set is empty".into()));
    }
    if y.len() != op.len() {
        return Err(Error::Domain(format!(
            "data has length {}, operator has {} measurements",
            y.len(),
            op.len()
        )));
    }
    let design = Design::assemble(op, vertices);
    LassoSolver::new(&design, y)?.solve(tol_gap, max_iter, warm)
}

/// Active-set method for the LASSO with unit penalty.
///
/// The iterate is always the minimizer of the objective restricted to the
/// current support and sign pattern, or a point on the segment towards it.
/// Each step moves to that minimizer, stopping early at the first coordinate
/// that would change sign (which then leaves the support). Once settled, the
/// most violating inactive column joins the support. Subproblems are solved
/// through a pivoted QR factorization of the support columns, so near-collinear vertices do not
/// degrade the dual vector.
pub struct LassoSolver<'a> {
    design: &'a Design,
    y: &'a [f64],
}

/// Correlations above `1 + VIOLATION_TOL` count as violated. When the solver
/// settles with the gap still above tolerance the threshold is tightened
/// tenfold at a time down to `MIN_VIOLATION_TOL`.
const VIOLATION_TOL: f64 = 1e-11;
const MIN_VIOLATION_TOL: f64 = 1e-15;

/// Pivots below this fraction of the largest mark the numerical rank.
const RANK_TOL: f64 = 1e-12;

enum Step {
    /// Reached the restricted minimizer.
    Full,
    /// Stopped at a sign change and shrank the support.
    Truncated,
}

impl<'a> LassoSolver<'a> {
    pub fn new(design: &'a Design, y: &'a [f64]) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("data vector contains non-finite entries".into()));
        }
        Ok(Self { design, y })
    }

    fn evaluate(&self, alpha: &[f64], iterations: usize) -> (DualSolution, Vec<f64>) {
        let ga = self.design.apply(alpha);
        let r: Vec<f64> = self.y.iter().zip(&ga).map(|(y, g)| y - g).collect();
        let corr = self.design.correlate(&r);
        let max_corr = corr.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let l1: f64 = alpha.iter().map(|a| a.abs()).sum();
        let r2 = dot(&r, &r);
        let primal = l1 + 0.5 * r2;
        let s = max_corr.max(1.0);
        let dual = dot(&r, self.y) / s - 0.5 * r2 / (s * s);
        let sol = DualSolution {
            q: r,
            weights: alpha.to_vec(),
            primal,
            dual,
            gap: (primal - dual).max(0.0),
            feas_violation: (max_corr - 1.0).max(0.0),
            iterations,
        };
        (sol, corr)
    }

    /// Moves the support coordinates towards the minimizer of
    /// `|G_A x - y|^2 / 2 + signs^T x` and drops coordinates that reach zero.
    fn step(&self, alpha: &mut [f64], support: &mut Vec<usize>, signs: &mut Vec<f64>) -> Step {
        let m = self.design.rows();
        let k = support.len();
        if k == 0 {
            return Step::Full;
        }
        let mut block = Vec::with_capacity(m * k);
        for &j in support.iter() {
            block.extend_from_slice(self.design.column(j));
        }
        let qr = PivotedQr::new(m, k, block, RANK_TOL);
        let rank = qr.rank();
        let perm = qr.perm();
        let x: Vec<f64> = support.iter().map(|&j| alpha[j]).collect();
        let theta_norm = dot(signs, signs).sqrt();

        // Null-space directions along which the linear term still decreases.
        let mut direction = vec![0.0; k];
        let mut bounded = true;
        for t in rank..k {
            let rhs: Vec<f64> = (0..rank).map(|i| -qr.r(i, t)).collect();
            let lead = qr.solve_upper(rank, rhs);
            let mut n = vec![0.0; k];
            for i in 0..rank {
                n[perm[i]] = lead[i];
            }
            n[perm[t]] = 1.0;
            let tn = dot(signs, &n);
            if tn.abs() > 1e-10 * dot(&n, &n).sqrt() * theta_norm {
                bounded = false;
                for (d, v) in direction.iter_mut().zip(&n) {
                    *d -= tn * v;
                }
            }
        }
        if bounded {
            // Dependent columns keep their weights; the rest solve the normal equations.
            let mut rhs = self.y.to_vec();
            for &p in &perm[rank..] {
                for (r, g) in rhs.iter_mut().zip(self.design.column(support[p])) {
                    *r -= x[p] * g;
                }
            }
            qr.apply_qt(&mut rhs);
            let th: Vec<f64> = (0..rank).map(|i| signs[perm[i]]).collect();
            let w = qr.solve_upper_transposed(rank, th);
            let z: Vec<f64> = (0..rank).map(|i| rhs[i] - w[i]).collect();
            let lead = qr.solve_upper(rank, z);
            for i in 0..rank {
                direction[perm[i]] = lead[i] - x[perm[i]];
            }
        }

        let mut t = f64::INFINITY;
        let mut hit = None;
        for j in 0..k {
            if direction[j] * signs[j] < 0.0 {
                let tj = -x[j] / direction[j];
                if tj < t {
                    t = tj;
                    hit = Some(j);
                }
            }
        }
        if bounded && t >= 1.0 {
            for j in 0..k {
                alpha[support[j]] = x[j] + direction[j];
            }
            return Step::Full;
        }
        let hit = hit.expect("an unbounded direction crosses zero");
        for j in 0..k {
            alpha[support[j]] = x[j] + t * direction[j];
        }
        alpha[support[hit]] = 0.0;
        let mut j = 0;
        while j < support.len() {
            let idx = support[j];
            if alpha[idx] == 0.0 || alpha[idx].signum() != signs[j] {
                alpha[idx] = 0.0;
                support.remove(j);
                signs.remove(j);
            } else {
                j += 1;
            }
        }
        Step::Truncated
    }

    /// Solves to optimality; `max_iter` bounds the number of support updates.
    pub fn solve(&self, tol_gap: f64, max_iter: usize, warm: Option<&[f64]>) -> Result<DualSolution> {
        if !(tol_gap > 0.0) {
            return Err(Error::Domain(format!("tol_gap must be positive, got {tol_gap}")));
        }
        let n = self.design.cols();
        let mut alpha = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            Some(w) => {
                return Err(Error::Domain(format!(
                    "warm start has length {}, expected {n}",
                    w.len()
                )))
            }
            None => vec![0.0; n],
        };
        let mut support: Vec<usize> = (0..n).filter(|&j| alpha[j] != 0.0).collect();
        let mut signs: Vec<f64> = support.iter().map(|&j| alpha[j].signum()).collect();
        let mut settled = support.is_empty();
        let mut iterations = 0;
        let mut threshold = VIOLATION_TOL;
        loop {
            let (sol, corr) = self.evaluate(&alpha, iterations);
            let violator = settled
                .then(|| {
                    (0..n)
                        .filter(|&j| alpha[j] == 0.0 && corr[j].abs() > 1.0 + threshold)
                        .max_by(|&a, &b| corr[a].abs().total_cmp(&corr[b].abs()))
                })
                .flatten();
            let done = settled && violator.is_none();
            if done && sol.gap > tol_gap && threshold > MIN_VIOLATION_TOL {
                threshold /= 10.0;
                continue;
            }
            if done || iterations >= max_iter {
                return if sol.gap <= tol_gap {
                    Ok(sol)
                } else {
                    Err(Error::NonConvergence {
                        iterations,
                        gap: sol.gap,
                        tol: tol_gap,
                    })
                };
            }
            if let Some(j) = violator {
                support.push(j);
                signs.push(corr[j].signum());
            }
            iterations += 1;
            settled = matches!(self.step(&mut alpha, &mut support, &mut signs), Step::Full);
        }
    }
}

/// Residuals of the optimality conditions of a discretized solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max(0, max_j |G_j^T q| - 1)`.
    pub feasibility: f64,
    /// `max_{alpha_j != 0} |G_j^T q - sign(alpha_j)|`.
    pub sign_agreement: f64,
    /// `|q - (y - G alpha)|_inf`.
    pub stationarity: f64,
    pub passed: bool,
}

pub fn check_kkt(
    op: &GaussianOperator,
    vertices: &PointSet,
    y: &[f64],
    sol: &DualSolution,
    tol: f64,
) -> KktReport {
    let design = Design::assemble(op, vertices);
    let corr = design.correlate(&sol.q);
    let feasibility = corr.iter().fold(0.0f64, |m, c| m.max(c.abs() - 1.0));
    let sign_agreement = corr
        .iter()
        .zip(&sol.weights)
        .filter(|(_, &w)| w != 0.0)
        .fold(0.0f64, |m, (c, w)| m.max((c - w.signum()).abs()));
    let ga = design.apply(&sol.weights);
    let stationarity = sol
        .q
        .iter()
        .zip(y.iter().zip(&ga))
        .fold(0.0f64, |m, (q, (y, g))| m.max((q - (y - g)).abs()));
    KktReport {
        feasibility,
        sign_agreement,
        stationarity,
        passed: feasibility <= tol && sign_agreement <= tol && stationarity <= tol,
    }
}

/// `J(mu) = |mu|_TV + |A mu - y|^2 / 2`.
pub fn primal_value(op: &GaussianOperator, mu: &DiscreteMeasure, y: &[f64]) -> f64 {
    let amu = op.forward(mu);
    let r2: f64 = amu.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    mu.total_variation() + 0.5 * r2
}

/// Gradient of `(X, alpha) -> |alpha|_1 + |A mu(X, alpha) - y|^2 / 2`,
/// using `sign(alpha)` for the l1 term. Layout: all weights, then all locations.
fn parameter_gradient(op: &GaussianOperator, mu: &DiscreteMeasure, y: &[f64], smooth_only: bool) -> Vec<f64> {
    let d = mu.dim();
    let n = mu.len();
    let amu = op.forward(mu);
    let e: Vec<f64> = amu.iter().zip(y).map(|(a, b)| a - b).collect();
    let mut g = vec![0.0; n * (d + 1)];
    for (s, atom) in mu.atoms().iter().enumerate() {
        let col = op.column(&atom.location);
        g[s] = dot(&col, &e) + if smooth_only { 0.0 } else { atom.weight.signum() };
        let grad = op.certificate_grad(&e, &atom.location);
        for i in 0..d {
            g[n + s * d + i] = atom.weight * grad[i];
        }
    }
    g
}

fn with_parameters(mu: &DiscreteMeasure, p: &[f64]) -> DiscreteMeasure {
    let d = mu.dim();
    let n = mu.len();
    DiscreteMeasure {
        dim: d,
        atoms: (0..n)
            .map(|s| Atom {
                weight: p[s],
                location: p[n + s * d..n + (s + 1) * d].to_vec(),
            })
            .collect(),
    }
}

fn parameters(mu: &DiscreteMeasure) -> Vec<f64> {
    let mut p: Vec<f64> = mu.atoms().iter().map(|a| a.weight).collect();
    for a in mu.atoms() {
        p.extend_from_slice(&a.location);
    }
    p
}

/// Step `1 / (2 L)` where `L` estimates the curvature of the smooth part at `mu`
/// (largest Hessian eigenvalue from central differences of the gradient).
pub fn fine_tune_step(op: &GaussianOperator, mu: &DiscreteMeasure, y: &[f64]) -> f64 {
    let p0 = parameters(mu);
    let k = p0.len();
    let h = 1e-6;
    let mut hess = nalgebra::DMatrix::zeros(k, k);
    for i in 0..k {
        let mut pp = p0.clone();
        let mut pm = p0.clone();
        pp[i] += h;
        pm[i] -= h;
        let gp = parameter_gradient(op, &with_parameters(mu, &pp), y, true);
        let gm = parameter_gradient(op, &with_parameters(mu, &pm), y, true);
        for j in 0..k {
            hess[(j, i)] = (gp[j] - gm[j]) / (2.0 * h);
        }
    }
    let sym = (&hess + hess.transpose()) * 0.5;
    let l = sym
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    0.5 / l.max(f64::MIN_POSITIVE)
}

/// Fixed-step gradient descent on the weights and locations of `mu0`.
///
/// Locations are clamped to `[0,1]^D`. Stops after `iters` steps or once the
/// gradient norm drops below `1e-12`.
pub fn fine_tune(
    op: &GaussianOperator,
    mu0: &DiscreteMeasure,
    y: &[f64],
    step: f64,
    iters: usize,
) -> Result<DiscreteMeasure> {
    if !(step > 0.0) {
        return Err(Error::Domain(format!("step must be positive, got {step}")));
    }
    if mu0.atoms().iter().any(|a| a.weight == 0.0) {
        return Err(Error::Domain("fine-tuning requires nonzero weights".into()));
    }
    let n = mu0.len();
    let mut p = parameters(mu0);
    for it in 0..iters {
        let mu = with_parameters(mu0, &p);
        let g = parameter_gradient(op, &mu, y, false);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-12 {
            break;
        }
        for (pi, gi) in p.iter_mut().zip(&g) {
            *pi -= step * gi;
        }
        for s in 0..n {
            if p[s].signum() != mu.atoms()[s].weight.signum() || p[s] == 0.0 {
                return Err(Error::DegeneratePath { index: s, step: it });
            }
        }
        for c in &mut p[n..] {
            *c = c.clamp(0.0, 1.0);
        }
    }
    Ok(with_parameters(mu0, &p))
}
