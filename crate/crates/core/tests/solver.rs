use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use tvrefine::solver::{check_kkt, fine_tune, lasso_objective, primal_value, solve_discretized, Design};
use tvrefine::{DiscreteMeasure, GaussianOperator, PointSet};

#[derive(Debug)]
struct Small {
    op: GaussianOperator,
    vertices: PointSet,
    y: Vec<f64>,
}

fn small_problem() -> impl Strategy<Value = Small> {
    (1usize..=3, 1usize..=3, 0.05f64..0.4).prop_flat_map(|(m, n, sigma)| {
        (
            prop::collection::vec(0.0f64..=1.0, m),
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(-4.0f64..4.0, m),
        )
            .prop_map(move |(centers, verts, y)| Small {
                op: GaussianOperator::new(1, centers, sigma).unwrap(),
                vertices: PointSet::new(1, verts).unwrap(),
                y,
            })
    })
}

/// Exact minimum by enumerating every sign pattern and solving its stationarity system.
fn enumerate_minimum(design: &Design, y: &[f64]) -> f64 {
    let n = design.cols();
    let mut best = lasso_objective(design, y, &vec![0.0; n]);
    for code in 0..3usize.pow(n as u32) {
        let signs: Vec<f64> = (0..n).map(|j| ((code / 3usize.pow(j as u32)) % 3) as f64 - 1.0).collect();
        let support: Vec<usize> = (0..n).filter(|&j| signs[j] != 0.0).collect();
        if support.is_empty() {
            continue;
        }
        let g = DMatrix::from_fn(design.rows(), support.len(), |i, k| design.column(support[k])[i]);
        let rhs = g.transpose() * DVector::from_column_slice(y)
            - DVector::from_iterator(support.len(), support.iter().map(|&j| signs[j]));
        let Some(a) = (g.transpose() * &g).lu().solve(&rhs) else {
            continue;
        };
        if support.iter().zip(a.iter()).all(|(&j, v)| v.signum() == signs[j] && *v != 0.0) {
            let mut alpha = vec![0.0; n];
            for (&j, v) in support.iter().zip(a.iter()) {
                alpha[j] = *v;
            }
            best = best.min(lasso_objective(design, y, &alpha));
        }
    }
    best
}

/// Minimum over the grid `[-20, 20]^n` with spacing `step`.
fn grid_minimum(design: &Design, y: &[f64], step: f64) -> f64 {
    let n = design.cols();
    let per_axis = (40.0 / step).round() as usize + 1;
    let mut best = f64::INFINITY;
    let mut alpha = vec![0.0; n];
    for flat in 0..per_axis.pow(n as u32) {
        let mut f = flat;
        for a in alpha.iter_mut() {
            *a = -20.0 + (f % per_axis) as f64 * step;
            f /= per_axis;
        }
        best = best.min(lasso_objective(design, y, &alpha));
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matches_exhaustive_search(p in small_problem()) {
        let sol = solve_discretized(&p.op, &p.vertices, &p.y, 1e-12, 1000).unwrap();
        let design = Design::assemble(&p.op, &p.vertices);
        let exact = enumerate_minimum(&design, &p.y);
        prop_assert!((sol.primal - exact).abs() <= 1e-9 * exact.max(1.0), "solver {} exact {}", sol.primal, exact);
        let step = if design.cols() == 3 { 0.25 } else { 0.01 };
        let grid = grid_minimum(&design, &p.y, step);
        prop_assert!(sol.primal <= grid + 1e-9, "solver {} grid {}", sol.primal, grid);
        prop_assert!(grid - sol.primal <= 1e-2 || step > 0.01);
    }

    #[test]
    fn result_meets_its_tolerances(p in small_problem(), tol_exp in 4i32..12) {
        let tol = 10f64.powi(-tol_exp);
        let sol = solve_discretized(&p.op, &p.vertices, &p.y, tol, 1000).unwrap();
        prop_assert!(sol.gap <= tol);
        prop_assert!(check_kkt(&p.op, &p.vertices, &p.y, &sol, 1e-6).passed);
        let design = Design::assemble(&p.op, &p.vertices);
        let rescaled = sol.rescaled_dual();
        let worst = design.correlate(&rescaled).iter().fold(0.0f64, |m, c| m.max(c.abs()));
        prop_assert!(worst <= 1.0 + 1e-15, "rescaled dual correlation {}", worst);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn more_vertices_never_raise_the_optimum(
        sigma in 0.05f64..0.3,
        centers in prop::collection::vec(0.0f64..=1.0, 3..12),
        base in prop::collection::vec(0.0f64..=1.0, 1..8),
        extra in prop::collection::vec(0.0f64..=1.0, 1..8),
        weights in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let op = GaussianOperator::new(1, centers, sigma).unwrap();
        let truth = DiscreteMeasure::new(1, weights.iter().enumerate().map(|(i, &w)| (w, vec![0.2 + 0.3 * i as f64])).collect()).unwrap();
        let y = op.forward(&truth);
        let small = PointSet::new(1, base.clone()).unwrap();
        let large = PointSet::new(1, base.into_iter().chain(extra).collect()).unwrap();
        let tol = 1e-10;
        let a = solve_discretized(&op, &small, &y, tol, 10_000).unwrap();
        let b = solve_discretized(&op, &large, &y, tol, 10_000).unwrap();
        prop_assert!(b.primal <= a.primal + tol, "{} > {}", b.primal, a.primal);
    }
}

#[test]
fn warm_and_cold_starts_agree() {
    let op = GaussianOperator::new(1, (0..20).map(|m| m as f64 / 20.0).collect(), 0.1).unwrap();
    let truth = DiscreteMeasure::new(1, vec![(3.0, vec![0.31]), (-2.0, vec![0.72])]).unwrap();
    let y = op.forward(&truth);
    let v = PointSet::new(1, (0..=64).map(|i| i as f64 / 64.0).collect()).unwrap();
    let cold = solve_discretized(&op, &v, &y, 1e-11, 10_000).unwrap();
    let warm = tvrefine::solver::solve_discretized_warm(&op, &v, &y, 1e-11, 10_000, Some(&cold.weights)).unwrap();
    assert!((cold.primal - warm.primal).abs() <= 1e-10);
    // One step re-solves the warm support; no column enters or leaves.
    assert!(warm.iterations <= 1, "{} updates", warm.iterations);
}

#[test]
fn fine_tune_lowers_the_objective() {
    let op = GaussianOperator::new(1, (0..20).map(|m| m as f64 / 20.0).collect(), 0.1).unwrap();
    let truth = DiscreteMeasure::new(1, vec![(8.0, vec![1.0 / 3.0]), (-9.0, vec![2.0 / 3.0])]).unwrap();
    let y = op.forward(&truth);
    let step = tvrefine::solver::fine_tune_step(&op, &truth, &y);
    let tuned = fine_tune(&op, &truth, &y, step, 20_000).unwrap();
    assert!(primal_value(&op, &tuned, &y) < primal_value(&op, &truth, &y));
    assert_eq!(tuned.len(), 2);
}
