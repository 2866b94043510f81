//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tvrefine::experiments::{reference_points, ExperimentConfig, Problem};
use tvrefine::refinement::{local_maximizers, run_with, IterationView, RunConfig};
use tvrefine::selection::{
    grad_lb_first, grad_lb_second, max_abs_quadratic_on_box, select_candidates, ub_first_order, ub_second_order,
    ub_third_order, SelectionRule,
};
use tvrefine::solver::{check_kkt, KktReport};
use tvrefine::{DyadicCell, GaussianOperator, PointSet, RefinementLog};

type Outcome = Result<String, String>;

/// Per-iteration observations gathered while a run progresses.
#[derive(Default)]
struct Trace {
    /// Candidates not flagged by the same rule without its gradient filter.
    not_in_bound_only: Vec<usize>,
    /// `(maximizers found, maximizers outside every candidate)`.
    maximizers: Vec<(usize, usize)>,
    /// Whether `V_k` contains `V_{k-1}`.
    nested: Vec<bool>,
    kkt: Vec<KktReport>,
}

struct Observed {
    rule: SelectionRule,
    log: RefinementLog,
    trace: Trace,
    tol_gap: f64,
    elapsed: Duration,
}

struct Options {
    maximizer_resolution: f64,
    kkt_tol: Option<f64>,
}

fn vertex_bits(v: &PointSet) -> BTreeSet<Vec<u64>> {
    v.iter().map(|p| p.iter().map(|c| c.to_bits()).collect()).collect()
}

fn observe_run(config: &RunConfig, opts: &Options) -> Observed {
    let op = &config.operator;
    let mut trace = Trace::default();
    let mut previous: Option<BTreeSet<Vec<u64>>> = None;
    let start = Instant::now();
    let log = run_with(config, |view: &IterationView| {
        let rec = view.record;
        if config.rule.gradient_filter != tvrefine::selection::GradientFilter::None {
            let plain = select_candidates(op, view.partition, &rec.q, &config.rule.bound_only()).unwrap();
            let extra = rec.candidates.cells.iter().filter(|c| !plain.contains(c)).count();
            trace.not_in_bound_only.push(extra);
        }
        let found = local_maximizers(op, &rec.q, view.partition, opts.maximizer_resolution);
        let outside = found
            .iter()
            .filter(|x| !rec.candidates.cells.iter().any(|c| c.contains(x)))
            .count();
        trace.maximizers.push((found.len(), outside));
        let bits = vertex_bits(view.vertices);
        trace.nested.push(previous.as_ref().is_none_or(|p| p.is_subset(&bits)));
        previous = Some(bits);
        if let Some(tol) = opts.kkt_tol {
            trace.kkt.push(check_kkt(op, view.vertices, &config.data, view.solution, tol));
        }
    })
    .expect("refinement run");
    Observed {
        rule: config.rule,
        log,
        trace,
        tol_gap: config.solver.tol_for(&config.data),
        elapsed: start.elapsed(),
    }
}

struct Runs {
    one_d: Vec<Observed>,
    two_d: Vec<Observed>,
    kkt: Observed,
}

fn setup(cfg: &ExperimentConfig) -> (Problem, Option<PointSet>) {
    let problem = cfg.problem().unwrap();
    let reference = reference_points(cfg, &problem).unwrap();
    (problem, reference)
}

fn rule_runs(cfg: &ExperimentConfig, resolution: f64) -> Vec<Observed> {
    let (problem, reference) = setup(cfg);
    SelectionRule::all()
        .into_iter()
        .map(|rule| {
            let mut rc = cfg.run_config(&problem).unwrap();
            rc.rule = rule;
            rc.reference = reference.clone();
            observe_run(
                &rc,
                &Options {
                    maximizer_resolution: resolution,
                    kkt_tol: None,
                },
            )
        })
        .collect()
}

fn collect_runs() -> Runs {
    let one = ExperimentConfig::builtin_1d();
    let one_d = rule_runs(&one, 1e-4);
    let two_d = rule_runs(&ExperimentConfig::builtin_2d(), 1.0 / 256.0);

    let mut strict = one.clone();
    strict.tol_gap = Some(1e-10);
    let (problem, reference) = setup(&strict);
    let mut rc = strict.run_config(&problem).unwrap();
    rc.reference = reference;
    let kkt = observe_run(
        &rc,
        &Options {
            maximizer_resolution: 1e-4,
            kkt_tol: Some(1e-5),
        },
    );
    Runs { one_d, two_d, kkt }
}

fn find(runs: &[Observed], rule: SelectionRule) -> &Observed {
    runs.iter().find(|o| o.rule == rule).expect("rule was run")
}

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn criterion_1(runs: &Runs) -> Outcome {
    let o = find(&runs.one_d, SelectionRule::second());
    let recs = &o.log.records;
    let last = recs.last().ok_or("empty log")?;
    let counts: Vec<usize> = recs.iter().take(6).map(|r| r.vertices).collect();
    let rel = (last.primal - 16.9805).abs() / 16.9805;
    let dist = last.dist_hausdorff.ok_or("no reference")?;
    ensure(recs.len() <= 30, format!("{} iterations", recs.len()))?;
    ensure(rel <= 1e-3, format!("primal {} (rel {rel:.1e})", last.primal))?;
    ensure(dist <= 1e-6, format!("distH {dist:.2e}"))?;
    ensure(last.vertices <= 400, format!("|V| {}", last.vertices))?;
    ensure(counts == [2, 3, 5, 9, 17, 33], format!("burn-in counts {counts:?}"))?;
    ensure(o.elapsed.as_secs_f64() < 30.0, format!("runtime {:?}", o.elapsed))?;
    Ok(format!(
        "{} iterations, primal {:.6}, distH {dist:.1e}, |V| {}, burn-in {counts:?}, {:.2}s",
        recs.len(),
        last.primal,
        last.vertices,
        o.elapsed.as_secs_f64()
    ))
}

fn criterion_2(runs: &Runs) -> Outcome {
    let mut parts = Vec::new();
    for (filtered, plain) in [
        (SelectionRule::second_with_grad(), SelectionRule::second()),
        (SelectionRule::third_with_grad2(), SelectionRule::third()),
    ] {
        let f = find(&runs.one_d, filtered);
        let p = find(&runs.one_d, plain);
        let extra: usize = f.trace.not_in_bound_only.iter().sum();
        ensure(
            f.trace.not_in_bound_only.len() == f.log.records.len() && extra == 0,
            format!("{filtered}: {extra} candidates outside the bound-only set"),
        )?;
        let (nf, np) = (f.log.last().unwrap().vertices, p.log.last().unwrap().vertices);
        ensure(nf <= np, format!("{filtered}: terminal |V| {nf} > {np}"))?;
        parts.push(format!(
            "{filtered}: subset on {} iterations, |V| {nf} vs {np}",
            f.log.records.len()
        ));
    }
    Ok(parts.join("; "))
}

fn criterion_3(runs: &Runs) -> Outcome {
    let o = find(&runs.two_d, SelectionRule::second());
    let recs = &o.log.records;
    for k in 0..=4usize {
        let expect = ((1usize << k) + 1).pow(2);
        let got = recs.get(k).map(|r| r.vertices);
        ensure(got == Some(expect), format!("|V_{k}| = {got:?}, expected {expect}"))?;
    }
    ensure(recs.len() <= 25, format!("{} iterations", recs.len()))?;
    let dist = recs.last().and_then(|r| r.dist_hausdorff).ok_or("no reference")?;
    ensure(dist <= 2e-3, format!("final distH {dist:.2e}"))?;
    // Leaf level of the last recorded partition; that record's own refinement comes after it.
    let level = recs[..recs.len() - 1]
        .iter()
        .flat_map(|r| r.refined.iter().map(|c| c.level() + 1))
        .max()
        .unwrap_or(0);
    let uniform = ((1usize << level) + 1).pow(2);
    let last = recs.last().unwrap().vertices;
    let ratio = last as f64 / uniform as f64;
    ensure(ratio <= 0.02, format!("|V| {last} is {:.2}% of {uniform}", 100.0 * ratio))?;
    ensure(o.elapsed.as_secs_f64() < 300.0, format!("runtime {:?}", o.elapsed))?;
    Ok(format!(
        "burn-in 4,9,25,81,289; {} iterations, distH {dist:.1e}, |V| {last} = {:.3}% of (2^{level}+1)^2, {:.1}s",
        recs.len(),
        100.0 * ratio,
        o.elapsed.as_secs_f64()
    ))
}

/// A random operator, dual vector and dyadic cell, drawn independently of the library helpers.
fn random_pair(rng: &mut ChaCha8Rng, dim: usize) -> (GaussianOperator, Vec<f64>, DyadicCell) {
    let m = rng.random_range(2..=15);
    let sigma = rng.random_range(0.04..0.35);
    let centers = (0..m * dim).map(|_| rng.random_range(-0.1..1.1)).collect();
    let op = GaussianOperator::with_amplitude(dim, centers, sigma, GaussianOperator::scaled_amplitude(dim, sigma))
        .unwrap();
    let q = (0..m).map(|_| rng.random_range(-1.5..1.5) / op.amplitude()).collect();
    let level = rng.random_range(0..=9u32);
    let index = (0..dim).map(|_| rng.random_range(0..1u64 << level)).collect();
    (op, q, DyadicCell::new(level, index).unwrap())
}

/// Dense tensor grid of about 1000 points over the closed cell.
fn dense_sample(op: &GaussianOperator, q: &[f64], cell: &DyadicCell) -> (f64, f64) {
    let d = cell.dim();
    let per_axis = (1000f64.powf(1.0 / d as f64)).ceil() as usize;
    let (lo, hi) = cell.bounds();
    let mut sup = 0.0f64;
    let mut inf = f64::INFINITY;
    for flat in 0..per_axis.pow(d as u32) {
        let mut f = flat;
        let x: Vec<f64> = (0..d)
            .map(|i| {
                let t = (f % per_axis) as f64 / (per_axis - 1) as f64;
                f /= per_axis;
                lo[i] + t * (hi[i] - lo[i])
            })
            .collect();
        sup = sup.max(op.certificate(q, &x).abs());
        inf = inf.min(op.certificate_grad(q, &x).norm());
    }
    (sup, inf)
}

struct BoundSample {
    sup: f64,
    inf: f64,
    upper: [f64; 3],
    grad_lower: [f64; 2],
    taylor_low: [f64; 2],
}

fn bound_samples() -> Vec<BoundSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    (0..100)
        .map(|i| {
            let (op, q, cell) = random_pair(&mut rng, 1 + i % 2);
            let (sup, inf) = dense_sample(&op, &q, &cell);
            let upper = [
                ub_first_order(&op, &q, &cell),
                ub_second_order(&op, &q, &cell),
                ub_third_order(&op, &q, &cell).unwrap(),
            ];
            let diam = cell.diam();
            BoundSample {
                sup,
                inf,
                upper,
                grad_lower: [grad_lb_first(&op, &q, &cell), grad_lb_second(&op, &q, &cell).unwrap()],
                taylor_low: [
                    upper[1] - op.kappa2_cell(&q, &cell) * diam * diam,
                    upper[2] - op.kappa3_cell(&q, &cell) * diam.powi(3) / 3.0,
                ],
            }
        })
        .collect()
}

fn criterion_4(samples: &[BoundSample]) -> Outcome {
    let mut violations = 0;
    for s in samples {
        let round = 1e-12 * s.sup.max(1.0);
        violations += s.upper.iter().filter(|&&u| u < s.sup - round).count();
        violations += s.grad_lower.iter().filter(|&&g| g > s.inf + 1e-12 * s.inf.max(1.0)).count();
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    Ok(format!("{} pairs, 5 bounds each, 0 violations", samples.len()))
}

fn criterion_5(samples: &[BoundSample]) -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for s in samples {
        for low in s.taylor_low {
            worst = worst.max(low - s.sup);
            if low > s.sup + 1e-3 {
                violations += 1;
            }
        }
    }
    ensure(violations == 0, format!("{violations} violations, worst excess {worst:.2e}"))?;
    Ok(format!("{} pairs, worst excess {worst:.2e}", samples.len()))
}

fn criterion_6(runs: &Runs) -> Outcome {
    let mut parts = Vec::new();
    for (label, set) in [("1D", &runs.one_d), ("2D", &runs.two_d)] {
        let mut found = 0;
        for o in set.iter() {
            ensure(o.trace.maximizers.len() == o.log.records.len(), "missing iterations")?;
            for (k, &(n, outside)) in o.trace.maximizers.iter().enumerate() {
                ensure(
                    outside == 0,
                    format!("{label} {}: {outside} of {n} maximizers outside the candidates at iteration {k}", o.rule),
                )?;
                found += n;
            }
        }
        parts.push(format!("{label}: {found} maximizers over {} rules", set.len()));
    }
    Ok(parts.join("; "))
}

fn criterion_7(runs: &Runs) -> Outcome {
    let o = &runs.kkt;
    ensure(o.trace.kkt.len() == o.log.records.len(), "missing iterations")?;
    let worst = o
        .trace
        .kkt
        .iter()
        .map(|r| r.feasibility.max(r.sign_agreement).max(r.stationarity))
        .fold(0.0f64, f64::max);
    let failed = o.trace.kkt.iter().filter(|r| !r.passed).count();
    ensure(failed == 0, format!("{failed} iterations fail, worst residual {worst:.2e}"))?;
    Ok(format!("{} iterations, worst residual {worst:.2e}", o.trace.kkt.len()))
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(f64::MIN_POSITIVE)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = (0.0f64, 0.0f64);
    for i in 0..100 {
        let d = 1 + i % 2;
        let sigma = rng.random_range(0.05..0.3);
        let centers = (0..3 * d).map(|_| rng.random_range(0.0..1.0)).collect();
        let op = GaussianOperator::with_amplitude(d, centers, sigma, GaussianOperator::scaled_amplitude(d, sigma))
            .unwrap();
        let m = rng.random_range(0..3);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
        let f = |p: &[f64]| op.eval_a(m, p);
        let shifted = |di: &[(usize, f64)]| {
            let mut p = x.clone();
            for &(j, s) in di {
                p[j] += s;
            }
            f(&p)
        };
        // Steps follow the local length scale of the Gaussian, which shrinks away from its center.
        let offset: f64 = x.iter().zip(op.center(m)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = sigma / (1.0 + offset / sigma);
        // Fourth-order central stencils.
        const W1: [(f64, f64); 4] = [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)];
        const W2: [(f64, f64); 5] = [
            (-2.0, -1.0 / 12.0),
            (-1.0, 16.0 / 12.0),
            (0.0, -30.0 / 12.0),
            (1.0, 16.0 / 12.0),
            (2.0, -1.0 / 12.0),
        ];
        let h1 = 1e-3 * scale;
        let fd_grad: Vec<f64> = (0..d)
            .map(|j| W1.iter().map(|&(s, w)| w * shifted(&[(j, s * h1)])).sum::<f64>() / h1)
            .collect();
        let h2 = 1e-2 * scale;
        let mut fd_hess = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                fd_hess[a * d + b] = if a == b {
                    W2.iter().map(|&(s, w)| w * shifted(&[(a, s * h2)])).sum::<f64>() / (h2 * h2)
                } else {
                    W1.iter()
                        .flat_map(|&(sa, wa)| W1.iter().map(move |&(sb, wb)| (sa, sb, wa * wb)))
                        .map(|(sa, sb, w)| w * shifted(&[(a, sa * h2), (b, sb * h2)]))
                        .sum::<f64>()
                        / (h2 * h2)
                };
            }
        }
        let g: Vec<f64> = op.grad_a(m, &x).iter().copied().collect();
        let hm = op.hess_a(m, &x);
        let h: Vec<f64> = (0..d * d).map(|k| hm[(k / d, k % d)]).collect();
        worst.0 = worst.0.max(rel_error(&g, &fd_grad));
        worst.1 = worst.1.max(rel_error(&h, &fd_hess));
    }
    ensure(
        worst.0 <= 1e-4 && worst.1 <= 1e-4,
        format!("worst relative error: gradient {:.1e}, Hessian {:.1e}", worst.0, worst.1),
    )?;
    Ok(format!(
        "100 points, worst relative error gradient {:.1e}, Hessian {:.1e}",
        worst.0, worst.1
    ))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 200usize;
    let mut worst_gap = 0.0f64;
    for i in 0..50 {
        let d = 1 + i % 2;
        let c = rng.random_range(-1.0..1.0);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut h = vec![0.0; d * d];
        for a in 0..d {
            for b in a..d {
                let v = rng.random_range(-10.0..10.0);
                h[a * d + b] = v;
                h[b * d + a] = v;
            }
        }
        let lo: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..0.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.random_range(0.05..1.5)).collect();
        let exact = max_abs_quadratic_on_box(c, &g, &h, &lo, &hi).unwrap();

        let value = |u: &[f64]| {
            let mut v = c;
            for a in 0..d {
                v += g[a] * u[a];
                for b in 0..d {
                    v += 0.5 * u[a] * h[a * d + b] * u[b];
                }
            }
            v.abs()
        };
        let mut grid = 0.0f64;
        let mut u = vec![0.0; d];
        for flat in 0..n.pow(d as u32) {
            let mut f = flat;
            for a in 0..d {
                u[a] = lo[a] + (f % n) as f64 / (n - 1) as f64 * (hi[a] - lo[a]);
                f /= n;
            }
            grid = grid.max(value(&u));
        }
        // Every box point is within half a grid diagonal of a grid point.
        let spacing: f64 = (0..d).map(|a| ((hi[a] - lo[a]) / (n - 1) as f64).powi(2)).sum::<f64>().sqrt();
        let reach: f64 = (0..d).map(|a| lo[a].abs().max(hi[a].abs()).powi(2)).sum::<f64>().sqrt();
        let hnorm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        let lipschitz = g.iter().map(|v| v * v).sum::<f64>().sqrt() + hnorm * reach;
        let slack = 1e-12 * exact.max(1.0);
        ensure(
            exact + slack >= grid && exact <= grid + lipschitz * spacing / 2.0 + slack,
            format!("quadratic {i}: exact {exact}, grid {grid}"),
        )?;
        worst_gap = worst_gap.max(exact - grid);
    }
    Ok(format!("50 quadratics, largest exact - grid {worst_gap:.1e}"))
}

fn criterion_10(runs: &Runs) -> Outcome {
    let all = runs.one_d.iter().chain(&runs.two_d).chain(std::iter::once(&runs.kkt));
    let mut checked = 0;
    for o in all {
        let recs = &o.log.records;
        for (k, r) in recs.iter().enumerate() {
            if let Some(h) = r.candidates.max_edge_length() {
                ensure(
                    r.refined.iter().all(|c| c.edge_length() == h),
                    format!("{} iteration {k}: refined cell smaller than the largest candidate", o.rule),
                )?;
                if k + 1 < recs.len() {
                    let expected = r.candidates.cells.iter().filter(|c| c.edge_length() == h).count();
                    ensure(
                        r.refined.len() == expected,
                        format!("{} iteration {k}: refined {} of {expected} largest candidates", o.rule, r.refined.len()),
                    )?;
                }
            }
            if k > 0 {
                ensure(
                    r.primal <= recs[k - 1].primal + o.tol_gap,
                    format!("{} iteration {k}: primal rose from {} to {}", o.rule, recs[k - 1].primal, r.primal),
                )?;
            }
            checked += 1;
        }
        ensure(
            o.trace.nested.len() == recs.len() && o.trace.nested.iter().all(|&b| b),
            format!("{}: vertex sets not nested", o.rule),
        )?;
    }
    Ok(format!("{checked} iterations over 11 runs"))
}

fn report(results: &mut Vec<bool>, n: usize, name: &str, outcome: impl FnOnce() -> Outcome) {
    let outcome = match catch_unwind(AssertUnwindSafe(outcome)) {
        Ok(o) => o,
        Err(panic) => Err(panic
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    match &outcome {
        Ok(detail) => println!("criterion {n:>2} [PRIMARY] {name}: PASS ({detail})"),
        Err(why) => println!("criterion {n:>2} [PRIMARY] {name}: FAIL ({why})"),
    }
    results.push(outcome.is_ok());
}

fn main() {
    let start = Instant::now();
    let runs = collect_runs();
    let samples = bound_samples();
    let mut results = Vec::new();
    report(&mut results, 1, "1D reproduction, second-order rule", || criterion_1(&runs));
    report(&mut results, 2, "1D gradient filter subset", || criterion_2(&runs));
    report(&mut results, 3, "2D trend", || criterion_3(&runs));
    report(&mut results, 4, "bound certification", || criterion_4(&samples));
    report(&mut results, 5, "Taylor-gap inequalities", || criterion_5(&samples));
    report(&mut results, 6, "maximizers inside candidates", || criterion_6(&runs));
    report(&mut results, 7, "KKT at every iteration", || criterion_7(&runs));
    report(&mut results, 8, "derivatives vs finite differences", criterion_8);
    report(&mut results, 9, "box-quadratic maximum vs dense grid", criterion_9);
    report(&mut results, 10, "largest-cell refinement and monotonicity", || criterion_10(&runs));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!(
        "acceptance: {passed}/{} passed in {:.1}s",
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if passed != results.len() {
        std::process::exit(1);
    }
}
