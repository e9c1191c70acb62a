//! Exit criteria. Each test prints one `criterion N: PASS|FAIL ...` line to stderr
//! (bypassing the test harness capture) and then asserts.

use std::io::Write;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use sparsesel::bnb::{self, BnbConfig, NodeBound};
use sparsesel::bounds::{lower_bound, BoundEngine};
use sparsesel::bruteforce::psi_exact;
use sparsesel::experiment::{
    fig1, mu_factor, random_matrix, scaling, solves, table1_row, table2, Fig1Spec, MatrixKind, ScalingSpec,
    Table1Row, Table1Spec, Table2Spec,
};
use sparsesel::instance::{generate_gaussian, GaussianSpec, Instance};
use sparsesel::sdp::{dual_objective, sdp_k, smoothed_lambda_max, solve_observed, SolverConfig, StopRule};
use sparsesel::sparse_eig::{lambda_max, sparse_eig_exact, SymMatrix};

// criteria run one at a time so that wall-time measurements do not overlap
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(criterion: u32, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {criterion}: {status} {detail}");
}

/// 300 instances: p in {8, 10, 12, 14, 16}, n = p / 2, k in {2, 3, 4}, 20 seeds each.
fn exactness_corpus() -> Vec<(Instance, usize)> {
    let mut out = Vec::new();
    for p in [8usize, 10, 12, 14, 16] {
        for k in [2usize, 3, 4] {
            for s in 0..20u64 {
                let seed = 1000 * p as u64 + 100 * k as u64 + s;
                let (inst, _) = generate_gaussian(&GaussianSpec::new(p / 2, p, k, seed)).unwrap();
                out.push((inst, k));
            }
        }
    }
    out
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= 1e-14
}

#[test]
fn criterion_1_branch_and_bound_matches_enumeration() {
    let _g = serial();
    let corpus = exactness_corpus();
    let engines = [NodeBound::None, NodeBound::Exact, NodeBound::Sdp];
    let failures: Vec<String> = corpus
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, (inst, k))| {
            let psi = psi_exact(inst, *k, None).unwrap().psi;
            engines.iter().filter_map(move |&engine| {
                let r = bnb::solve(inst, *k, &BnbConfig::new(engine)).unwrap();
                let ok = r.optimality_proved && rel_close(r.best_objective, psi, 1e-9);
                (!ok).then(|| format!("#{i} {engine:?}: {} vs {psi}", r.best_objective))
            })
        })
        .collect();
    report(
        1,
        failures.is_empty(),
        format!("{} instances x 3 engines, {} mismatches", corpus.len(), failures.len()),
    );
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn criterion_2_lower_bounds_are_sound() {
    let _g = serial();
    let corpus = exactness_corpus();
    let violations: Vec<String> = corpus
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, (inst, k))| {
            let psi = psi_exact(inst, *k, None).unwrap().psi;
            [BoundEngine::Exact, BoundEngine::Sdp].into_iter().filter_map(move |engine| {
                let lb = lower_bound(inst, *k, engine, None).unwrap().psi_lower;
                (lb > psi + 1e-8 * (1.0 + psi)).then(|| format!("#{i} {engine:?}: {lb} > {psi}"))
            })
        })
        .collect();
    report(
        2,
        violations.is_empty(),
        format!("{} instances x 2 engines, {} violations", corpus.len(), violations.len()),
    );
    assert!(violations.is_empty(), "{violations:?}");
}

#[test]
fn criterion_3_relaxation_sandwich() {
    let _g = serial();
    // 100 psd and 100 entrywise-nonnegative psd matrices, p in {6, 8, 10, 12}
    let mut jobs = Vec::new();
    for kind in [MatrixKind::Psd, MatrixKind::Nonnegative] {
        for p in [6usize, 8, 10, 12] {
            for s in 0..25u64 {
                jobs.push((kind, p, 7000 + 100 * p as u64 + s));
            }
        }
    }
    let results: Vec<(Vec<String>, usize, usize)> = jobs
        .par_iter()
        .map(|&(kind, p, seed)| {
            let a = random_matrix(kind, p, seed);
            let lmax = lambda_max(&a).0;
            let eps = 1e-4 * (1.0 + lmax.abs());
            let mut bad = Vec::new();
            let (mut mu_checked, mut mu_cases) = (0, 0);
            for k in 1..=p {
                let exact = sparse_eig_exact(&a, k, None).unwrap().value;
                let sdp = sdp_k(&a, k, &SolverConfig::default()).unwrap().dual_value;
                let (kf, pf) = (k as f64, p as f64);
                let slack = 1e-10 * (1.0 + lmax);
                if kf / pf * lmax > exact + slack {
                    bad.push(format!("{kind:?} p={p} seed={seed} k={k}: k/p bound"));
                }
                if exact > sdp + slack {
                    bad.push(format!("{kind:?} p={p} seed={seed} k={k}: exact {exact} > sdp {sdp}"));
                }
                if sdp > lmax + eps {
                    bad.push(format!("{kind:?} p={p} seed={seed} k={k}: sdp {sdp} > lmax {lmax}"));
                }
                if kind == MatrixKind::Nonnegative && kf >= pf.cbrt() {
                    mu_cases += 1;
                    if let Some(mu) = mu_factor(k, p) {
                        mu_checked += 1;
                        if kf / pf * mu * lmax > exact + slack {
                            bad.push(format!("p={p} seed={seed} k={k}: mu bound"));
                        }
                    }
                }
            }
            (bad, mu_checked, mu_cases)
        })
        .collect();
    let violations: Vec<String> = results.iter().flat_map(|r| r.0.clone()).collect();
    let mu_checked: usize = results.iter().map(|r| r.1).sum();
    let mu_cases: usize = results.iter().map(|r| r.2).sum();
    report(
        3,
        violations.is_empty(),
        format!(
            "{} matrices, {} violations, mu bound asserted on {mu_checked}/{mu_cases} nonnegative cases with k >= p^(1/3)",
            jobs.len(),
            violations.len()
        ),
    );
    assert!(violations.is_empty(), "{violations:?}");
}

#[test]
fn criterion_4_node_counts() {
    let _g = serial();
    let spec = Table1Spec { rows: vec![], seed: 0, engine: NodeBound::Sdp, allow_large: false };
    let small = table1_row(&Table1Row { p: 20, n: 10, k: 2, instances: 100 }, &spec).unwrap().summary;
    let large = table1_row(&Table1Row { p: 30, n: 15, k: 3, instances: 10 }, &spec).unwrap().summary;
    let pass = small.nodes_avg < 380.0 && small.speedup_avg >= 1.5 && large.speedup_avg >= 2.0;
    report(
        4,
        pass,
        format!(
            "p=20 k=2: avg nodes {:.1}, speedup {:.2} (need >= 1.5); p=30 k=3: avg nodes {:.1}, speedup {:.2} (need >= 2)",
            small.nodes_avg, small.speedup_avg, large.nodes_avg, large.speedup_avg
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_heuristics_on_gabor_dictionaries() {
    let _g = serial();
    let out = table2(&Table2Spec::desk()).unwrap();
    let n = out.instances.len();
    assert_eq!(n, 30);
    assert!(out.instances.iter().all(|r| r.k >= 2 && r.k <= 4));
    let enhanced = out.instances.iter().filter(|r| solves(r.enhanced, r.psi)).count();
    let greedy = out.instances.iter().filter(|r| solves(r.greedy, r.psi)).count();
    let pass = enhanced as f64 >= 0.7 * n as f64 && greedy as f64 >= 0.6 * n as f64;
    report(
        5,
        pass,
        format!("enhanced solved {enhanced}/{n} (need >= 70%), greedy solved {greedy}/{n} (need >= 60%)"),
    );
    assert!(pass);
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Symmetric Gaussian, Wishart, and `bb' - rho X'X` matrices.
fn solver_matrix(kind: usize, p: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        0 => {
            let g = gaussian(p, p, &mut rng);
            SymMatrix::symmetrized(&g + g.transpose())
        }
        1 => {
            let g = gaussian(p, p, &mut rng);
            SymMatrix::symmetrized(&g * g.transpose())
        }
        _ => {
            let x = gaussian(p / 2, p, &mut rng);
            let y = DVector::from_fn(p / 2, |_, _| StandardNormal.sample(&mut rng));
            let b = x.transpose() * &y;
            let rho = 0.5 * y.norm_squared();
            SymMatrix::symmetrized(&b * b.transpose() - x.transpose() * &x * rho)
        }
    }
}

#[test]
fn criterion_6_solver_correctness() {
    let _g = serial();

    // duality gap within 5000 iterations
    let mut jobs = Vec::new();
    for p in [10usize, 20, 30, 50] {
        for kind in 0..3 {
            for s in 0..3u64 {
                jobs.push((p, kind, 600 + 10 * p as u64 + s));
            }
        }
    }
    let gaps: Vec<(String, bool)> = jobs
        .par_iter()
        .map(|&(p, kind, seed)| {
            let a = solver_matrix(kind, p, seed);
            let lmax = lambda_max(&a).0;
            let tol = 1e-4 * (1.0 + lmax.abs());
            let cfg = SolverConfig::default().with_epsilon(tol).with_max_iterations(5000);
            let r = sdp_k(&a, 5, &cfg).unwrap();
            (format!("p={p} kind={kind} seed={seed} gap={:.2e} tol={tol:.2e}", r.gap), r.gap <= tol)
        })
        .collect();
    let gap_failures: Vec<&String> = gaps.iter().filter(|g| !g.1).map(|g| &g.0).collect();

    // smoothed objective gradient against central differences, p = 5
    let mut grad_failures = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let a = solver_matrix(0, 5, 900 + seed);
        let y = {
            let g = gaussian(5, 5, &mut rng) * 0.3;
            (&g + g.transpose()) * 0.5
        };
        let d = {
            let g = gaussian(5, 5, &mut rng);
            (&g + g.transpose()) * 0.5
        };
        let mu = 0.5;
        let (_, grad) = smoothed_lambda_max(&a, &y, mu);
        let h = 1e-4;
        let fd = (smoothed_lambda_max(&a, &(&y + &d * h), mu).0 - smoothed_lambda_max(&a, &(&y - &d * h), mu).0)
            / (2.0 * h);
        let analytic = grad.component_mul(&d).sum();
        if (fd - analytic).abs() > 1e-5 * analytic.abs().max(1.0) {
            grad_failures.push(format!("seed {seed}: fd {fd} analytic {analytic}"));
        }
    }

    // every dual iterate bounds the sparse eigenvalue from above, p <= 10
    let mut iterate_checks = 0usize;
    let mut soundness_failures = Vec::new();
    for p in [4usize, 6, 8, 10] {
        for kind in 0..3 {
            for s in 0..3u64 {
                let a = solver_matrix(kind, p, 300 + 10 * p as u64 + s);
                for k in [1, 2, p / 2, p] {
                    let exact = sparse_eig_exact(&a, k, None).unwrap().value;
                    let slack = 1e-10 * (1.0 + exact.abs());
                    let cfg = SolverConfig::default().with_max_iterations(300);
                    solve_observed(&a, k, &cfg, None, StopRule::Converge, &mut |it, y, dual| {
                        iterate_checks += 1;
                        let recomputed = dual_objective(&a, k, y).unwrap();
                        if dual < exact - slack || recomputed < exact - slack {
                            soundness_failures.push(format!("p={p} kind={kind} k={k} iter {it}: {dual} < {exact}"));
                        }
                    })
                    .unwrap();
                }
            }
        }
    }

    let pass = gap_failures.is_empty() && grad_failures.is_empty() && soundness_failures.is_empty();
    report(
        6,
        pass,
        format!(
            "gap: {}/{} converged; gradient: {} mismatches in 20; iterate soundness: {} violations in {iterate_checks} iterates",
            gaps.len() - gap_failures.len(),
            gaps.len(),
            grad_failures.len(),
            soundness_failures.len()
        ),
    );
    assert!(grad_failures.is_empty(), "{grad_failures:?}");
    assert!(soundness_failures.is_empty(), "{soundness_failures:?}");
    assert!(gap_failures.is_empty(), "{gap_failures:?}");
}

#[test]
fn criterion_7_bound_and_objective_curves() {
    let _g = serial();
    let spec = Fig1Spec { n: 50, p: 30, planted_k: vec![2, 4], k_max: 6, seeds: (0..8).collect(), samples: 300 };
    let points = fig1(&spec).unwrap();
    let mut crossings = Vec::new();
    let (mut wins, mut total) = (0usize, 0usize);
    for pt in &points {
        let upper = pt.primal_rounding.min(pt.greedy).min(pt.enhanced);
        if pt.psi_lower > upper + 1e-9 * (1.0 + upper) {
            crossings.push(format!("planted {} seed {} k {}", pt.planted_k, pt.seed, pt.k));
        }
        if pt.k == pt.planted_k {
            total += 1;
            if pt.enhanced <= pt.greedy * (1.0 + 1e-9) {
                wins += 1;
            }
        }
    }
    let pass = crossings.is_empty() && 2 * wins >= total;
    report(
        7,
        pass,
        format!(
            "{} curve points, {} lower-bound crossings; enhanced <= greedy at the planted k on {wins}/{total} seeds (need >= 50%)",
            points.len(),
            crossings.len()
        ),
    );
    assert!(pass, "{crossings:?}");
}

#[test]
fn criterion_8_relaxation_scaling() {
    let _g = serial();
    let spec = ScalingSpec { ps: vec![25, 50, 100], k: 5, n_ratio: 0.5, seed: 0, epsilon: 1e-4, max_iterations: 5000 };
    let pts = scaling(&spec).unwrap();
    let t: Vec<f64> = pts.iter().map(|p| p.wall_time).collect();
    // superlinear: doubling p more than doubles the time
    let superlinear = t[1] > 2.0 * t[0] && t[2] > 2.0 * t[1];
    let pass = superlinear && t[2] < 300.0;
    report(
        8,
        pass,
        format!(
            "wall time p=25 {:.2}s, p=50 {:.2}s, p=100 {:.2}s (need superlinear and p=100 under 300s); gaps {:.1e} {:.1e} {:.1e}",
            t[0], t[1], t[2], pts[0].gap, pts[1].gap, pts[2].gap
        ),
    );
    assert!(pass);
}
