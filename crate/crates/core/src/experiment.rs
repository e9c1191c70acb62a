//! Benchmark harness: node counts of the branch-and-bound, heuristic quality on Gabor
//! dictionaries, bound/objective curves, relaxation timing and sparse eigenvalue ratios.
//!
//! Every experiment is a pure function of its spec (wall-time columns aside). Instances
//! run in parallel and results are collected in seed order.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bnb::{self, BnbConfig, NodeBound};
use crate::bounds::{lower_bound_with, BoundConfig, BoundEngine};
use crate::bruteforce::psi_exact;
use crate::combinatorics::permutations;
use crate::error::{Error, Result};
use crate::heuristics::{enhanced_from_covariance, forward_greedy, gaussian_rounding, relaxation_covariance, EnhancedConfig};
use crate::instance::{gabor_instances, generate_gaussian, GaborSpec, GaussianSpec};
use crate::sdp::{sdp_k, SolverConfig};
use crate::sparse_eig::{backward_greedy_eig, lambda_max, sparse_eig_exact, SymMatrix};

/// Largest dimension the table1 experiment runs without `allow_large`.
pub const TABLE1_DESK_MAX_P: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum ExperimentSpec {
    Table1(Table1Spec),
    Table2Like(Table2Spec),
    Fig1(Fig1Spec),
    Table3Scaling(ScalingSpec),
    RatioStudy(RatioSpec),
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutcome {
    pub files: Vec<PathBuf>,
    /// Parts that were not run, with the reason.
    pub skipped: Vec<String>,
}

impl ExperimentOutcome {
    pub fn is_partial(&self) -> bool {
        !self.skipped.is_empty()
    }
}

pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut outcome = ExperimentOutcome::default();
    match spec {
        ExperimentSpec::Table1(s) => {
            let mut runs = Vec::new();
            let mut summary = Vec::new();
            for row in &s.rows {
                if row.p > TABLE1_DESK_MAX_P && !s.allow_large {
                    outcome.skipped.push(format!(
                        "table1 row p={} n={} k={}: above the desk-scale limit p <= {TABLE1_DESK_MAX_P}",
                        row.p, row.n, row.k
                    ));
                    continue;
                }
                let out = table1_row(row, s)?;
                runs.extend(out.runs);
                summary.push(out.summary);
            }
            outcome.files.push(write_csv(&out_dir.join("table1_runs.csv"), &runs)?);
            outcome.files.push(write_csv(&out_dir.join("table1.csv"), &summary)?);
        }
        ExperimentSpec::Table2Like(s) => {
            let out = table2(s)?;
            outcome.files.push(write_csv(&out_dir.join("table2_instances.csv"), &out.instances)?);
            outcome.files.push(write_csv(&out_dir.join("table2.csv"), &out.summary)?);
        }
        ExperimentSpec::Fig1(s) => {
            outcome.files.push(write_csv(&out_dir.join("fig1.csv"), &fig1(s)?)?);
        }
        ExperimentSpec::Table3Scaling(s) => {
            outcome.files.push(write_csv(&out_dir.join("table3_scaling.csv"), &scaling(s)?)?);
        }
        ExperimentSpec::RatioStudy(s) => {
            outcome.files.push(write_csv(&out_dir.join("ratio_study.csv"), &ratio_study(s)?)?);
        }
    }
    Ok(outcome)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Validation(format!("csv output: {other:?}")),
    }
}

// ---------------------------------------------------------------------------
// table1: branch-and-bound node counts

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub p: usize,
    pub n: usize,
    pub k: usize,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Spec {
    pub rows: Vec<Table1Row>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_engine")]
    pub engine: NodeBound,
    #[serde(default)]
    pub allow_large: bool,
}

fn default_engine() -> NodeBound {
    NodeBound::Sdp
}

impl Table1Spec {
    /// The desk-scale rows: (20, 10, 2) on 100 instances and (30, 15, 3) on 10.
    pub fn desk() -> Self {
        Self {
            rows: vec![
                Table1Row { p: 20, n: 10, k: 2, instances: 100 },
                Table1Row { p: 30, n: 15, k: 3, instances: 10 },
            ],
            seed: 0,
            engine: NodeBound::Sdp,
            allow_large: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Run {
    pub p: usize,
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub nodes_visited: u64,
    pub nodes_fathomed: u64,
    pub best_objective: f64,
    pub root_lower_bound: f64,
    pub optimality_proved: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Summary {
    pub p: usize,
    pub n: usize,
    pub k: usize,
    pub instances: usize,
    pub nodes_best: u64,
    pub nodes_avg: f64,
    /// `p! / (p-k)!`, the number of ordered selections of k columns.
    pub full_tree: u64,
    pub speedup_avg: f64,
}

pub struct Table1Output {
    pub runs: Vec<Table1Run>,
    pub summary: Table1Summary,
}

/// Instance seeds of a row: `spec.seed + i`.
pub fn table1_row(row: &Table1Row, spec: &Table1Spec) -> Result<Table1Output> {
    let cfg = BnbConfig::new(spec.engine);
    let runs: Vec<Table1Run> = (0..row.instances as u64)
        .into_par_iter()
        .map(|i| {
            let seed = spec.seed + i;
            let (inst, _) = generate_gaussian(&GaussianSpec::new(row.n, row.p, row.k, seed))?;
            let r = bnb::solve(&inst, row.k, &cfg)?;
            Ok(Table1Run {
                p: row.p,
                n: row.n,
                k: row.k,
                seed,
                nodes_visited: r.nodes_visited,
                nodes_fathomed: r.nodes_fathomed,
                best_objective: r.best_objective,
                root_lower_bound: r.root_lower_bound,
                optimality_proved: r.optimality_proved,
                wall_time: r.wall_time.as_secs_f64(),
            })
        })
        .collect::<Result<_>>()?;
    let nodes_avg = runs.iter().map(|r| r.nodes_visited as f64).sum::<f64>() / runs.len().max(1) as f64;
    let full_tree = permutations(row.p, row.k).min(u64::MAX as u128) as u64;
    let summary = Table1Summary {
        p: row.p,
        n: row.n,
        k: row.k,
        instances: row.instances,
        nodes_best: runs.iter().map(|r| r.nodes_visited).min().unwrap_or(0),
        nodes_avg,
        full_tree,
        speedup_avg: full_tree as f64 / nodes_avg,
    };
    Ok(Table1Output { runs, summary })
}

// ---------------------------------------------------------------------------
// table2-like: greedy vs enhanced randomization on Gabor dictionaries

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table2Spec {
    pub patch_size: usize,
    pub num_atoms: usize,
    pub ks: Vec<usize>,
    pub instances_per_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    crate::heuristics::DEFAULT_SAMPLES
}

impl Table2Spec {
    /// 16-pixel patches, 24 atoms, 10 instances for each k in {2, 3, 4}.
    pub fn desk() -> Self {
        Self { patch_size: 4, num_atoms: 24, ks: vec![2, 3, 4], instances_per_k: 10, seed: 0, samples: 300 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Instance {
    pub index: usize,
    pub k: usize,
    pub psi: f64,
    pub greedy: f64,
    pub enhanced: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table2Summary {
    pub method: String,
    pub instances: usize,
    pub solved_count: usize,
    pub max_relative_gap: f64,
}

pub struct Table2Output {
    pub instances: Vec<Table2Instance>,
    pub summary: Vec<Table2Summary>,
}

/// `(obj - psi) / psi`, or `obj - psi` when `psi < 1e-12`.
pub fn relative_gap(obj: f64, psi: f64) -> f64 {
    if psi < 1e-12 {
        obj - psi
    } else {
        (obj - psi) / psi
    }
}

/// Whether a heuristic objective reaches the optimum.
pub fn solves(obj: f64, psi: f64) -> bool {
    obj <= psi + 1e-9 * psi.abs() + 1e-12
}

pub fn table2(spec: &Table2Spec) -> Result<Table2Output> {
    let gabor = GaborSpec::standard(spec.patch_size, spec.num_atoms, spec.seed);
    let total = spec.ks.len() * spec.instances_per_k;
    let insts = gabor_instances(&gabor, total, spec.seed)?;
    let jobs: Vec<(usize, usize)> = spec
        .ks
        .iter()
        .enumerate()
        .flat_map(|(ki, &k)| (0..spec.instances_per_k).map(move |j| (ki * spec.instances_per_k + j, k)))
        .collect();
    let instances: Vec<Table2Instance> = jobs
        .par_iter()
        .map(|&(index, k)| {
            let inst = &insts[index];
            let psi = psi_exact(inst, k, None)?.psi;
            let greedy = forward_greedy(inst, k)?.best.objective;
            let cfg = EnhancedConfig { num_samples: spec.samples, seed: spec.seed + index as u64, ..EnhancedConfig::default() };
            let z = relaxation_covariance(inst, k, &cfg.bound)?;
            let enhanced = enhanced_from_covariance(inst, k, &z, &cfg)?.best.objective;
            Ok(Table2Instance { index, k, psi, greedy, enhanced })
        })
        .collect::<Result<_>>()?;
    let summarize = |name: &str, pick: fn(&Table2Instance) -> f64| Table2Summary {
        method: name.to_string(),
        instances: instances.len(),
        solved_count: instances.iter().filter(|r| solves(pick(r), r.psi)).count(),
        max_relative_gap: instances.iter().map(|r| relative_gap(pick(r), r.psi)).fold(0.0, f64::max),
    };
    let summary = vec![summarize("greedy", |r| r.greedy), summarize("enhanced-randomization", |r| r.enhanced)];
    Ok(Table2Output { instances, summary })
}

// ---------------------------------------------------------------------------
// fig1: lower bound and heuristic objectives against k

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Spec {
    pub n: usize,
    pub p: usize,
    pub planted_k: Vec<usize>,
    pub k_max: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Fig1Point {
    pub planted_k: usize,
    pub seed: u64,
    pub k: usize,
    pub psi_lower: f64,
    pub primal_rounding: f64,
    pub greedy: f64,
    pub enhanced: f64,
}

pub fn fig1(spec: &Fig1Spec) -> Result<Vec<Fig1Point>> {
    if spec.k_max == 0 || spec.k_max > spec.p {
        return Err(Error::Parameter(format!("k_max = {} must lie in 1..=p", spec.k_max)));
    }
    let jobs: Vec<(usize, u64, usize)> = spec
        .planted_k
        .iter()
        .flat_map(|&pk| spec.seeds.iter().flat_map(move |&s| (1..=spec.k_max).map(move |k| (pk, s, k))))
        .collect();
    jobs.par_iter()
        .map(|&(planted_k, seed, k)| {
            let (inst, _) = generate_gaussian(&GaussianSpec::new(spec.n, spec.p, planted_k, seed))?;
            let bound_cfg = BoundConfig::new(BoundEngine::Sdp);
            let psi_lower = lower_bound_with(&inst, k, &bound_cfg)?.psi_lower;
            let z = relaxation_covariance(&inst, k, &bound_cfg)?;
            let primal_rounding = gaussian_rounding(&inst, k, &z, spec.samples, seed)?.best.objective;
            let greedy = forward_greedy(&inst, k)?.best.objective;
            let cfg = EnhancedConfig { num_samples: spec.samples, seed, ..EnhancedConfig::default() };
            let enhanced = enhanced_from_covariance(&inst, k, &z, &cfg)?.best.objective;
            Ok(Fig1Point { planted_k, seed, k, psi_lower, primal_rounding, greedy, enhanced })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// table3-scaling: relaxation solve time against p

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSpec {
    pub ps: Vec<usize>,
    pub k: usize,
    /// `n = ceil(n_ratio * p)`.
    pub n_ratio: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
}

fn default_epsilon() -> f64 {
    SolverConfig::default().epsilon
}

fn default_iterations() -> usize {
    SolverConfig::default().max_iterations
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub p: usize,
    pub n: usize,
    pub wall_time: f64,
    pub iterations: usize,
    pub gap: f64,
    pub converged: bool,
}

/// Solves `SDP_k(M(rho))` at `rho = y'y - greedy objective`, the relaxation a
/// branch-and-bound root would face. Runs sequentially so timings do not interfere.
pub fn scaling(spec: &ScalingSpec) -> Result<Vec<ScalingPoint>> {
    spec.ps
        .iter()
        .map(|&p| {
            let n = ((spec.n_ratio * p as f64).ceil() as usize).max(1);
            let (inst, _) = generate_gaussian(&GaussianSpec::new(n, p, spec.k.min(p), spec.seed))?;
            let k = spec.k.min(p);
            let greedy = forward_greedy(&inst, k)?.best.objective;
            let m = crate::bounds::assemble_m(&inst, inst.y_norm_sq() - greedy)?;
            let cfg = SolverConfig { epsilon: spec.epsilon, max_iterations: spec.max_iterations, ..SolverConfig::default() };
            let start = Instant::now();
            let sol = sdp_k(&m, k, &cfg)?;
            Ok(ScalingPoint {
                p,
                n,
                wall_time: start.elapsed().as_secs_f64(),
                iterations: sol.iterations,
                gap: sol.gap,
                converged: sol.converged,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Ratio study: sparse eigenvalues against the approximation bounds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    /// `G G'` with Gaussian `G` (p x (p+2)).
    Psd,
    /// `|G| |G|'`: psd with nonnegative entries.
    Nonnegative,
    /// `(G + G') / 2`.
    Symmetric,
}

pub fn random_matrix(kind: MatrixKind, p: usize, seed: u64) -> SymMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols = if kind == MatrixKind::Symmetric { p } else { p + 2 };
    let g: DMatrix<f64> = DMatrix::from_fn(p, cols, |_, _| StandardNormal.sample(&mut rng));
    match kind {
        MatrixKind::Psd => SymMatrix::symmetrized(&g * g.transpose()),
        MatrixKind::Nonnegative => {
            let a = g.abs();
            SymMatrix::symmetrized(&a * a.transpose())
        }
        MatrixKind::Symmetric => SymMatrix::symmetrized((&g + g.transpose()) * 0.5),
    }
}

/// `mu(k, p) = (1 - 2 / k^(1/3)) (1 - (p^2 / k^2) exp(-p^(1/9) / 3))`, or `None` unless
/// both factors are positive. Two negative factors give a positive product that can
/// exceed 1 and bounds nothing.
pub fn mu_factor(k: usize, p: usize) -> Option<f64> {
    let (k, p) = (k as f64, p as f64);
    let a = 1.0 - 2.0 / k.cbrt();
    let b = 1.0 - (p * p / (k * k)) * (-p.powf(1.0 / 9.0) / 3.0).exp();
    (a > 0.0 && b > 0.0).then_some(a * b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSpec {
    pub kind: MatrixKind,
    pub ps: Vec<usize>,
    pub matrices: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioPoint {
    pub matrix: usize,
    pub p: usize,
    pub k: usize,
    pub lambda_max: f64,
    pub sparse_lambda: f64,
    pub ratio: f64,
    pub greedy_ratio: f64,
    pub sdp_ratio: f64,
    /// `k / p`
    pub bound_k_over_p: f64,
    /// `k (k - 1) / (p (p - 1))`
    pub bound_indefinite: f64,
    /// `(k / p) mu(k, p)` when `mu` is defined and `k >= p^(1/3)`, else empty.
    pub bound_mu: Option<f64>,
}

pub fn ratio_study(spec: &RatioSpec) -> Result<Vec<RatioPoint>> {
    let jobs: Vec<(usize, usize)> = spec.ps.iter().flat_map(|&p| (0..spec.matrices).map(move |m| (p, m))).collect();
    let per: Vec<Vec<RatioPoint>> = jobs
        .par_iter()
        .map(|&(p, matrix)| {
            let a = random_matrix(spec.kind, p, spec.seed + (p * 100_000 + matrix) as u64);
            let lmax = lambda_max(&a).0;
            (1..=p)
                .map(|k| {
                    let exact = sparse_eig_exact(&a, k, None)?.value;
                    let greedy = backward_greedy_eig(&a, k)?.value;
                    let sdp = sdp_k(&a, k, &SolverConfig::default())?.dual_value;
                    let (kf, pf) = (k as f64, p as f64);
                    Ok(RatioPoint {
                        matrix,
                        p,
                        k,
                        lambda_max: lmax,
                        sparse_lambda: exact,
                        ratio: exact / lmax,
                        greedy_ratio: greedy / lmax,
                        sdp_ratio: sdp / lmax,
                        bound_k_over_p: kf / pf,
                        bound_indefinite: kf * (kf - 1.0) / (pf * (pf - 1.0)),
                        bound_mu: mu_factor(k, p).filter(|_| kf >= pf.cbrt()).map(|mu| kf / pf * mu),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}
