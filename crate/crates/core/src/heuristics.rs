//! Upper bounds on `psi(k)`: greedy support selection, randomized rounding of the
//! relaxation, and the enhanced pipeline that polishes rounded supports by local search.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::{lower_bound_with, BoundConfig, BoundEngine, MatrixAssembly};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{leading_eigenpair, sym_eigen};
use crate::sdp::{self, SolverConfig};
use crate::sparse_eig::{backward_greedy_eig_from, SymMatrix};
use crate::subset_eval::{evaluate_unchecked, FitResult, SupportSet};

pub const DEFAULT_SAMPLES: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryEntry {
    pub support: SupportSet,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeuristicResult {
    pub best: FitResult,
    pub trajectory: Vec<TrajectoryEntry>,
    pub samples_used: usize,
    /// Seed of the randomized methods; `None` for deterministic ones.
    pub rng_seed: Option<u64>,
}

fn check_support(inst: &Instance, k: usize, s: &SupportSet) -> Result<()> {
    if s.indices().last().is_some_and(|&i| i >= inst.p()) {
        return Err(Error::Validation(format!("support {s} out of range for p = {}", inst.p())));
    }
    if s.len() > k {
        return Err(Error::Validation(format!("support {s} has more than k = {k} indices")));
    }
    Ok(())
}

fn objective(inst: &Instance, s: &SupportSet) -> f64 {
    evaluate_unchecked(inst, s).objective
}

/// Index outside `current` whose addition gives the smallest objective; ties go to
/// the smallest index.
fn best_addition(inst: &Instance, current: &SupportSet) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for j in (0..inst.p()).filter(|&j| !current.contains(j)) {
        let v = objective(inst, &current.with(j));
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((j, v));
        }
    }
    best
}

/// Forward selection: start empty and add the index that lowers the residual most.
pub fn forward_greedy(inst: &Instance, k_target: usize) -> Result<HeuristicResult> {
    inst.check_k(k_target)?;
    let mut current = SupportSet::empty();
    let mut trajectory = Vec::with_capacity(k_target);
    for _ in 0..k_target {
        let (j, v) = best_addition(inst, &current).expect("k <= p leaves a free index");
        current = current.with(j);
        trajectory.push(TrajectoryEntry { support: current.clone(), objective: v });
    }
    Ok(HeuristicResult {
        best: evaluate_unchecked(inst, &current),
        trajectory,
        samples_used: 0,
        rng_seed: None,
    })
}

/// Backward elimination: start from all indices and drop the one whose removal raises
/// the residual least (ties to the smallest index).
pub fn backward_greedy(inst: &Instance, k_target: usize) -> Result<HeuristicResult> {
    inst.check_k(k_target)?;
    let mut current = SupportSet::full(inst.p());
    while current.len() > k_target {
        let mut best: Option<(usize, f64)> = None;
        for i in current.iter() {
            let v = objective(inst, &current.without(i));
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
        current = current.without(best.expect("non-empty support").0);
    }
    let best = evaluate_unchecked(inst, &current);
    Ok(HeuristicResult {
        trajectory: vec![TrajectoryEntry { support: current, objective: best.objective }],
        best,
        samples_used: 0,
        rng_seed: None,
    })
}

/// The `k` largest-magnitude coordinates (ties to the smaller index).
fn top_k(v: &DVector<f64>, k: usize) -> SupportSet {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j)));
    order.truncate(k);
    order.sort_unstable();
    SupportSet::new_unchecked(order)
}

/// Symmetric square root of a psd matrix, clamping eigenvalues in `[-1e-10 s, 0)` to zero
/// where `s = max(1, lambda_max)`.
fn psd_sqrt(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !z.is_square() || !crate::linalg::is_symmetric(z, 1e-8) {
        return Err(Error::Validation("covariance must be a symmetric square matrix".into()));
    }
    let eig = sym_eigen(z);
    let scale = eig.max().max(1.0);
    if eig.min() < -1e-10 * scale {
        return Err(Error::Validation(format!(
            "covariance is not positive semidefinite (smallest eigenvalue {:.3e})",
            eig.min()
        )));
    }
    let roots = eig.values.map(|l| l.max(0.0).sqrt());
    Ok(&eig.vectors * DMatrix::from_diagonal(&roots) * eig.vectors.transpose())
}

/// Evaluates each distinct support once (in parallel) and returns objectives keyed by
/// support.
fn evaluate_distinct(inst: &Instance, supports: &[SupportSet]) -> BTreeMap<Vec<usize>, f64> {
    let mut keys: Vec<Vec<usize>> = supports.iter().map(|s| s.indices().to_vec()).collect();
    keys.sort();
    keys.dedup();
    let values: Vec<f64> = keys
        .par_iter()
        .map(|s| objective(inst, &SupportSet::new_unchecked(s.clone())))
        .collect();
    keys.into_iter().zip(values).collect()
}

/// Draws `num_samples` vectors from `N(0, Z)`, keeps the `k` largest magnitudes of each
/// as a support and returns the best. Sample `i` uses stream `i` of the seeded generator,
/// so the result does not depend on the number of threads.
pub fn gaussian_rounding(
    inst: &Instance,
    k: usize,
    z: &DMatrix<f64>,
    num_samples: usize,
    seed: u64,
) -> Result<HeuristicResult> {
    inst.check_k(k)?;
    if num_samples == 0 {
        return Err(Error::Parameter("num_samples must be at least 1".into()));
    }
    if z.shape() != (inst.p(), inst.p()) {
        return Err(Error::Validation(format!(
            "covariance is {}x{}, expected {}x{}",
            z.nrows(),
            z.ncols(),
            inst.p(),
            inst.p()
        )));
    }
    let root = psd_sqrt(z)?;
    let p = inst.p();
    let supports: Vec<SupportSet> = (0..num_samples)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let g = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            top_k(&(&root * g), k)
        })
        .collect();
    let values = evaluate_distinct(inst, &supports);
    let trajectory: Vec<TrajectoryEntry> = supports
        .into_iter()
        .map(|s| TrajectoryEntry { objective: values[s.indices()], support: s })
        .collect();
    let best = trajectory
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.support.indices().cmp(b.support.indices())))
        .expect("at least one sample");
    Ok(HeuristicResult {
        best: evaluate_unchecked(inst, &best.support),
        trajectory,
        samples_used: num_samples,
        rng_seed: Some(seed),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EigRoundingResult {
    pub support: SupportSet,
    /// `z'Az` with `z_i = 1/sqrt(k)` on the support.
    pub value: f64,
    pub samples_used: usize,
}

/// Samples supports from the leading eigenvector `x` of `a`, keeping index `i` with
/// probability `min(1, k |x_i| / ||x||_1)`, prunes oversized supports to `k` by backward
/// greedy on the principal submatrix and scores `z'Az` for `z = 1_S / sqrt(k)`.
pub fn eigenvector_rounding(a: &SymMatrix, k: usize, num_samples: usize, seed: u64) -> Result<EigRoundingResult> {
    let p = a.dim();
    if k == 0 || k > p {
        return Err(Error::Parameter(format!("k = {k} must satisfy 1 <= k <= p = {p}")));
    }
    if num_samples == 0 {
        return Err(Error::Parameter("num_samples must be at least 1".into()));
    }
    let (_, x) = leading_eigenpair(a);
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    let probs: Vec<f64> = x.iter().map(|v| (k as f64 * v.abs() / l1).min(1.0)).collect();
    let score = |s: &SupportSet| -> f64 {
        let idx = s.indices();
        idx.iter().map(|&i| idx.iter().map(|&j| a[(i, j)]).sum::<f64>()).sum::<f64>() / k as f64
    };
    let mut best: Option<(f64, SupportSet)> = None;
    for i in 0..num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let picked: Vec<usize> = (0..p).filter(|&j| rng.gen::<f64>() < probs[j]).collect();
        let mut s = SupportSet::new_unchecked(picked);
        if s.len() > k {
            s = backward_greedy_eig_from(a, &s, k).support;
        }
        let v = score(&s);
        let better = match &best {
            None => true,
            Some((bv, bs)) => v > *bv || (v == *bv && s.indices() < bs.indices()),
        };
        if better {
            best = Some((v, s));
        }
    }
    let (value, support) = best.expect("at least one sample");
    Ok(EigRoundingResult { support, value, samples_used: num_samples })
}

/// Local search: fill `start` up to `k` indices by forward steps, then apply the best
/// single swap while it lowers the objective by more than `1e-12` relative.
pub fn greedy_improve(inst: &Instance, k: usize, start: &SupportSet) -> Result<FitResult> {
    inst.check_k(k)?;
    check_support(inst, k, start)?;
    let mut current = start.clone();
    let mut value = objective(inst, &current);
    while current.len() < k {
        let (j, v) = best_addition(inst, &current).expect("k <= p leaves a free index");
        current = current.with(j);
        value = v;
    }
    loop {
        let mut best: Option<(SupportSet, f64)> = None;
        for i in current.iter() {
            let base = current.without(i);
            for j in (0..inst.p()).filter(|&j| !current.contains(j)) {
                let cand = base.with(j);
                let v = objective(inst, &cand);
                if best.as_ref().is_none_or(|(_, b)| v < *b) {
                    best = Some((cand, v));
                }
            }
        }
        match best {
            Some((s, v)) if v < value - 1e-12 * value.abs() => {
                current = s;
                value = v;
            }
            _ => break,
        }
    }
    Ok(evaluate_unchecked(inst, &current))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedConfig {
    pub num_samples: usize,
    pub seed: u64,
    /// Number of best distinct rounded supports passed to local search.
    pub improve_top: usize,
    /// Also run local search from the forward greedy support.
    pub improve_greedy: bool,
    /// Settings for the relaxation that provides the sampling covariance.
    pub bound: BoundConfig,
}

impl Default for EnhancedConfig {
    fn default() -> Self {
        Self {
            num_samples: DEFAULT_SAMPLES,
            seed: 0,
            improve_top: 5,
            improve_greedy: true,
            bound: BoundConfig::new(BoundEngine::Sdp),
        }
    }
}

/// Relaxation primal used for rounding: `Z` from `SDP_k(M(rho))` at the `rho` where the
/// relaxation bound is certified.
pub fn relaxation_covariance(inst: &Instance, k: usize, cfg: &BoundConfig) -> Result<DMatrix<f64>> {
    let bound_cfg = BoundConfig { engine: BoundEngine::Sdp, ..cfg.clone() };
    let lb = lower_bound_with(inst, k, &bound_cfg)?;
    let m = MatrixAssembly::new(inst).m(lb.rho_star.clamp(0.0, inst.y_norm_sq()));
    let solver = SolverConfig { epsilon: 1e-6 * (1.0 + crate::linalg::max_abs(&m)), ..cfg.solver.clone() };
    Ok(sdp::sdp_k(&m, k, &solver)?.primal_z)
}

/// Rounding from the relaxation followed by local search on the best distinct supports
/// (and on the forward greedy support when `improve_greedy` is set). The trajectory lists
/// the rounded supports and then the improved ones.
pub fn enhanced_randomization(inst: &Instance, k: usize, cfg: &EnhancedConfig) -> Result<HeuristicResult> {
    inst.check_k(k)?;
    let z = relaxation_covariance(inst, k, &cfg.bound)?;
    enhanced_from_covariance(inst, k, &z, cfg)
}

pub fn enhanced_from_covariance(
    inst: &Instance,
    k: usize,
    z: &DMatrix<f64>,
    cfg: &EnhancedConfig,
) -> Result<HeuristicResult> {
    let rounded = gaussian_rounding(inst, k, z, cfg.num_samples, cfg.seed)?;
    let mut distinct: Vec<&TrajectoryEntry> = rounded.trajectory.iter().collect();
    distinct.sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.support.indices().cmp(b.support.indices())));
    distinct.dedup_by(|a, b| a.support == b.support);
    distinct.truncate(cfg.improve_top.max(1));
    let mut starts: Vec<SupportSet> = distinct.iter().map(|e| e.support.clone()).collect();
    if cfg.improve_greedy {
        starts.push(forward_greedy(inst, k)?.best.support);
    }
    let improved: Vec<FitResult> = starts
        .par_iter()
        .map(|s| greedy_improve(inst, k, s))
        .collect::<Result<_>>()?;

    let mut trajectory = rounded.trajectory.clone();
    trajectory.extend(improved.iter().map(|f| TrajectoryEntry { support: f.support.clone(), objective: f.objective }));
    let best = trajectory
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.support.indices().cmp(b.support.indices())))
        .expect("non-empty");
    Ok(HeuristicResult {
        best: evaluate_unchecked(inst, &best.support),
        trajectory,
        samples_used: cfg.num_samples,
        rng_seed: Some(cfg.seed),
    })
}
