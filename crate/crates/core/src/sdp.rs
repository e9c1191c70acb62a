//! The relaxation `SDP_k(A) = max { Tr AZ : Tr Z = 1, Z psd, ||Z||_1 <= k }`, solved
//! through its dual
//!
//! ```text
//! min_Y  lambda_max(A + Y) + k * max_ij |Y_ij|
//! ```
//!
//! Every symmetric `Y` gives an upper bound on `SDP_k(A)` and hence on the k-sparse
//! maximum eigenvalue, so the solver can be stopped at any point without losing
//! soundness. `lambda_max` is replaced by the log-sum-exp of the spectrum at
//! temperature `mu` and the max-norm term is handled through its proximal map, giving an
//! accelerated proximal gradient method. The temperature is lowered in stages down to
//! `epsilon / (2 ln p)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    inner, l1_norm, leading_eigenpair, max_abs, principal_submatrix, sym_eigen, SortedEigen,
};
use crate::sparse_eig::SymMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Target absolute duality gap.
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Final smoothing temperature; `None` means `epsilon / (2 ln p)`.
    pub smoothing: Option<f64>,
    /// Start from a coarse temperature and shrink it by `shrink` per stage.
    pub continuation: bool,
    pub shrink: f64,
    /// Reset momentum whenever the smoothed objective goes up.
    pub adaptive_restart: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iterations: 5000,
            smoothing: None,
            continuation: true,
            shrink: 0.2,
            adaptive_restart: true,
        }
    }
}

impl SolverConfig {
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iterations(mut self, iters: usize) -> Self {
        self.max_iterations = iters;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter("epsilon must be positive".into()));
        }
        if let Some(mu) = self.smoothing {
            if !(mu > 0.0 && mu.is_finite()) {
                return Err(Error::Parameter("smoothing must be positive".into()));
            }
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Parameter("shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn target_smoothing(&self, p: usize) -> f64 {
        self.smoothing
            .unwrap_or_else(|| self.epsilon / (2.0 * (p.max(2) as f64).ln()))
    }
}

/// When to stop besides convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run until the gap reaches `epsilon` or the budget is spent.
    Converge,
    /// Also stop as soon as the sign of `SDP_k(A) - threshold` is known: the dual
    /// bound drops to `threshold` or below, or a feasible primal exceeds it.
    Decide { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxSolution {
    /// Feasible primal point: `Tr Z = 1`, `Z` psd, `||Z||_1 <= k`.
    pub primal_z: DMatrix<f64>,
    /// Dual point achieving `dual_value`.
    pub dual_y: DMatrix<f64>,
    pub primal_value: f64,
    /// `lambda_max(A + Y) + k max|Y|`, an upper bound on `SDP_k(A)`.
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The unrepaired softmax primal at `dual_y` already satisfied `||Z||_1 <= k`.
    pub l1_feasible: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RelaxSummary {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl RelaxSolution {
    pub fn summary(&self) -> RelaxSummary {
        RelaxSummary {
            primal_value: self.primal_value,
            dual_value: self.dual_value,
            gap: self.gap,
            iterations: self.iterations,
            converged: self.converged,
        }
    }

    /// Whether the result settles `SDP_k(A) <= threshold` (Some(true)), `> threshold`
    /// (Some(false)) or neither.
    pub fn decides(&self, threshold: f64) -> Option<bool> {
        if self.dual_value <= threshold {
            Some(true)
        } else if self.primal_value > threshold {
            Some(false)
        } else {
            None
        }
    }
}

/// `lambda_max(A + Y) + k max|Y_ij|`; an upper bound on `SDP_k(A)` for every symmetric `Y`.
pub fn dual_objective(a: &SymMatrix, k: usize, y: &DMatrix<f64>) -> Result<f64> {
    if y.shape() != a.shape() {
        return Err(Error::Validation(format!(
            "dual matrix is {}x{}, expected {}x{}",
            y.nrows(),
            y.ncols(),
            a.dim(),
            a.dim()
        )));
    }
    Ok(dual_value_unchecked(a, k, y))
}

pub(crate) fn dual_value_unchecked(a: &DMatrix<f64>, k: usize, y: &DMatrix<f64>) -> f64 {
    crate::linalg::max_eigenvalue(&(a + y)) + k as f64 * max_abs(y)
}

/// Smoothed maximum eigenvalue `mu log Tr exp(X / mu)` from a precomputed spectrum,
/// with the softmax weights of each eigenvalue.
fn smoothed_from_eigen(eig: &SortedEigen, mu: f64) -> (f64, Vec<f64>) {
    let top = eig.max();
    let raw: Vec<f64> = eig.values.iter().map(|&l| ((l - top) / mu).exp()).collect();
    let total: f64 = raw.iter().sum();
    let value = top + mu * total.ln();
    (value, raw.into_iter().map(|w| w / total).collect())
}

/// `V diag(w) V'` keeping only non-negligible weights.
fn spectral_matrix(eig: &SortedEigen, weights: &[f64]) -> DMatrix<f64> {
    let p = eig.vectors.nrows();
    let mut z = DMatrix::zeros(p, p);
    for (j, &w) in weights.iter().enumerate() {
        if w > 1e-18 {
            let v = eig.vectors.column(j);
            z.ger(w, &v, &v, 1.0);
        }
    }
    z
}

/// Smoothed objective `f_mu(A + Y) = mu log Tr exp((A + Y)/mu)` and its gradient with
/// respect to `Y` (the softmax spectral projector, a density matrix).
pub fn smoothed_lambda_max(a: &SymMatrix, y: &DMatrix<f64>, mu: f64) -> (f64, DMatrix<f64>) {
    let eig = sym_eigen(&(a.as_matrix() + y));
    let (value, w) = smoothed_from_eigen(&eig, mu);
    (value, spectral_matrix(&eig, &w))
}

/// Maximizer of `Tr Z(A + Y) + mu * entropy(Z)` over density matrices, i.e.
/// `exp((A + Y)/mu) / Tr exp((A + Y)/mu)`; with `mu = 0` the top eigenprojector
/// (split evenly over ties). The flag reports `||Z||_1 <= k (1 + 1e-6)`.
pub fn recover_primal(a: &SymMatrix, k: usize, y: &DMatrix<f64>, mu: f64) -> (DMatrix<f64>, bool) {
    let eig = sym_eigen(&(a.as_matrix() + y));
    let z = if mu > 0.0 {
        let (_, w) = smoothed_from_eigen(&eig, mu);
        spectral_matrix(&eig, &w)
    } else {
        let top = eig.max();
        let tol = 1e-12 * top.abs().max(1.0);
        let ties = eig.values.iter().filter(|&&l| l >= top - tol).count();
        let w: Vec<f64> = eig
            .values
            .iter()
            .map(|&l| if l >= top - tol { 1.0 / ties as f64 } else { 0.0 })
            .collect();
        spectral_matrix(&eig, &w)
    };
    let feasible = l1_norm(&z) <= k as f64 * (1.0 + 1e-6);
    (z, feasible)
}

/// Makes a density matrix satisfy `||Z||_1 <= k` by mixing it with an l1-feasible
/// anchor and returns the repaired matrix with its objective `Tr AZ`.
///
/// Anchors tried: `I/p` and `diag(Z)`, for which `||t Z + (1-t) D||_1 = 1 + t (||Z||_1 - 1)`
/// gives the mixing weight in closed form, and `xx'` for the leading eigenvector `x` of
/// the principal block on the `k` largest diagonal entries of `Z` (`||x||_1^2 <= k`).
/// The best mixture is kept.
fn repair_primal(a: &DMatrix<f64>, k: usize, z: DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let p = a.nrows();
    let l1 = l1_norm(&z);
    let kf = k as f64;
    let value_z = inner(a, &z);
    if l1 <= kf {
        return (z, value_z);
    }

    // t Z + (1-t) diag(Z) is the Schur product of Z with a psd matrix
    let t_id = ((kf - 1.0) / (l1 - 1.0)).clamp(0.0, 1.0);
    let value_id = t_id * value_z + (1.0 - t_id) * a.trace() / p as f64;
    let diag_value: f64 = (0..p).map(|i| a[(i, i)] * z[(i, i)]).sum();
    let value_diag = t_id * value_z + (1.0 - t_id) * diag_value;

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| z[(j, j)].total_cmp(&z[(i, i)]).then(i.cmp(&j)));
    let mut support: Vec<usize> = order[..k].to_vec();
    support.sort_unstable();
    let (anchor_value, local) = leading_eigenpair(&principal_submatrix(a, &support));
    let mut x = DVector::zeros(p);
    for (&i, v) in support.iter().zip(local.iter()) {
        x[i] = *v;
    }
    let anchor = &x * x.transpose();
    let mix_l1 = |t: f64| -> f64 {
        z.iter()
            .zip(anchor.iter())
            .map(|(zv, av)| (t * zv + (1.0 - t) * av).abs())
            .sum()
    };
    // the l1 norm of the mixture is convex in t and feasible at t = 0
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mix_l1(mid) <= kf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let value_anchor = lo * value_z + (1.0 - lo) * anchor_value;

    if value_anchor > value_id.max(value_diag) {
        return (&z * lo + &anchor * (1.0 - lo), value_anchor);
    }
    let use_diag = value_diag > value_id;
    let mut out = &z * t_id;
    for i in 0..p {
        out[(i, i)] += (1.0 - t_id) * if use_diag { z[(i, i)] } else { 1.0 / p as f64 };
    }
    (out, value_id.max(value_diag))
}

/// Euclidean projection of `v` onto `{ x : ||x||_1 <= radius }`, returning the
/// soft-threshold level (`0` when `v` is already inside). Randomized-pivot selection,
/// expected linear time.
pub fn l1_ball_threshold(v: &[f64], radius: f64) -> f64 {
    let total: f64 = v.iter().map(|x| x.abs()).sum();
    if total <= radius {
        return 0.0;
    }
    if radius <= 0.0 {
        return v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    }
    let mut work: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let (mut lo, mut hi) = (0usize, work.len());
    let (mut sum, mut count) = (0.0f64, 0usize);
    // xorshift keeps pivots deterministic
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    while lo < hi {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let pick = lo + (state % (hi - lo) as u64) as usize;
        work.swap(lo, pick);
        let pivot = work[lo];
        // partition work[lo+1..hi] into >= pivot (front) and < pivot (back)
        let mut mid = lo + 1;
        for j in lo + 1..hi {
            if work[j] >= pivot {
                work.swap(mid, j);
                mid += 1;
            }
        }
        let ge_sum: f64 = work[lo..mid].iter().sum();
        let ge_count = mid - lo;
        if (sum + ge_sum) - (count + ge_count) as f64 * pivot < radius {
            sum += ge_sum;
            count += ge_count;
            lo = mid;
        } else {
            lo += 1;
            hi = mid;
        }
    }
    ((sum - radius) / count as f64).max(0.0)
}

/// Proximal map of `t * ||.||_max` at `v`: `v - proj_{l1 ball of radius t}(v)`, i.e. every
/// entry clipped to `[-theta, theta]`.
pub fn prox_max_norm(v: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let theta = l1_ball_threshold(v.as_slice(), t);
    if theta == 0.0 {
        if l1_norm(v) <= t {
            return DMatrix::zeros(v.nrows(), v.ncols());
        }
        return v.clone();
    }
    v.map(|x| x.clamp(-theta, theta))
}

struct Evaluated {
    y: DMatrix<f64>,
    eig: SortedEigen,
}

impl Evaluated {
    fn new(a: &DMatrix<f64>, y: DMatrix<f64>) -> Self {
        let eig = sym_eigen(&(a + &y));
        Self { y, eig }
    }

    fn dual(&self, k: usize) -> f64 {
        self.eig.max() + k as f64 * max_abs(&self.y)
    }
}

/// Solves `SDP_k(a)` from `Y = 0` (or `warm_start`).
pub fn sdp_k(a: &SymMatrix, k: usize, cfg: &SolverConfig) -> Result<RelaxSolution> {
    solve(a, k, cfg, None, StopRule::Converge)
}

/// Full-control entry point: optional warm start and early-decision rule.
pub fn solve(
    a: &SymMatrix,
    k: usize,
    cfg: &SolverConfig,
    warm_start: Option<&DMatrix<f64>>,
    stop: StopRule,
) -> Result<RelaxSolution> {
    solve_observed(a, k, cfg, warm_start, stop, &mut |_, _, _| {})
}

/// Like [`solve`], calling `observer(iteration, y, dual)` on every dual iterate.
pub fn solve_observed(
    a: &SymMatrix,
    k: usize,
    cfg: &SolverConfig,
    warm_start: Option<&DMatrix<f64>>,
    stop: StopRule,
    observer: &mut dyn FnMut(usize, &DMatrix<f64>, f64),
) -> Result<RelaxSolution> {
    cfg.validate()?;
    let p = a.dim();
    if k == 0 || k > p {
        return Err(Error::Parameter(format!("k = {k} must satisfy 1 <= k <= p = {p}")));
    }
    if let Some(y0) = warm_start {
        if y0.shape() != a.shape() {
            return Err(Error::Validation("warm start has the wrong shape".into()));
        }
    }
    let am = a.as_matrix();
    let kf = k as f64;
    let log_p = (p.max(2) as f64).ln();
    let mu_target = cfg.target_smoothing(p);

    let start = Evaluated::new(am, warm_start.cloned().unwrap_or_else(|| DMatrix::zeros(p, p)));
    observer(0, &start.y, start.dual(k));
    let mut best_dual = start.dual(k);
    let mut best_y = start.y.clone();

    let spread = (start.eig.max() - start.eig.min()).max(max_abs(am)).max(1e-300);
    let mut mu = if cfg.continuation {
        (0.05 * spread / log_p).max(mu_target)
    } else {
        mu_target
    };

    let (softmax_w, l1_ok) = {
        let (_, w) = smoothed_from_eigen(&start.eig, mu);
        let z = spectral_matrix(&start.eig, &w);
        let ok = l1_norm(&z) <= kf * (1.0 + 1e-6);
        (z, ok)
    };
    let (mut best_z, mut best_primal) = repair_primal(am, k, softmax_w);
    let mut best_l1_ok = l1_ok;

    let finished = |dual: f64, primal: f64| -> bool {
        if dual - primal <= cfg.epsilon {
            return true;
        }
        match stop {
            StopRule::Converge => false,
            StopRule::Decide { threshold } => dual <= threshold || primal > threshold,
        }
    };

    let mut iterations = 0;
    let mut current = start;
    'stages: while !finished(best_dual, best_primal) && iterations < cfg.max_iterations {
        let mut prev_y = current.y.clone();
        let mut momentum = 1.0f64;
        let mut lipschitz = 0.1 / mu;
        let (mut f_current, _) = smoothed_from_eigen(&current.eig, mu);
        let f_current_of = |e: &Evaluated| smoothed_from_eigen(&e.eig, mu).0 + kf * max_abs(&e.y);
        f_current += kf * max_abs(&current.y);
        let mut stage_iters = 0usize;
        // step-weighted average of the gradients (density matrices) seen in this stage
        let mut avg_z = DMatrix::<f64>::zeros(p, p);
        let mut avg_weight = 0.0f64;
        loop {
            if iterations >= cfg.max_iterations || finished(best_dual, best_primal) {
                break 'stages;
            }
            iterations += 1;
            stage_iters += 1;
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            let w = &current.y + (&current.y - &prev_y) * beta;
            let at_w = Evaluated::new(am, w);
            let (f_w, weights) = smoothed_from_eigen(&at_w.eig, mu);
            let grad = spectral_matrix(&at_w.eig, &weights);

            let candidate = loop {
                let step = 1.0 / lipschitz;
                let v = &at_w.y - &grad * step;
                let y_new = prox_max_norm(&v, kf * step);
                let cand = Evaluated::new(am, y_new);
                let (f_new, _) = smoothed_from_eigen(&cand.eig, mu);
                let diff = &cand.y - &at_w.y;
                let model = f_w + inner(&grad, &diff) + 0.5 * lipschitz * diff.norm_squared();
                if f_new <= model + 1e-12 * f_w.abs().max(1.0) || lipschitz >= 1.0 / mu {
                    break cand;
                }
                lipschitz = (2.0 * lipschitz).min(1.0 / mu);
            };
            let step = 1.0 / lipschitz;
            avg_z += &grad * step;
            avg_weight += step;
            lipschitz = (0.9 * lipschitz).max(1e-3 / mu);

            let dual = candidate.dual(k);
            observer(iterations, &candidate.y, dual);
            if dual < best_dual {
                best_dual = dual;
                best_y = candidate.y.clone();
            }
            let (_, w_new) = smoothed_from_eigen(&candidate.eig, mu);
            let z_raw = spectral_matrix(&candidate.eig, &w_new);
            let raw_ok = l1_norm(&z_raw) <= kf * (1.0 + 1e-6);
            let (z, primal) = repair_primal(am, k, z_raw);
            if primal > best_primal {
                best_primal = primal;
                best_z = z;
                best_l1_ok = raw_ok;
            }
            let (z, primal) = repair_primal(am, k, &avg_z / avg_weight);
            if primal > best_primal {
                best_primal = primal;
                best_z = z;
            }

            let f_new = f_current_of(&candidate);
            if cfg.adaptive_restart && f_new > f_current {
                momentum = 1.0;
                prev_y = candidate.y.clone();
            } else {
                momentum = next_momentum;
                prev_y = std::mem::replace(&mut current.y, candidate.y.clone());
            }
            current = candidate;
            f_current = f_new;

            let gap = best_dual - best_primal;
            if mu > mu_target && (gap <= 4.0 * mu * log_p || stage_iters >= 400) {
                mu = (mu * cfg.shrink).max(mu_target);
                continue 'stages;
            }
        }
    }

    let gap = (best_dual - best_primal).max(0.0);
    Ok(RelaxSolution {
        primal_z: best_z,
        dual_y: best_y,
        primal_value: best_primal,
        dual_value: best_dual,
        gap,
        iterations,
        converged: gap <= cfg.epsilon,
        l1_feasible: best_l1_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_eig::{lambda_max, sparse_eig_exact};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn random_sym(p: usize, seed: u64) -> SymMatrix {
        let g = gaussian(p, p, seed);
        SymMatrix::symmetrized(&g + g.transpose())
    }

    fn random_psd(p: usize, seed: u64) -> SymMatrix {
        let g = gaussian(p, p + 3, seed);
        SymMatrix::symmetrized(&g * g.transpose())
    }

    /// Sort-based projection threshold, for comparison with the selection routine.
    fn threshold_by_sort(v: &[f64], radius: f64) -> f64 {
        let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
        if a.iter().sum::<f64>() <= radius {
            return 0.0;
        }
        a.sort_by(|x, y| y.total_cmp(x));
        let mut cum = 0.0;
        let mut theta = 0.0;
        for (j, &u) in a.iter().enumerate() {
            cum += u;
            let t = (cum - radius) / (j + 1) as f64;
            if u > t {
                theta = t;
            }
        }
        theta
    }

    fn check_solution(a: &SymMatrix, k: usize, s: &RelaxSolution) {
        let z = &s.primal_z;
        assert!((z.trace() - 1.0).abs() < 1e-8);
        assert!(sym_eigen(z).min() > -1e-8);
        assert!(l1_norm(z) <= k as f64 * (1.0 + 1e-6));
        assert!((inner(a, z) - s.primal_value).abs() < 1e-8 * (1.0 + s.primal_value.abs()));
        let d = dual_objective(a, k, &s.dual_y).unwrap();
        assert!((d - s.dual_value).abs() < 1e-9 * (1.0 + d.abs()));
        assert!(s.dual_value >= s.primal_value - 1e-9 * (1.0 + d.abs()));
    }

    #[test]
    fn identity_relaxation_is_one() {
        for k in 1..=5 {
            let a = SymMatrix::identity(5);
            let s = sdp_k(&a, k, &SolverConfig::default()).unwrap();
            assert!(s.converged);
            assert!((s.dual_value - 1.0).abs() < 1e-6);
            assert!((s.primal_value - 1.0).abs() < 1e-6);
            check_solution(&a, k, &s);
        }
    }

    #[test]
    fn full_cardinality_matches_lambda_max() {
        let mut checked = 0;
        for seed in 0..10 {
            let a = random_sym(8, seed);
            let (lmax, x) = lambda_max(&a);
            if x.iter().map(|v| v.abs()).sum::<f64>().powi(2) > 8.0 {
                continue;
            }
            let s = sdp_k(&a, 8, &SolverConfig::default().with_epsilon(1e-7)).unwrap();
            assert!((s.dual_value - lmax).abs() < 1e-6, "seed {seed}");
            check_solution(&a, 8, &s);
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn dual_dominates_sparse_eigenvalue() {
        for seed in 0..20 {
            let a = random_sym(8, 50 + seed);
            let exact = sparse_eig_exact(&a, 3, None).unwrap().value;
            let s = sdp_k(&a, 3, &SolverConfig::default()).unwrap();
            assert!(s.dual_value >= exact - 1e-6, "seed {seed}");
            check_solution(&a, 3, &s);
        }
    }

    #[test]
    fn dual_objective_examples() {
        let a = random_sym(6, 9);
        let zero = DMatrix::zeros(6, 6);
        assert!((dual_objective(&a, 2, &zero).unwrap() - lambda_max(&a).0).abs() < 1e-12);

        let d = SymMatrix::from_diagonal(&[2.0, 1.0]);
        assert!((dual_objective(&d, 1, &DMatrix::zeros(2, 2)).unwrap() - 2.0).abs() < 1e-15);
        for delta in [0.1, 0.5, 1.0] {
            let y = DMatrix::from_diagonal(&DVector::from_vec(vec![-delta, delta]));
            assert!(dual_objective(&d, 1, &y).unwrap() >= 2.0);
        }

        assert!(dual_objective(&a, 2, &DMatrix::zeros(5, 5)).is_err());

        let s = sdp_k(&a, 2, &SolverConfig::default().with_epsilon(1e-7)).unwrap();
        for seed in 0..20 {
            let g = gaussian(6, 6, 300 + seed) * 0.3;
            let y = (&g + g.transpose()) * 0.5;
            assert!(dual_objective(&a, 2, &y).unwrap() >= s.primal_value - 1e-8);
        }
    }

    #[test]
    fn recover_primal_examples() {
        let (z, ok) = recover_primal(&SymMatrix::identity(4), 2, &DMatrix::zeros(4, 4), 0.1);
        assert!((z - DMatrix::identity(4, 4) / 4.0).amax() < 1e-14);
        assert!(ok);

        let a = random_sym(6, 4);
        let (_, x) = lambda_max(&a);
        let target = &x * x.transpose();
        let zero = DMatrix::zeros(6, 6);
        let (z0, _) = recover_primal(&a, 6, &zero, 0.0);
        assert!((&z0 - &target).amax() < 1e-10);
        let (z_small, _) = recover_primal(&a, 6, &zero, 1e-3);
        assert!((&z_small - &target).amax() < 1e-6);
    }

    #[test]
    fn converged_dual_gives_l1_feasible_primal() {
        for seed in 0..5 {
            let a = random_sym(6, 70 + seed);
            let cfg = SolverConfig::default().with_epsilon(1e-4 * (1.0 + lambda_max(&a).0.abs()));
            let s = sdp_k(&a, 2, &cfg).unwrap();
            assert!(s.converged, "seed {seed}: gap {} after {}", s.gap, s.iterations);
            let (z, _) = recover_primal(&a, 2, &s.dual_y, cfg.target_smoothing(6));
            // feasible up to the accuracy of the dual point
            assert!(l1_norm(&z) <= 2.0 * 1.05, "seed {seed}: {}", l1_norm(&z));
        }
    }

    #[test]
    fn l1_threshold_matches_sort() {
        for seed in 0..50 {
            let v = gaussian(1, 40, 500 + seed);
            let max = v.amax();
            assert_eq!(l1_ball_threshold(v.as_slice(), 0.0), max);
            for radius in [0.5, 3.0, 10.0, 100.0] {
                let fast = l1_ball_threshold(v.as_slice(), radius);
                let slow = threshold_by_sort(v.as_slice(), radius);
                assert!((fast - slow).abs() < 1e-12, "seed {seed} radius {radius}");
            }
        }
        // ties
        let v = [1.0, 1.0, 1.0, -1.0];
        assert!((l1_ball_threshold(&v, 2.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn prox_is_clipping() {
        let v = DMatrix::from_row_slice(2, 2, &[3.0, -1.0, -1.0, 0.5]);
        // projection of |v| = (3,1,1,0.5) on the radius-1 ball has threshold 2
        let out = prox_max_norm(&v, 1.0);
        assert_eq!(out, DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.5]));
        assert_eq!(prox_max_norm(&v, 10.0), DMatrix::zeros(2, 2));
    }

    #[test]
    fn smoothed_gradient_matches_finite_differences() {
        for seed in 0..10 {
            let a = random_sym(5, 900 + seed);
            let g = gaussian(5, 5, 950 + seed) * 0.5;
            let y = (&g + g.transpose()) * 0.5;
            let mu = 0.3;
            let (_, grad) = smoothed_lambda_max(&a, &y, mu);
            let h = 1e-5;
            for i in 0..5 {
                for j in 0..=i {
                    let mut e = DMatrix::zeros(5, 5);
                    e[(i, j)] = 1.0;
                    e[(j, i)] = 1.0;
                    let plus = smoothed_lambda_max(&a, &(&y + &e * h), mu).0;
                    let minus = smoothed_lambda_max(&a, &(&y - &e * h), mu).0;
                    let fd = (plus - minus) / (2.0 * h);
                    let analytic = if i == j { grad[(i, i)] } else { 2.0 * grad[(i, j)] };
                    assert!(
                        (fd - analytic).abs() <= 1e-5 * analytic.abs().max(1.0),
                        "seed {seed} ({i},{j}): {fd} vs {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn every_budget_gives_sound_bound() {
        for seed in 0..10 {
            let a = if seed % 2 == 0 { random_sym(9, 1000 + seed) } else { random_psd(9, 1000 + seed) };
            let exact = sparse_eig_exact(&a, 3, None).unwrap().value;
            let mut prev = f64::INFINITY;
            for iters in [0, 1, 2, 3, 5, 10, 20, 50, 100] {
                let cfg = SolverConfig::default().with_max_iterations(iters);
                let s = sdp_k(&a, 3, &cfg).unwrap();
                assert!(s.dual_value >= exact - 1e-10 * (1.0 + exact.abs()));
                assert!(s.dual_value <= prev + 1e-12 * (1.0 + prev.abs()));
                assert!(s.iterations <= iters);
                check_solution(&a, 3, &s);
                prev = s.dual_value;
            }
        }
    }

    #[test]
    fn decide_rule_stops_early() {
        let a = random_psd(8, 77);
        let full = sdp_k(&a, 2, &SolverConfig::default()).unwrap();
        let lmax = lambda_max(&a).0;
        let s = solve(&a, 2, &SolverConfig::default(), None, StopRule::Decide { threshold: 2.0 * lmax })
            .unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.decides(2.0 * lmax), Some(true));
        let below = 0.5 * full.primal_value;
        let s = solve(&a, 2, &SolverConfig::default(), None, StopRule::Decide { threshold: below }).unwrap();
        assert_eq!(s.decides(below), Some(false));
        assert!(s.iterations <= full.iterations);
    }

    #[test]
    fn warm_start_and_errors() {
        let a = random_sym(7, 5);
        let cold = sdp_k(&a, 3, &SolverConfig::default()).unwrap();
        let warm = solve(&a, 3, &SolverConfig::default(), Some(&cold.dual_y), StopRule::Converge).unwrap();
        assert!(warm.dual_value <= cold.dual_value + 1e-12);
        assert!(warm.iterations <= cold.iterations.max(1));
        assert!(sdp_k(&a, 0, &SolverConfig::default()).is_err());
        assert!(sdp_k(&a, 8, &SolverConfig::default()).is_err());
        assert!(sdp_k(&a, 2, &SolverConfig::default().with_epsilon(0.0)).is_err());
        assert!(solve(&a, 2, &SolverConfig::default(), Some(&DMatrix::zeros(2, 2)), StopRule::Converge).is_err());
    }
}
