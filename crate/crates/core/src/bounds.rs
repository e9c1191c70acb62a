//! Certified lower bounds on `psi(k)`.
//!
//! With `b = X'y` and `G = X'X`, for every `rho`
//!
//! ```text
//! psi(k) >= y'y - rho   <=>   lambda_max^k(b b' - rho G) <= 0
//! ```
//!
//! The left side of the predicate can only decrease as `rho` grows, so the smallest
//! certified `rho` is found by bisection on `[0, y'y]`. The sparse maximum eigenvalue is
//! either enumerated exactly or replaced by the dual value of its semidefinite
//! relaxation, which is an upper bound and therefore keeps every answer sound.
//!
//! Nodes of the branch-and-bound tree fix some indices in or out of the support. Fixed-in
//! columns are projected out of `y` and of the remaining columns, which gives a problem
//! of the same form over the free indices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::{column_basis, max_eigenvalue, select_columns, serialize_rows, symmetrize};
use crate::sdp::{self, SolverConfig, StopRule};
use crate::sparse_eig::{sparse_eig_exceeds, SymMatrix, DEFAULT_ENUMERATION_CAP};
use crate::subset_eval::{least_squares, SupportSet};

/// `M(rho) = G1 - rho G2` with `G1 = X'y y'X` and `G2 = X'X`.
#[derive(Debug, Clone)]
pub struct MatrixAssembly {
    b: DVector<f64>,
    g1: DMatrix<f64>,
    g2: DMatrix<f64>,
    y_norm_sq: f64,
}

impl MatrixAssembly {
    pub fn new(inst: &Instance) -> Self {
        Self::from_parts(inst.x(), inst.y())
    }

    pub fn from_parts(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let b = x.tr_mul(y);
        let g1 = &b * b.transpose();
        let mut g2 = x.tr_mul(x);
        symmetrize(&mut g2);
        Self { b, g1, g2, y_norm_sq: y.norm_squared() }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn g1(&self) -> &DMatrix<f64> {
        &self.g1
    }

    pub fn g2(&self) -> &DMatrix<f64> {
        &self.g2
    }

    pub fn y_norm_sq(&self) -> f64 {
        self.y_norm_sq
    }

    pub fn m(&self, rho: f64) -> SymMatrix {
        SymMatrix::symmetrized(&self.g1 - &self.g2 * rho)
    }

    /// Exact `psi(1) = y'y - max_i b_i^2 / G_ii` reformulated as the smallest
    /// `rho` with `max_i (b_i^2 - rho G_ii) <= 0`.
    fn diagonal_root(&self) -> f64 {
        (0..self.dim())
            .filter(|&i| self.g2[(i, i)] > 0.0)
            .map(|i| self.b[i] * self.b[i] / self.g2[(i, i)])
            .fold(0.0, f64::max)
            .min(self.y_norm_sq)
    }
}

/// `X'y y'X - rho X'X`.
pub fn assemble_m(inst: &Instance, rho: f64) -> Result<SymMatrix> {
    if !rho.is_finite() {
        return Err(Error::Parameter(format!("rho must be finite, got {rho}")));
    }
    Ok(MatrixAssembly::new(inst).m(rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundEngine {
    /// Enumerate all k-subsets (small p only).
    Exact,
    /// Dual of the semidefinite relaxation.
    Sdp,
}

impl std::str::FromStr for BoundEngine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "sdp" => Ok(Self::Sdp),
            other => Err(Error::Parameter(format!("unknown bound engine '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundConfig {
    pub engine: BoundEngine,
    /// Absolute bisection tolerance on `rho`; `None` means `1e-6 * y'y`.
    pub tol_rho: Option<f64>,
    pub max_steps: usize,
    pub exact_cap: u128,
    /// Solver settings for the sdp engine. Its `epsilon` is overridden per problem
    /// so that a gap of `epsilon` is worth about `tol_rho` in `rho`.
    pub solver: SolverConfig,
}

impl BoundConfig {
    pub fn new(engine: BoundEngine) -> Self {
        Self {
            engine,
            tol_rho: None,
            max_steps: 40,
            exact_cap: DEFAULT_ENUMERATION_CAP,
            solver: SolverConfig::default(),
        }
    }

    pub fn with_tol_rho(mut self, tol: f64) -> Self {
        self.tol_rho = Some(tol);
        self
    }

    fn tolerance(&self, y_norm_sq: f64) -> Result<f64> {
        match self.tol_rho {
            Some(t) if !(t > 0.0 && t.is_finite()) => {
                Err(Error::Parameter(format!("tol_rho must be positive and finite, got {t}")))
            }
            Some(t) => Ok(t),
            None => Ok((1e-6 * y_norm_sq).max(f64::MIN_POSITIVE)),
        }
    }
}

/// What certifies a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    /// `rho = y'y` needs no evaluation since `psi >= 0`.
    Trivial,
    /// `lambda_max^k(M(rho_star)) <= 0` verified by enumeration.
    ExactOracle,
    /// With one free index the relaxation is exact: `max_i b_i^2 / G_ii`.
    Diagonal,
    /// A dual matrix `Y` (indexed by `columns`) with
    /// `lambda_max(M(rho_star) + Y) + k max|Y| <= 0`.
    SdpDual {
        columns: Vec<usize>,
        #[serde(serialize_with = "serialize_rows")]
        y: DMatrix<f64>,
        dual_value: f64,
    },
    /// The support is fully determined; the bound is its objective.
    Leaf { support: SupportSet },
    /// No support of size at most `k` is consistent with the node.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundResult {
    pub psi_lower: f64,
    pub rho_star: f64,
    pub certificate: Certificate,
    pub bisection_steps: usize,
}

/// Bisection bound on `psi(k)` for the whole instance.
pub fn lower_bound(inst: &Instance, k: usize, engine: BoundEngine, tol_rho: Option<f64>) -> Result<LowerBoundResult> {
    let mut cfg = BoundConfig::new(engine);
    cfg.tol_rho = tol_rho;
    lower_bound_with(inst, k, &cfg)
}

pub fn lower_bound_with(inst: &Instance, k: usize, cfg: &BoundConfig) -> Result<LowerBoundResult> {
    node_lower_bound(inst, k, &SupportSet::empty(), &SupportSet::empty(), cfg)
}

/// Bound valid for every support `S` with `forced_in ⊆ S`, `S ∩ forced_out = ∅`, `|S| <= k`.
pub fn node_lower_bound(
    inst: &Instance,
    k: usize,
    forced_in: &SupportSet,
    forced_out: &SupportSet,
    cfg: &BoundConfig,
) -> Result<LowerBoundResult> {
    inst.check_k(k)?;
    match NodeProblem::new(inst, k, forced_in, forced_out)? {
        NodeProblem::Infeasible => Ok(LowerBoundResult {
            psi_lower: f64::INFINITY,
            rho_star: f64::NEG_INFINITY,
            certificate: Certificate::Infeasible,
            bisection_steps: 0,
        }),
        NodeProblem::Determined { support, objective } => Ok(LowerBoundResult {
            psi_lower: objective,
            rho_star: inst.y_norm_sq() - objective,
            certificate: Certificate::Leaf { support },
            bisection_steps: 0,
        }),
        NodeProblem::Open(reduced) => {
            let mut r = reduced.bisect(cfg)?;
            // rho is measured against the projected response
            r.rho_star += inst.y_norm_sq() - reduced.assembly.y_norm_sq();
            Ok(r)
        }
    }
}

/// A node after eliminating forced indices.
#[derive(Debug, Clone)]
pub(crate) enum NodeProblem {
    Infeasible,
    Determined { support: SupportSet, objective: f64 },
    Open(ReducedProblem),
}

/// Problem over the free indices, with `y` and the free columns projected onto the
/// orthogonal complement of the forced-in columns.
#[derive(Debug, Clone)]
pub(crate) struct ReducedProblem {
    pub assembly: MatrixAssembly,
    /// Original indices of the free columns.
    pub columns: Vec<usize>,
    /// Remaining cardinality, at most `columns.len()`.
    pub k: usize,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl NodeProblem {
    pub(crate) fn new(inst: &Instance, k: usize, forced_in: &SupportSet, forced_out: &SupportSet) -> Result<Self> {
        let p = inst.p();
        for s in [forced_in, forced_out] {
            if s.indices().last().is_some_and(|&i| i >= p) {
                return Err(Error::Validation(format!("forced index out of range for p = {p}")));
            }
        }
        if !forced_in.is_disjoint(forced_out) {
            return Err(Error::Validation(format!(
                "forced_in {forced_in} and forced_out {forced_out} overlap"
            )));
        }
        if forced_in.len() > k {
            return Ok(Self::Infeasible);
        }
        let columns: Vec<usize> = (0..p).filter(|&i| !forced_in.contains(i) && !forced_out.contains(i)).collect();
        let k_left = k - forced_in.len();
        if k_left == 0 || columns.is_empty() {
            let fit = crate::subset_eval::evaluate_unchecked(inst, forced_in);
            return Ok(Self::Determined { support: forced_in.clone(), objective: fit.objective });
        }

        let (x, y) = if forced_in.is_empty() {
            (select_columns(inst.x(), &columns), inst.y().clone())
        } else {
            let q = column_basis(&select_columns(inst.x(), forced_in.indices()));
            let xr = select_columns(inst.x(), &columns);
            let x = &xr - &q * q.tr_mul(&xr);
            let y = inst.y() - &q * q.tr_mul(inst.y());
            (x, y)
        };
        let k = k_left.min(columns.len());
        let assembly = MatrixAssembly::from_parts(&x, &y);
        Ok(Self::Open(ReducedProblem { assembly, columns, k, x, y }))
    }
}

/// Outcome of testing one `rho`.
enum Decision {
    Feasible(Certificate),
    NotCertified(Option<DMatrix<f64>>),
}

impl ReducedProblem {
    /// Objective with every free column allowed: a bound that needs no eigenvalue
    /// machinery (`Y = 0` in the dual).
    pub fn full_residual(&self) -> f64 {
        let w = least_squares(&self.x, &self.y);
        (&self.y - &self.x * w).norm_squared()
    }

    fn solver_config(&self, cfg: &BoundConfig, tol: f64) -> SolverConfig {
        // dB/drho is -Tr(Z G2); an average diagonal entry gives a typical slope
        let p = self.assembly.dim() as f64;
        let slope = (self.assembly.g2.trace() / p).max(f64::MIN_POSITIVE);
        let mut solver = cfg.solver.clone();
        solver.epsilon = (0.5 * tol * slope).max(1e-12 * (1.0 + self.assembly.y_norm_sq() * slope));
        solver
    }

    fn decide(&self, rho: f64, cfg: &BoundConfig, solver: &SolverConfig, warm: Option<&DMatrix<f64>>) -> Result<Decision> {
        let m = self.assembly.m(rho);
        match cfg.engine {
            BoundEngine::Exact => {
                if sparse_eig_exceeds(&m, self.k, 0.0, Some(cfg.exact_cap))? {
                    Ok(Decision::NotCertified(None))
                } else {
                    Ok(Decision::Feasible(Certificate::ExactOracle))
                }
            }
            BoundEngine::Sdp => {
                let sol = sdp::solve(&m, self.k, solver, warm, StopRule::Decide { threshold: 0.0 })?;
                if sol.dual_value <= 0.0 {
                    Ok(Decision::Feasible(Certificate::SdpDual {
                        columns: self.columns.clone(),
                        y: sol.dual_y,
                        dual_value: sol.dual_value,
                    }))
                } else {
                    Ok(Decision::NotCertified(Some(sol.dual_y)))
                }
            }
        }
    }

    pub fn bisect(&self, cfg: &BoundConfig) -> Result<LowerBoundResult> {
        let total = self.assembly.y_norm_sq();
        let tol = cfg.tolerance(total)?;
        if self.k == 1 {
            let rho = self.assembly.diagonal_root();
            return Ok(LowerBoundResult {
                psi_lower: (total - rho).max(0.0),
                rho_star: rho,
                certificate: Certificate::Diagonal,
                bisection_steps: 0,
            });
        }
        let solver = self.solver_config(cfg, tol);
        let (mut lo, mut hi) = (0.0f64, total);
        let mut certificate = Certificate::Trivial;
        let mut warm: Option<DMatrix<f64>> = None;
        let mut steps = 0;
        // rho = 0 is certified only when X'y = 0, in which case psi = y'y
        if self.assembly.b.amax() == 0.0 {
            hi = 0.0;
        }
        while hi - lo > tol && steps < cfg.max_steps {
            steps += 1;
            let mid = 0.5 * (lo + hi);
            match self.decide(mid, cfg, &solver, warm.as_ref())? {
                Decision::Feasible(cert) => {
                    if let Certificate::SdpDual { y, .. } = &cert {
                        warm = Some(y.clone());
                    }
                    certificate = cert;
                    hi = mid;
                }
                Decision::NotCertified(y) => {
                    if y.is_some() {
                        warm = y;
                    }
                    lo = mid;
                }
            }
        }
        Ok(LowerBoundResult {
            psi_lower: total - hi,
            rho_star: hi,
            certificate,
            bisection_steps: steps,
        })
    }

    /// Tries to certify `psi_node >= target` with a single test at
    /// `rho = y'y - target`. On success returns the certified bound, which is at least
    /// `target`: the dual matrix found is reused to locate the smallest `rho` it
    /// certifies.
    pub fn certify_at_least(&self, target: f64, cfg: &BoundConfig) -> Result<Option<f64>> {
        let total = self.assembly.y_norm_sq();
        if target <= 0.0 {
            return Ok(Some(0.0));
        }
        if target > total {
            return Ok(None);
        }
        if self.k == 1 {
            let bound = total - self.assembly.diagonal_root();
            return Ok((bound >= target).then_some(bound));
        }
        let rho = total - target;
        let tol = cfg.tolerance(total)?;
        let solver = self.solver_config(cfg, tol);
        match self.decide(rho, cfg, &solver, None)? {
            Decision::NotCertified(_) => Ok(None),
            Decision::Feasible(Certificate::SdpDual { y, .. }) => {
                // the dual value at fixed Y is non-increasing in rho
                let k = self.k as f64 * crate::linalg::max_abs(&y);
                let g = |r: f64| max_eigenvalue(&(&self.assembly.g1 - &self.assembly.g2 * r + &y)) + k;
                let (mut lo, mut hi) = (0.0f64, rho);
                for _ in 0..30 {
                    if hi - lo <= tol {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    if g(mid) <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Ok(Some(total - hi))
            }
            Decision::Feasible(_) => Ok(Some(target)),
        }
    }
}
