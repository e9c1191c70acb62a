//! k-sparse maximum eigenvalues: `max x'Ax` over unit `x` with at most `k` nonzeros,
//! which equals the largest leading eigenvalue among the `k x k` principal submatrices.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::combinatorics::{binomial, Combinations};
use crate::error::{Error, Result};
use crate::linalg::{self, leading_eigenpair, max_eigenvalue, principal_submatrix};
use crate::subset_eval::SupportSet;

/// Default number of principal submatrices the exact oracle may enumerate.
pub const DEFAULT_ENUMERATION_CAP: u128 = 2_000_000;

/// Dense symmetric matrix; symmetric to `1e-12` relative on construction and then
/// exactly symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Validation(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("matrix has non-finite entries".into()));
        }
        if !linalg::is_symmetric(&m, 1e-12) {
            return Err(Error::Validation("matrix is not symmetric".into()));
        }
        Ok(Self::symmetrized(m))
    }

    /// Averages `m` with its transpose without checking.
    pub fn symmetrized(mut m: DMatrix<f64>) -> Self {
        linalg::symmetrize(&mut m);
        Self(m)
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn principal(&self, idx: &[usize]) -> SymMatrix {
        SymMatrix(principal_submatrix(&self.0, idx))
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseEigResult {
    pub value: f64,
    pub support: SupportSet,
    /// Unit vector supported on `support`, embedded in `R^p`.
    pub vector: DVector<f64>,
}

impl SparseEigResult {
    fn on_support(a: &SymMatrix, support: Vec<usize>) -> Self {
        let (value, local) = leading_eigenpair(&principal_submatrix(a, &support));
        let mut vector = DVector::zeros(a.dim());
        for (&i, v) in support.iter().zip(local.iter()) {
            vector[i] = *v;
        }
        Self {
            value,
            support: SupportSet::new_unchecked(support),
            vector,
        }
    }
}

/// Largest eigenvalue and a unit eigenvector.
pub fn lambda_max(a: &SymMatrix) -> (f64, DVector<f64>) {
    leading_eigenpair(a)
}

fn check_k(a: &SymMatrix, k: usize) -> Result<()> {
    if k == 0 || k > a.dim() {
        return Err(Error::Parameter(format!(
            "sparsity k = {k} must satisfy 1 <= k <= p = {}",
            a.dim()
        )));
    }
    Ok(())
}

fn check_cap(p: usize, k: usize, cap: u128) -> Result<()> {
    let count = binomial(p, k);
    if count > cap {
        return Err(Error::Capacity(format!(
            "C({p},{k}) = {count} principal submatrices exceed the enumeration cap {cap}; \
             use the semidefinite relaxation bound instead"
        )));
    }
    Ok(())
}

/// Exhaustive `lambda^k_max(a)` over all `C(p,k)` principal submatrices.
///
/// Ties resolve to the lexicographically smallest support, independent of how the
/// enumeration is split across threads.
pub fn sparse_eig_exact(a: &SymMatrix, k: usize, cap: Option<u128>) -> Result<SparseEigResult> {
    check_k(a, k)?;
    let p = a.dim();
    check_cap(p, k, cap.unwrap_or(DEFAULT_ENUMERATION_CAP))?;
    let best = (0..=p - k)
        .into_par_iter()
        .map(|first| {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for support in Combinations::starting_with(p, k, first) {
                let v = max_eigenvalue(&principal_submatrix(a, &support));
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, support));
                }
            }
            best
        })
        .reduce(|| None, |x, y| match (x, y) {
            (None, b) | (b, None) => b,
            (Some(a), Some(b)) => {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
        })
        .expect("at least one support when 1 <= k <= p");
    Ok(SparseEigResult::on_support(a, best.1))
}

/// Whether some `k x k` principal submatrix has leading eigenvalue above `threshold`;
/// stops at the first witness.
pub fn sparse_eig_exceeds(a: &SymMatrix, k: usize, threshold: f64, cap: Option<u128>) -> Result<bool> {
    check_k(a, k)?;
    let p = a.dim();
    check_cap(p, k, cap.unwrap_or(DEFAULT_ENUMERATION_CAP))?;
    if k == 1 {
        return Ok((0..p).any(|i| a[(i, i)] > threshold));
    }
    let mut combos = Combinations::new(p, k);
    Ok(combos.any(|s| max_eigenvalue(&principal_submatrix(a, &s)) > threshold))
}

/// Backward greedy restricted to `start`: repeatedly drops the index whose removal
/// keeps the largest leading eigenvalue until `k` remain. On ties the largest index is
/// dropped, so smaller indices are kept.
pub fn backward_greedy_eig_from(a: &SymMatrix, start: &SupportSet, k: usize) -> SparseEigResult {
    let mut current: Vec<usize> = start.indices().to_vec();
    while current.len() > k.max(1) {
        let mut best: Option<(f64, usize)> = None;
        for pos in 0..current.len() {
            let mut rest = current.clone();
            rest.remove(pos);
            let v = max_eigenvalue(&principal_submatrix(a, &rest));
            if best.is_none_or(|(b, _)| v >= b) {
                best = Some((v, pos));
            }
        }
        current.remove(best.expect("non-empty support").1);
    }
    SparseEigResult::on_support(a, current)
}

/// Backward greedy from the full index set.
pub fn backward_greedy_eig(a: &SymMatrix, k: usize) -> Result<SparseEigResult> {
    check_k(a, k)?;
    Ok(backward_greedy_eig_from(a, &SupportSet::full(a.dim()), k))
}
