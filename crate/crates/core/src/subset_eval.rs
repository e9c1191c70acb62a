//! The least-squares objective restricted to a support, `mu(I) = min_{w_{I^c}=0} ||y - Xw||^2`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::linalg::select_columns;

/// Strictly increasing column indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SupportSet(Vec<usize>);

impl SupportSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Validates ordering, uniqueness and `index < p`.
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        if let Some(w) = indices.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "support indices must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= p) {
            return Err(Error::Validation(format!("support index {bad} out of range for p = {p}")));
        }
        Ok(Self(indices))
    }

    /// Sorts and deduplicates before validating the range.
    pub fn from_unsorted(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, p)
    }

    pub(crate) fn new_unchecked(indices: Vec<usize>) -> Self {
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        Self(indices)
    }

    pub fn full(p: usize) -> Self {
        Self((0..p).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn with(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        if let Err(pos) = v.binary_search(&i) {
            v.insert(pos, i);
        }
        Self(v)
    }

    pub fn without(&self, i: usize) -> Self {
        Self(self.0.iter().copied().filter(|&j| j != i).collect())
    }

    pub fn is_disjoint(&self, other: &SupportSet) -> bool {
        self.0.iter().all(|&i| !other.contains(i))
    }

    pub fn is_subset(&self, other: &SupportSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for SupportSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Residual sum of squares.
    pub objective: f64,
    /// Coefficients aligned with `support` (zero elsewhere).
    pub coefficients: Vec<f64>,
    pub support: SupportSet,
}

impl FitResult {
    pub fn dense_coefficients(&self, p: usize) -> DVector<f64> {
        let mut w = DVector::zeros(p);
        for (&j, &c) in self.support.indices().iter().zip(&self.coefficients) {
            w[j] = c;
        }
        w
    }
}

fn check_support(inst: &Instance, support: &SupportSet) -> Result<()> {
    match support.indices().last() {
        Some(&last) if last >= inst.p() => Err(Error::Validation(format!(
            "support index {last} out of range for p = {}",
            inst.p()
        ))),
        _ => Ok(()),
    }
}

/// Least-squares coefficients of `y` on the columns of `xs`; minimum-norm when `xs`
/// is numerically rank deficient.
pub(crate) fn least_squares(xs: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let (n, m) = xs.shape();
    let max_col = (0..m).map(|j| xs.column(j).norm()).fold(0.0, f64::max);
    let tol = n.max(m) as f64 * f64::EPSILON * max_col;
    if n >= m {
        let qr = xs.clone().qr();
        let r = qr.r();
        if (0..m).all(|j| r[(j, j)].abs() > tol) {
            let mut qty = y.clone();
            qr.q_tr_mul(&mut qty);
            let rhs = qty.rows(0, m).into_owned();
            if let Some(w) = r.solve_upper_triangular(&rhs) {
                return w;
            }
        }
    }
    let svd = xs.clone().svd(true, true);
    svd.solve(y, tol).unwrap_or_else(|_| DVector::zeros(m))
}

/// `mu(support)` together with the minimizing coefficients.
pub fn evaluate(inst: &Instance, support: &SupportSet) -> Result<FitResult> {
    check_support(inst, support)?;
    Ok(evaluate_unchecked(inst, support))
}

pub(crate) fn evaluate_unchecked(inst: &Instance, support: &SupportSet) -> FitResult {
    if support.is_empty() {
        return FitResult {
            objective: inst.y_norm_sq(),
            coefficients: vec![],
            support: support.clone(),
        };
    }
    let xs = select_columns(inst.x(), support.indices());
    let w = least_squares(&xs, inst.y());
    let residual = inst.y() - &xs * &w;
    FitResult {
        objective: residual.norm_squared(),
        coefficients: w.as_slice().to_vec(),
        support: support.clone(),
    }
}

/// Elementwise [`evaluate`]; an invalid support reports its position in the batch.
pub fn evaluate_batch(inst: &Instance, supports: &[SupportSet]) -> Result<Vec<FitResult>> {
    for (pos, s) in supports.iter().enumerate() {
        check_support(inst, s).map_err(|e| Error::Validation(format!("support #{pos}: {e}")))?;
    }
    Ok(supports.iter().map(|s| evaluate_unchecked(inst, s)).collect())
}
