//! Small dense helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

/// Eigenvalues in ascending order with matching eigenvector columns.
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn top_vector(&self) -> DVector<f64> {
        self.vectors.column(self.vectors.ncols() - 1).into_owned()
    }
}

pub fn sym_eigen(m: &DMatrix<f64>) -> SortedEigen {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(m.nrows(), n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SortedEigen { values, vectors }
}

/// Largest eigenvalue only.
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => f64::NEG_INFINITY,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
            let half = 0.5 * (a - d);
            0.5 * (a + d) + half.hypot(b)
        }
        _ => m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Leading eigenpair; the vector sign is fixed so its largest-magnitude entry is positive.
pub fn leading_eigenpair(m: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = sym_eigen(m);
    let mut v = eig.top_vector();
    let pivot = v.iamax();
    if v[pivot] < 0.0 {
        v.neg_mut();
    }
    (eig.max(), v)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn principal_submatrix(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Entrywise l1 norm.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Largest absolute entry (the norm dual to the entrywise l1 norm).
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
}

/// Frobenius inner product.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `max_ij |m_ij - m_ji| <= rel_tol * max(1, max_ij |m_ij|)`.
pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = max_abs(m).max(1.0);
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Serializes a matrix as a list of rows.
pub(crate) fn serialize_rows<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

/// Orthonormal basis of the column span of `m` (left singular vectors with
/// non-negligible singular values).
pub fn column_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = m.shape();
    if c == 0 {
        return DMatrix::zeros(n, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let tol = n.max(c) as f64 * f64::EPSILON * top;
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&j| svd.singular_values[j] > tol).collect();
    select_columns(&u, &keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_spectrum() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, -2.0]));
        let e = sym_eigen(&m);
        assert_eq!(e.values.as_slice(), &[-2.0, 1.0, 3.0]);
        let (v, x) = leading_eigenpair(&m);
        assert_eq!(v, 3.0);
        assert!((x[0] - 1.0).abs() < 1e-14);
        assert_eq!(max_eigenvalue(&m), 3.0);
    }

    #[test]
    fn two_by_two_closed_form() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.5, -1.5, 0.5]);
        let full = sym_eigen(&m).max();
        assert!((max_eigenvalue(&m) - full).abs() < 1e-14);
    }

    #[test]
    fn basis_of_rank_deficient_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 0.0, 0.0, 1.0]);
        let q = column_basis(&m);
        assert_eq!(q.ncols(), 2);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).amax() < 1e-12);
        let resid = &m - &q * (q.transpose() * &m);
        assert!(resid.amax() < 1e-12);
        assert_eq!(column_basis(&DMatrix::zeros(3, 0)).ncols(), 0);
    }
}
