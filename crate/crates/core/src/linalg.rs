//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative eigenvalue floor applied when taking symmetric square roots.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    (m - m.transpose()).iter().all(|v| v.abs() <= rel_tol * scale)
}

/// Eigenvalues (ascending) and eigenvectors of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(m).0[0]
}

fn spectral_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let mapped = DMatrix::from_diagonal(&vals.map(f));
    symmetrize(&(&vecs * mapped * vecs.transpose()))
}

fn floor_of(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    let largest = vals.iter().cloned().fold(0.0f64, f64::max);
    EIGEN_FLOOR * largest
}

/// Principal square root of a symmetric PSD matrix, eigenvalues floored at
/// `EIGEN_FLOOR` times the largest one.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let floor = floor_of(m);
    spectral_map(m, |l| l.max(floor).sqrt())
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let floor = floor_of(m).max(f64::MIN_POSITIVE);
    spectral_map(m, |l| 1.0 / l.max(floor).sqrt())
}

/// Factor `L` with `L Lᵀ = m` for a symmetric PSD `m`; tiny negative
/// eigenvalues are treated as zero.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let roots = DMatrix::from_diagonal(&vals.map(|l| l.max(0.0).sqrt()));
    vecs * roots
}

/// Projects a symmetric matrix onto the PSD cone by clipping eigenvalues.
pub fn clip_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(m, |l| l.max(0.0))
}

pub fn outer(a: &DVector<f64>, b: &DVector<f64>) -> DMatrix<f64> {
    a * b.transpose()
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
