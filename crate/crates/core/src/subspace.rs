//! Task-adaptive non-linear subspace.
//!
//! The kernel is built over features rather than samples: `K = tanh(XᵀX)`
//! (m×m, no centering). Its top-p singular vectors form the projection.
//! Because `K` is symmetric, its singular vectors are its eigenvectors and its
//! singular values are the absolute eigenvalues, so the decomposition is a
//! symmetric eigensolve, carried out in `f64`.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceProjection<T: Scalar> {
    /// m×p, orthonormal columns.
    pub basis: Array2<T>,
    /// Singular values of the kernel matching the basis columns, descending.
    pub singular_values: Vec<T>,
}

impl<T: Scalar> SubspaceProjection<T> {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }
}

/// `tanh(XᵀX)`, m×m and exactly symmetric.
pub fn tanh_kernel<T: Scalar>(features: ArrayView2<'_, T>) -> Array2<T> {
    let gram = features.t().dot(&features);
    let m = gram.nrows();
    let mut k = Array2::zeros((m, m));
    for i in 0..m {
        for j in i..m {
            let v = gram[[i, j]].tanh();
            k[[i, j]] = v;
            k[[j, i]] = v;
        }
    }
    k
}

pub fn build_subspace<T: Scalar>(
    features: ArrayView2<'_, T>,
    p: usize,
) -> Result<SubspaceProjection<T>> {
    let m = features.ncols();
    if p == 0 || p > m {
        return Err(Error::InvalidConfig(format!(
            "subspace dimension {p} must lie in 1..={m}"
        )));
    }
    for (row, r) in features.rows().into_iter().enumerate() {
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteValue { row });
        }
    }
    let kernel = tanh_kernel(features);
    let dense = DMatrix::from_fn(m, m, |i, j| kernel[[i, j]].as_f64());
    let eig = SymmetricEigen::new(dense);

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .abs()
            .partial_cmp(&eig.eigenvalues[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut basis = Array2::zeros((m, p));
    let mut singular_values = Vec::with_capacity(p);
    for (col, &idx) in order.iter().take(p).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // sign convention: largest-magnitude component positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..m {
            basis[[r, col]] = T::of(sign * v[r]);
        }
        singular_values.push(T::of(eig.eigenvalues[idx].abs()));
    }
    Ok(SubspaceProjection {
        basis,
        singular_values,
    })
}

/// `X · P`.
pub fn project<T: Scalar>(
    features: ArrayView2<'_, T>,
    proj: &SubspaceProjection<T>,
) -> Result<Array2<T>> {
    if features.ncols() != proj.basis.nrows() {
        return Err(Error::ShapeMismatch {
            left: features.dim(),
            right: proj.basis.dim(),
        });
    }
    Ok(features.dot(&proj.basis))
}

/// Column norms of the basis; handy when checking orthonormality.
pub fn column_norms<T: Scalar>(proj: &SubspaceProjection<T>) -> Array1<T> {
    proj.basis
        .columns()
        .into_iter()
        .map(|c| c.dot(&c).sqrt())
        .collect()
}
