//! Small self-contained linear algebra: CSR operators, banded LU for the
//! implicit time steps, and dense LU/SVD for the non-local fixed point.

mod banded;
mod dense;
mod sparse;

pub use banded::{BandLu, BandMatrix};
pub use dense::{singular_values, DenseLu, DenseMatrix};
pub use sparse::SparseMatrix;

use crate::scalar::Real;

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

pub fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn norm2<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
