use crate::error::{Error, Result};
use crate::scalar::Real;

use super::SparseMatrix;

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Row `i` keeps a window of columns `[i - kl, i + ku + kl]`; the extra `kl`
/// columns on the right hold fill-in from partial pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix<T> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![T::zero(); n * width] }
    }

    pub fn from_sparse(m: &SparseMatrix<T>) -> Self {
        assert_eq!(m.rows(), m.cols());
        let (kl, ku) = m.bandwidths();
        let mut b = Self::zeros(m.rows(), kl, ku);
        for r in 0..m.rows() {
            for (c, v) in m.row(r) {
                *b.slot_mut(r, c) += v;
            }
        }
        b
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(&self, row: usize, col: usize) -> usize {
        debug_assert!(col + self.kl >= row && col <= row + self.ku + self.kl);
        row * self.width + (col + self.kl - row)
    }

    #[inline]
    fn slot(&self, row: usize, col: usize) -> T {
        self.data[self.offset(row, col)]
    }

    #[inline]
    fn slot_mut(&mut self, row: usize, col: usize) -> &mut T {
        let o = self.offset(row, col);
        &mut self.data[o]
    }

    /// LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let (n, kl) = (self.n, self.kl);
        let reach = self.ku + self.kl;
        let mut pivots = vec![0usize; n];
        let mut multipliers = vec![T::zero(); n * kl.max(1)];
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.slot(k, k).abs();
            for r in k + 1..=last_row {
                let v = self.slot(r, k).abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == T::zero() || !best.is_finite() {
                return Err(Error::SingularMatrix { column: k });
            }
            pivots[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.offset(k, c), self.offset(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.slot(k, k);
            for r in k + 1..=last_row {
                let l = self.slot(r, k) / pivot;
                multipliers[k * kl + (r - k - 1)] = l;
                *self.slot_mut(r, k) = T::zero();
                if l != T::zero() {
                    for c in k + 1..=last_col {
                        let u = self.slot(k, c);
                        *self.slot_mut(r, c) -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { band: self, pivots, multipliers })
    }
}

/// Factorized band matrix, `P_0 L_0 P_1 L_1 ... U`.
#[derive(Debug, Clone)]
pub struct BandLu<T> {
    band: BandMatrix<T>,
    pivots: Vec<usize>,
    multipliers: Vec<T>,
}

impl<T: Real> BandLu<T> {
    pub fn n(&self) -> usize {
        self.band.n
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let b = &self.band;
        let (n, kl) = (b.n, b.kl);
        assert_eq!(x.len(), n);
        for k in 0..n {
            x.swap(k, self.pivots[k]);
            let xk = x[k];
            if xk != T::zero() {
                for r in k + 1..=(k + kl).min(n - 1) {
                    x[r] -= self.multipliers[k * kl + (r - k - 1)] * xk;
                }
            }
        }
        let reach = b.ku + b.kl;
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..=(i + reach).min(n - 1) {
                s -= b.slot(i, c) * x[c];
            }
            x[i] = s / b.slot(i, i);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoting_solves_a_matrix_with_zero_diagonal() {
        // [[0,1,0],[1,0,1],[0,1,1]]
        let m = SparseMatrix::<f64>::from_triplets(
            3,
            3,
            vec![(0, 1, 1.0), (1, 0, 1.0), (1, 2, 1.0), (2, 1, 1.0), (2, 2, 1.0)],
        );
        let lu = BandMatrix::from_sparse(&m).factor().unwrap();
        let x = lu.solve(&[1.0, 2.0, 3.0]);
        let back = m.matvec(&x);
        for (a, b) in back.iter().zip([1.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = SparseMatrix::<f64>::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 0, 1.0)]);
        assert!(matches!(BandMatrix::from_sparse(&m).factor(), Err(Error::SingularMatrix { .. })));
    }
}
