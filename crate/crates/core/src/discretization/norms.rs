use crate::error::Result;
use crate::linalg::{BandLu, BandMatrix};
use crate::scalar::Real;

use super::{assemble_generator, CoefficientSet, Grid};

/// Discrete `H^{-1}`, `H^0`, `H^1` and `H^2` norms on a grid.
///
/// `H^1` adds forward-difference energy (boundary values are zero), `H^2`
/// adds second differences, and `H^{-1}` is `|(I - Lap_h)^{-1/2} v|`.
#[derive(Debug, Clone)]
pub struct DiscreteNorms<T> {
    grid: Grid<T>,
    resolvent: BandLu<T>,
}

impl<T: Real> DiscreteNorms<T> {
    pub fn new(grid: &Grid<T>) -> Result<Self> {
        let lap = assemble_generator(&CoefficientSet::heat(grid.dim(), T::one()), grid, T::zero())?;
        let resolvent = BandMatrix::from_sparse(&lap.matrix.shifted(T::one(), -T::one())).factor()?;
        Ok(Self { grid: grid.clone(), resolvent })
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn inner(&self, u: &[T], v: &[T]) -> T {
        self.grid.weight() * crate::linalg::dot(u, v)
    }

    pub fn h0_sq(&self, v: &[T]) -> T {
        self.inner(v, v)
    }

    pub fn h0(&self, v: &[T]) -> T {
        self.h0_sq(v).sqrt()
    }

    fn value(&self, v: &[T], ij: [isize; 2]) -> T {
        self.grid.index(ij).map(|k| v[k]).unwrap_or_else(T::zero)
    }

    /// Sum over all forward differences (including boundary edges).
    fn gradient_energy(&self, v: &[T]) -> T {
        let g = &self.grid;
        let mut acc = T::zero();
        for a in 0..g.dim() {
            let h = g.axis(a).h;
            let other = if g.dim() == 2 { g.axis(1 - a).n as isize } else { 1 };
            for j in 0..other {
                for i in -1..g.axis(a).n as isize {
                    let (p, q) = if a == 0 { ([i, j], [i + 1, j]) } else { ([j, i], [j, i + 1]) };
                    let d = (self.value(v, q) - self.value(v, p)) / h;
                    acc += d * d;
                }
            }
        }
        g.weight() * acc
    }

    fn hessian_energy(&self, v: &[T]) -> T {
        let g = &self.grid;
        let mut acc = T::zero();
        for row in 0..g.len() {
            let mi = g.multi_index(row);
            let ij = [mi[0] as isize, mi[1] as isize];
            for a in 0..g.dim() {
                let h = g.axis(a).h;
                let mut p = ij;
                let mut m = ij;
                p[a] += 1;
                m[a] -= 1;
                let d2 = (self.value(v, p) - T::lit(2.0) * v[row] + self.value(v, m)) / (h * h);
                acc += d2 * d2;
            }
        }
        if g.dim() == 2 {
            let (hx, hy) = (g.axis(0).h, g.axis(1).h);
            for i in -1..g.axis(0).n as isize {
                for j in -1..g.axis(1).n as isize {
                    let m = (self.value(v, [i + 1, j + 1]) - self.value(v, [i + 1, j]) - self.value(v, [i, j + 1])
                        + self.value(v, [i, j]))
                        / (hx * hy);
                    acc += T::lit(2.0) * m * m;
                }
            }
        }
        g.weight() * acc
    }

    pub fn h1_sq(&self, v: &[T]) -> T {
        self.h0_sq(v) + self.gradient_energy(v)
    }

    pub fn h1(&self, v: &[T]) -> T {
        self.h1_sq(v).sqrt()
    }

    pub fn h2_sq(&self, v: &[T]) -> T {
        self.h1_sq(v) + self.hessian_energy(v)
    }

    pub fn h2(&self, v: &[T]) -> T {
        self.h2_sq(v).sqrt()
    }

    pub fn h_minus1_sq(&self, v: &[T]) -> T {
        let z = self.resolvent.solve(v);
        self.inner(v, &z)
    }

    pub fn h_minus1(&self, v: &[T]) -> T {
        self.h_minus1_sq(v).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sine_mode_norms_match_eigenvalues() {
        let g = Grid::<f64>::interval(0.0, PI, 31).unwrap();
        let norms = DiscreteNorms::new(&g).unwrap();
        let h = g.axis(0).h;
        let v = g.sample(|p| p[0].sin());
        let mu = 4.0 / (h * h) * (h / 2.0).sin().powi(2);
        let l2 = norms.h0_sq(&v);
        // discrete summation-by-parts: gradient energy = mu * |v|^2
        assert!((norms.h1_sq(&v) - (1.0 + mu) * l2).abs() < 1e-12);
        assert!((norms.h_minus1_sq(&v) - l2 / (1.0 + mu)).abs() < 1e-12);
        assert!(norms.h2_sq(&v) > norms.h1_sq(&v));
    }

    #[test]
    fn norms_of_zero() {
        let g = Grid::<f64>::new(&[(0.0, 1.0, 3), (0.0, 1.0, 4)]).unwrap();
        let n = DiscreteNorms::new(&g).unwrap();
        let z = vec![0.0; g.len()];
        assert_eq!(n.h2(&z), 0.0);
        assert_eq!(n.h_minus1(&z), 0.0);
    }
}
