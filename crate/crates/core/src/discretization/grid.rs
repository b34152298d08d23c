use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Spatial point; the second coordinate is ignored in 1-D.
pub type Point<T> = [T; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Axis<T> {
    pub lo: T,
    pub hi: T,
    /// Interior node count.
    pub n: usize,
    pub h: T,
}

impl<T: Real> Axis<T> {
    /// Coordinate of node `i`, where `-1` and `n` are the boundary nodes.
    pub fn coord(&self, i: isize) -> T {
        self.lo + self.h * T::from_isize(i + 1).expect("index fits")
    }
}

/// Uniform tensor grid over an interval or rectangle with homogeneous
/// Dirichlet data; only interior nodes are unknowns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid<T> {
    axes: Vec<Axis<T>>,
}

impl<T: Real> Grid<T> {
    /// Builds a grid from `(lo, hi, interior nodes)` per axis; every axis
    /// needs `lo < hi` and at least 3 interior nodes.
    pub fn new(axes: &[(T, T, usize)]) -> Result<Self> {
        Self::build(axes, 3)
    }

    /// Like [`Grid::new`] but accepts down to one interior node per axis;
    /// handy for scalar hand-checks of the schemes.
    pub fn coarse(axes: &[(T, T, usize)]) -> Result<Self> {
        Self::build(axes, 1)
    }

    pub fn interval(lo: T, hi: T, n: usize) -> Result<Self> {
        Self::new(&[(lo, hi, n)])
    }

    fn build(axes: &[(T, T, usize)], min_nodes: usize) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Dimension(axes.len()));
        }
        let mut out = Vec::with_capacity(axes.len());
        for (axis, &(lo, hi, n)) in axes.iter().enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::DegenerateInterval { axis, lo: lo.as_f64(), hi: hi.as_f64() });
            }
            if n < min_nodes {
                return Err(Error::TooFewNodes { axis, n });
            }
            let h = (hi - lo) / T::from_usize_lossy(n + 1);
            out.push(Axis { lo, hi, n, h });
        }
        Ok(Self { axes: out })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis<T>] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis<T> {
        &self.axes[a]
    }

    /// Number of unknowns `M`.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight of one node (product of spacings).
    pub fn weight(&self) -> T {
        self.axes.iter().fold(T::one(), |w, a| w * a.h)
    }

    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let n0 = self.axes[0].n;
        [idx % n0, idx / n0]
    }

    /// Linear index of an interior node given signed axis indices; `None`
    /// for boundary or exterior positions.
    pub fn index(&self, ij: [isize; 2]) -> Option<usize> {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for (a, axis) in self.axes.iter().enumerate() {
            let i = ij[a];
            if i < 0 || i as usize >= axis.n {
                return None;
            }
            idx += i as usize * stride;
            stride *= axis.n;
        }
        if self.dim() == 1 && ij[1] != 0 {
            return None;
        }
        Some(idx)
    }

    pub fn point_at(&self, ij: [isize; 2]) -> Point<T> {
        let mut p = [T::zero(); 2];
        for (a, axis) in self.axes.iter().enumerate() {
            p[a] = axis.coord(ij[a]);
        }
        p
    }

    pub fn coords(&self, idx: usize) -> Point<T> {
        let mi = self.multi_index(idx);
        self.point_at([mi[0] as isize, mi[1] as isize])
    }

    pub fn points(&self) -> Vec<Point<T>> {
        (0..self.len()).map(|i| self.coords(i)).collect()
    }

    pub fn contains(&self, p: &Point<T>) -> bool {
        self.axes.iter().enumerate().all(|(a, ax)| p[a] > ax.lo && p[a] < ax.hi)
    }

    /// Samples `f` at every interior node.
    pub fn sample(&self, mut f: impl FnMut(&Point<T>) -> T) -> Vec<T> {
        (0..self.len()).map(|i| f(&self.coords(i))).collect()
    }

    /// Piecewise (bi)linear interpolation of nodal values; zero on and
    /// outside the boundary.
    pub fn interpolate(&self, values: &[T], p: &Point<T>) -> T {
        if !self.contains(p) {
            return T::zero();
        }
        let mut base = [0isize; 2];
        let mut frac = [T::zero(); 2];
        for (a, ax) in self.axes.iter().enumerate() {
            let s = (p[a] - ax.lo) / ax.h - T::one();
            let f = s.floor();
            base[a] = f.to_isize().unwrap_or(-1);
            frac[a] = s - f;
        }
        let at = |i: isize, j: isize| -> T {
            self.index([i, j]).map(|k| values[k]).unwrap_or_else(T::zero)
        };
        if self.dim() == 1 {
            let (i, t) = (base[0], frac[0]);
            at(i, 0) * (T::one() - t) + at(i + 1, 0) * t
        } else {
            let (i, j, s, t) = (base[0], base[1], frac[0], frac[1]);
            let one = T::one();
            at(i, j) * (one - s) * (one - t)
                + at(i + 1, j) * s * (one - t)
                + at(i, j + 1) * (one - s) * t
                + at(i + 1, j + 1) * s * t
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rejects_too_few_nodes() {
        assert!(matches!(Grid::<f64>::interval(0.0, PI, 1), Err(Error::TooFewNodes { axis: 0, n: 1 })));
    }

    #[test]
    fn rejects_degenerate_interval() {
        assert!(matches!(Grid::interval(1.0, 1.0, 5), Err(Error::DegenerateInterval { .. })));
    }

    #[test]
    fn three_nodes_on_zero_pi() {
        let g = Grid::<f64>::interval(0.0, PI, 3).unwrap();
        assert_eq!(g.len(), 3);
        assert!((g.axis(0).h - PI / 4.0).abs() < 1e-15);
        let xs: Vec<f64> = g.points().iter().map(|p| p[0]).collect();
        for (x, e) in xs.iter().zip([PI / 4.0, PI / 2.0, 3.0 * PI / 4.0]) {
            assert!((x - e).abs() < 1e-15);
        }
    }

    #[test]
    fn rectangle_spacing_and_size() {
        let g = Grid::<f64>::new(&[(0.0, 1.0, 4), (0.0, 2.0, 9)]).unwrap();
        assert_eq!(g.len(), 36);
        assert!((g.axis(0).h - 0.2).abs() < 1e-15);
        assert!((g.axis(1).h - 0.2).abs() < 1e-15);
        assert_eq!(g.index([3, 8]), Some(35));
        assert_eq!(g.index([4, 0]), None);
    }

    #[test]
    fn interpolation_is_exact_for_nodal_values_and_zero_outside() {
        let g = Grid::<f64>::interval(0.0, 1.0, 4).unwrap();
        let v = g.sample(|p| p[0] * (1.0 - p[0]));
        for i in 0..4 {
            assert!((g.interpolate(&v, &g.coords(i)) - v[i]).abs() < 1e-15);
        }
        assert_eq!(g.interpolate(&v, &[1.5, 0.0]), 0.0);
        // halfway between boundary (0) and the first node
        assert!((g.interpolate(&v, &[0.1, 0.0]) - 0.5 * v[0]).abs() < 1e-15);
    }
}
