use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Strictly increasing time knots `0 = t_0 < ... < t_K = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeGrid<T> {
    knots: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn uniform(horizon: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::TimeGrid("need at least one step".into()));
        }
        let k = T::from_usize_lossy(steps);
        Self::from_knots((0..=steps).map(|i| horizon * T::from_usize_lossy(i) / k).collect())
    }

    /// Uniform grid refined so that every time in `extra` is a knot.
    pub fn uniform_with(horizon: T, steps: usize, extra: &[T]) -> Result<Self> {
        let mut knots = Self::uniform(horizon, steps)?.knots;
        let tol = Self::tolerance_for(horizon);
        for &t in extra {
            if t < T::zero() || t > horizon {
                return Err(Error::TimeGrid(format!("time {t} outside [0, {horizon}]")));
            }
            if !knots.iter().any(|&k| (k - t).abs() <= tol) {
                knots.push(t);
            }
        }
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Self::from_knots(knots)
    }

    pub fn from_knots(knots: Vec<T>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::TimeGrid("need at least two knots".into()));
        }
        if knots[0] != T::zero() {
            return Err(Error::TimeGrid("first knot must be 0".into()));
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::TimeGrid(format!("knots not strictly increasing at {}", w[1])));
            }
        }
        Ok(Self { knots })
    }

    fn tolerance_for(horizon: T) -> T {
        horizon * T::lit(1e-10)
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn knot(&self, k: usize) -> T {
        self.knots[k]
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> T {
        *self.knots.last().unwrap()
    }

    pub fn dt(&self, k: usize) -> T {
        self.knots[k + 1] - self.knots[k]
    }

    /// Index of the knot equal to `t` (up to a relative 1e-10 tolerance).
    pub fn knot_index(&self, t: T) -> Option<usize> {
        let tol = Self::tolerance_for(self.horizon());
        self.knots.iter().position(|&k| (k - t).abs() <= tol)
    }

    pub fn is_uniform(&self) -> bool {
        self.first_nonuniform_step().is_none()
    }

    pub(crate) fn first_nonuniform_step(&self) -> Option<usize> {
        let dt0 = self.dt(0);
        let tol = dt0 * T::lit(1e-9);
        (1..self.steps()).find(|&k| (self.dt(k) - dt0).abs() > tol)
    }

    /// Grid with every step halved.
    pub fn refined(&self) -> Self {
        let mut knots = Vec::with_capacity(2 * self.knots.len() - 1);
        for w in self.knots.windows(2) {
            knots.push(w[0]);
            knots.push((w[0] + w[1]) / T::lit(2.0));
        }
        knots.push(self.horizon());
        Self { knots }
    }
}
