//! Meshes, coefficient fields, discrete norms and the finite-difference
//! realizations of the generator, the noise operators and their adjoints.

mod assemble;
mod coefficients;
mod coercivity;
mod grid;
mod norms;
mod time;

use std::sync::Arc;

pub use assemble::{
    assemble_adjoints, assemble_generator, assemble_noise, check_beta_vanishes_on_boundary, OperatorMatrix,
    OperatorSchedule, OperatorTag,
};
pub use coefficients::{CoefficientSet, MatrixField, OperatorForm, ScalarField, VectorField};
pub use coercivity::{check_coercivity, coercivity_form, CoercivityReport, COERCIVITY_SAMPLES};
pub use grid::{Axis, Grid, Point};
pub use norms::DiscreteNorms;
pub use time::TimeGrid;

use crate::error::Result;
use crate::scalar::Real;

/// A coefficient set discretized on a grid and time grid: the generator
/// and noise operators at every knot.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub grid: Grid<T>,
    pub times: TimeGrid<T>,
    pub coeffs: Arc<CoefficientSet<T>>,
    pub generator: OperatorSchedule<T>,
    pub noise: Vec<OperatorSchedule<T>>,
}

impl<T: Real> Model<T> {
    pub fn new(coeffs: CoefficientSet<T>, grid: Grid<T>, times: TimeGrid<T>) -> Result<Self> {
        let coeffs = Arc::new(coeffs);
        let ti = coeffs.time_independent;
        let generator = OperatorSchedule::build(&times, ti, |t| assemble_generator(&coeffs, &grid, t))?;
        let noise = (0..coeffs.noise_components())
            .map(|i| OperatorSchedule::build(&times, ti, |t| assemble_noise(&coeffs, &grid, t, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, times, coeffs, generator, noise })
    }

    /// `A*` at every knot.
    pub fn adjoint_generator(&self) -> Result<OperatorSchedule<T>> {
        OperatorSchedule::build(&self.times, self.coeffs.time_independent, |t| {
            assemble_adjoints(&self.coeffs, &self.grid, t).map(|(a, _)| a)
        })
    }

    pub fn noise_components(&self) -> usize {
        self.noise.len()
    }

    /// Number of spatial unknowns `M`.
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}
