pub mod cauchy;
pub mod discretization;
pub mod duality;
pub mod error;
pub mod fk;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod nonlocal;
pub mod portfolio;
pub mod scalar;
pub mod spde;

pub use error::{Error, Result};
pub use scalar::Real;

pub use cauchy::{CauchySolver, Direction, Trajectory};
pub use discretization::{CoefficientSet, Grid, Model, TimeGrid};
pub use lattice::NoiseLattice;
pub use nonlocal::{NonlocalCondition, NonlocalEngine, SolveOptions, SolveVerdict, VerdictStatus};

/// Double-precision instantiations.
pub mod f64s {
    pub type Grid = crate::discretization::Grid<f64>;
    pub type TimeGrid = crate::discretization::TimeGrid<f64>;
    pub type Model = crate::discretization::Model<f64>;
    pub type CoefficientSet = crate::discretization::CoefficientSet<f64>;
    pub type CauchySolver = crate::cauchy::CauchySolver<f64>;
    pub type Trajectory = crate::cauchy::Trajectory<f64>;
    pub type NoiseLattice = crate::lattice::NoiseLattice<f64>;
    pub type NonlocalCondition = crate::nonlocal::NonlocalCondition<f64>;
    pub type NonlocalEngine = crate::nonlocal::NonlocalEngine<f64>;
}

/// Single-precision instantiations.
pub mod f32s {
    pub type Grid = crate::discretization::Grid<f32>;
    pub type TimeGrid = crate::discretization::TimeGrid<f32>;
    pub type Model = crate::discretization::Model<f32>;
    pub type CoefficientSet = crate::discretization::CoefficientSet<f32>;
    pub type CauchySolver = crate::cauchy::CauchySolver<f32>;
    pub type Trajectory = crate::cauchy::Trajectory<f32>;
    pub type NoiseLattice = crate::lattice::NoiseLattice<f32>;
    pub type NonlocalCondition = crate::nonlocal::NonlocalCondition<f32>;
    pub type NonlocalEngine = crate::nonlocal::NonlocalEngine<f32>;
}
