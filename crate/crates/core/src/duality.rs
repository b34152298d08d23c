//! The adjoint forward equation and the transpose test between the
//! backward `Q` and the adjoint propagator.

use crate::cauchy::{CauchySolver, Direction, Trajectory};
use crate::discretization::Model;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nonlocal::{NonlocalCondition, NonlocalEngine};
use crate::scalar::Real;

/// Stepper for `p' = A* p` forward in time.
///
/// One step is `p_{k+1} = (I + (1-θ)Δτ A*_{k+1}) (I - θΔτ A*_k)^{-1} p_k`,
/// the exact discrete adjoint of the backward θ-step. For time-independent
/// coefficients the two factors commute and this is the ordinary forward
/// θ-scheme for `A*`.
#[derive(Debug, Clone)]
pub struct AdjointSolver<T> {
    solver: CauchySolver<T>,
}

impl<T: Real> AdjointSolver<T> {
    pub fn new(model: &Model<T>, theta: T) -> Result<Self> {
        let ops = model.adjoint_generator()?;
        Ok(Self { solver: CauchySolver::new(ops, model.times.clone(), theta)? })
    }

    pub fn len(&self) -> usize {
        self.solver.len()
    }

    pub fn is_empty(&self) -> bool {
        self.solver.is_empty()
    }

    pub fn step(&self, k: usize, p: &[T]) -> Result<Vec<T>> {
        let dt = self.solver.times().dt(k);
        let (mid, _) = self.solver.implicit_solve(k, dt, p.to_vec())?;
        Ok(self.solver.explicit_part(k + 1, dt, &mid, None, None))
    }

    /// `p` at knots `s..=K`, started from `p(s) = rho`; earlier knots hold
    /// zeros.
    pub fn solve(&self, rho: &[T], s: usize) -> Result<Trajectory<T>> {
        let times = self.solver.times();
        let steps = times.steps();
        if s > steps {
            return Err(Error::StepOutOfRange { step: s, detail: format!("time grid has {steps} steps") });
        }
        if rho.len() != self.len() {
            return Err(Error::Shape(format!("datum has length {}, grid has {} nodes", rho.len(), self.len())));
        }
        let mut values = vec![vec![T::zero(); rho.len()]; s];
        values.push(rho.to_vec());
        for k in s..steps {
            let next = self.step(k, &values[k])?;
            values.push(next);
        }
        Ok(Trajectory { times: times.clone(), values, direction: Direction::Forward, theta: self.solver.theta(), step_residual: 0.0 })
    }
}

/// Solves `p' = A* p` from `p(s) = rho` to `T`.
///
/// With noise present this is the lattice-mean realization: the noise
/// increments have zero conditional mean and the scheme is linear.
pub fn solve_adjoint_forward<T: Real>(model: &Model<T>, theta: T, rho: &[T], s: usize) -> Result<Trajectory<T>> {
    AdjointSolver::new(model, theta)?.solve(rho, s)
}

#[derive(Debug, Clone)]
pub struct DualityReport<T> {
    pub q: DenseMatrix<T>,
    /// Column `j` is `κ p(·, T)` for `p(0) = e_j`.
    pub r: DenseMatrix<T>,
    /// `‖Q − W⁻¹RᵀW‖_F / ‖Q‖_F`, zero when `Q = 0`.
    pub residual: f64,
}

/// Transpose test between the backward `κ`-condition operator `Q` and the
/// adjoint map `ρ ↦ κ p(·, T)` in the weighted inner product.
pub fn duality_report<T: Real>(model: &Model<T>, theta: T, kappa: T) -> Result<DualityReport<T>> {
    let engine = NonlocalEngine::new(model.clone(), theta, &NonlocalCondition::kappa(Direction::Backward, kappa))?;
    let q = engine.q().clone();
    let adj = AdjointSolver::new(model, theta)?;
    let m = model.len();
    let cols = (0..m)
        .map(|j| {
            let mut e = vec![T::zero(); m];
            e[j] = T::one();
            let tr = adj.solve(&e, 0)?;
            Ok(tr.terminal().iter().map(|v| kappa * *v).collect())
        })
        .collect::<Result<Vec<Vec<T>>>>()?;
    let r = DenseMatrix::from_columns(&cols);
    let w = vec![model.grid.weight(); m];
    let wrw = DenseMatrix::from_fn(m, m, |i, j| r[(j, i)] * w[j] / w[i]);
    let q_norm = q.frobenius_norm().as_f64();
    let residual = if q_norm == 0.0 { 0.0 } else { q.sub(&wrw).frobenius_norm().as_f64() / q_norm };
    Ok(DualityReport { q, r, residual })
}

pub fn duality_residual<T: Real>(model: &Model<T>, theta: T, kappa: T) -> Result<f64> {
    duality_report(model, theta, kappa).map(|r| r.residual)
}
