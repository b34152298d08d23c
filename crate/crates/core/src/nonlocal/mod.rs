//! Non-local-in-time problems: the datum-to-`Γu` operator `Q`, the
//! forcing-to-`Γu` map `T`, the fixed point `(I − Q)Φ = ξ + Tφ`, and the
//! solvability verdicts.

mod condition;
mod verdict;

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use condition::{apply_gamma, trapezoid_weights, NonlocalCondition, PointMass, ResolvedCondition, ResolvedMass};
pub use verdict::{
    verdict, CheckOutcome, Certificate, SolveVerdict, VerdictEvidence, VerdictStatus, SINGULAR_THRESHOLD,
};

use crate::cauchy::{CauchySolver, Direction, Trajectory, DENSE_GUARD};
use crate::discretization::{DiscreteNorms, Model};
use crate::error::{Error, Result};
use crate::lattice::NoiseLattice;
use crate::linalg::{singular_values, DenseMatrix};
use crate::scalar::{CompensatedSum, Real};
use crate::spde::{solve_backward_spde, solve_forward_spde, Forcing, SpdeProblem, SpdeSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Direct,
    Neumann,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveOptions {
    pub method: Method,
    /// Increment tolerance of the Neumann series.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { method: Method::Direct, tol: 1e-12, max_iter: 10_000 }
    }
}

/// Data `ξ` of the non-local condition.
#[derive(Debug, Clone)]
pub enum NonlocalDatum<T> {
    Deterministic(Vec<T>),
    /// One grid vector per terminal lattice node (backward problems).
    Leaves(Vec<Vec<T>>),
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub method: Method,
    /// Neumann terms summed (0 for the direct method).
    pub iterations: usize,
    pub q_norm: f64,
    pub min_sigma: f64,
    pub kernel_mass: f64,
    /// Largest `‖end − Γu − ξ‖_{H⁰}` over lattice leaves.
    pub residual_h0: f64,
    pub residual_max_abs: f64,
    pub leaves: usize,
}

#[derive(Debug, Clone)]
pub struct NeumannResult<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    pub last_increment: f64,
}

/// `Σ_{m≥0} Q^m rhs`, stopped once the max-norm of a term drops below
/// `tol`. Refuses to start when `‖Q‖₂ ≥ 1`.
pub fn neumann_iterate<T: Real>(q: &DenseMatrix<T>, rhs: &[T], tol: T, max_iter: usize) -> Result<NeumannResult<T>> {
    let norm = q.spectral_norm().as_f64();
    if norm >= 1.0 {
        return Err(Error::NeumannDivergence { norm });
    }
    let mut sum = rhs.to_vec();
    let mut term = rhs.to_vec();
    let mut inc = crate::scalar::max_abs(&term);
    let mut it = 0;
    while inc >= tol && inc > T::zero() {
        if it == max_iter {
            return Err(Error::NeumannNoConvergence { iterations: it, increment: inc.as_f64() });
        }
        term = q.matvec(&term);
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += *t;
        }
        inc = crate::scalar::max_abs(&term);
        it += 1;
    }
    Ok(NeumannResult { solution: sum, iterations: it, last_increment: inc.as_f64() })
}

/// Singular values of `Q`, descending.
pub fn singular_value_report<T: Real>(q: &DenseMatrix<T>) -> Vec<T> {
    singular_values(q)
}

/// Condition, model and assembled `Q` for one non-local problem.
#[derive(Debug)]
pub struct NonlocalEngine<T> {
    model: Model<T>,
    solver: CauchySolver<T>,
    condition: ResolvedCondition<T>,
    q: DenseMatrix<T>,
    spectrum: OnceLock<(f64, f64)>,
    norms: DiscreteNorms<T>,
}

impl<T: Real> NonlocalEngine<T> {
    pub fn new(model: Model<T>, theta: T, cond: &NonlocalCondition<T>) -> Result<Self> {
        let solver = CauchySolver::new(model.generator.clone(), model.times.clone(), theta)?;
        let condition = cond.resolve(&model.times, model.len())?;
        let norms = DiscreteNorms::new(&model.grid)?;
        let q = assemble_q(&condition, &solver)?;
        Ok(Self { model, solver, condition, q, spectrum: OnceLock::new(), norms })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn solver(&self) -> &CauchySolver<T> {
        &self.solver
    }

    pub fn condition(&self) -> &ResolvedCondition<T> {
        &self.condition
    }

    pub fn direction(&self) -> Direction {
        self.condition.direction
    }

    pub fn q(&self) -> &DenseMatrix<T> {
        &self.q
    }

    /// `(‖Q‖₂, min σ(I − Q))`.
    pub fn spectrum(&self) -> (f64, f64) {
        *self.spectrum.get_or_init(|| {
            let m = self.q.rows();
            let q_norm = self.q.spectral_norm().as_f64();
            let sv = singular_values(&DenseMatrix::identity(m).sub(&self.q));
            (q_norm, sv.last().map_or(f64::INFINITY, |s| s.as_f64()))
        })
    }

    pub fn verdict(&self) -> SolveVerdict {
        let (q_norm, min_sigma) = self.spectrum();
        verdict(&self.condition, &self.model.coeffs, &self.model.grid, &self.model.times, q_norm, min_sigma)
    }

    fn gamma_of(&self, tr: &Trajectory<T>) -> Vec<T> {
        self.condition.apply(&tr.values)
    }

    /// `Tφ`: `Γu` for zero datum and forcing `φ`.
    pub fn t_rhs(&self, forcing: Option<&[Vec<T>]>) -> Result<Vec<T>> {
        let m = self.model.len();
        if forcing.is_none() || self.condition.is_zero() {
            return Ok(vec![T::zero(); m]);
        }
        let tr = self.solver.solve(self.direction(), &vec![T::zero(); m], forcing)?;
        Ok(self.gamma_of(&tr))
    }

    /// Solves `(I − Q)Φ = rhs`; returns `Φ` and the Neumann term count.
    pub fn fixed_point(&self, rhs: &[T], options: &SolveOptions) -> Result<(Vec<T>, usize)> {
        match options.method {
            Method::Direct => {
                let (_, min_sigma) = self.spectrum();
                if !(min_sigma >= SINGULAR_THRESHOLD) {
                    return Err(Error::Singular { min_sigma });
                }
                let a = DenseMatrix::identity(self.q.rows()).sub(&self.q);
                let lu = a.lu().map_err(|_| Error::Singular { min_sigma })?;
                Ok((lu.solve(rhs), 0))
            }
            Method::Neumann => {
                let r = neumann_iterate(&self.q, rhs, T::lit(options.tol), options.max_iter)?;
                Ok((r.solution, r.iterations))
            }
        }
    }

    fn endpoint(&self, values: &[Vec<T>]) -> usize {
        match self.direction() {
            Direction::Forward => 0,
            Direction::Backward => values.len() - 1,
        }
    }

    fn report(&self, options: &SolveOptions, iterations: usize, residuals: &[Vec<T>]) -> SolveReport {
        let (q_norm, min_sigma) = self.spectrum();
        let residual_h0 = residuals.iter().map(|r| self.norms.h0(r).as_f64()).fold(0.0, f64::max);
        let residual_max_abs = residuals.iter().map(|r| crate::scalar::max_abs(r).as_f64()).fold(0.0, f64::max);
        SolveReport {
            method: options.method,
            iterations,
            q_norm,
            min_sigma,
            kernel_mass: self.condition.kernel_mass.as_f64(),
            residual_h0,
            residual_max_abs,
            leaves: residuals.len(),
        }
    }

    /// Deterministic problem `u' = Au + φ` with the non-local condition.
    pub fn solve_pde(
        &self,
        forcing: Option<&[Vec<T>]>,
        xi: &[T],
        options: &SolveOptions,
    ) -> Result<(Trajectory<T>, SolveReport)> {
        let m = self.model.len();
        if xi.len() != m {
            return Err(Error::Shape(format!("datum has length {}, grid has {m} nodes", xi.len())));
        }
        let t_phi = self.t_rhs(forcing)?;
        let rhs: Vec<T> = xi.iter().zip(&t_phi).map(|(a, b)| *a + *b).collect();
        let (phi0, iterations) = self.fixed_point(&rhs, options)?;
        let tr = self.solver.solve(self.direction(), &phi0, forcing)?;
        let gamma = self.gamma_of(&tr);
        let end = &tr.values[self.endpoint(&tr.values)];
        let r: Vec<T> = end.iter().zip(&gamma).zip(xi).map(|((e, g), x)| *e - *g - *x).collect();
        Ok((tr, self.report(options, iterations, &[r])))
    }

    fn problem(&self, forcing: Forcing<T>, noise_forcing: Vec<Forcing<T>>) -> SpdeProblem<T> {
        SpdeProblem { model: self.model.clone(), solver: self.solver.clone(), forcing, noise_forcing }
    }

    /// Stochastic problem on a lattice. Backward problems accept leaf data
    /// `ξ`; its lattice mean enters the fixed point and the zero-mean
    /// remainder is attached to the terminal value directly.
    pub fn solve_spde(
        &self,
        lat: &NoiseLattice<T>,
        forcing: Forcing<T>,
        noise_forcing: Vec<Forcing<T>>,
        xi: &NonlocalDatum<T>,
        options: &SolveOptions,
    ) -> Result<(SpdeSolution<T>, SolveReport)> {
        let m = self.model.len();
        let n = self.model.noise_components();
        let noise_forcing = if noise_forcing.is_empty() { vec![Forcing::Zero; n] } else { noise_forcing };
        let p = self.problem(forcing, noise_forcing);
        match self.direction() {
            Direction::Forward => {
                let xi = match xi {
                    NonlocalDatum::Deterministic(v) => v,
                    NonlocalDatum::Leaves(_) => {
                        return Err(Error::Condition("a forward condition needs a deterministic datum".into()));
                    }
                };
                if xi.len() != m {
                    return Err(Error::Shape(format!("datum has length {}, grid has {m} nodes", xi.len())));
                }
                // the noise terms have zero conditional mean, so E u solves the mean-forced PDE
                let means = p.forcing.means(lat, lat.steps())?;
                let t_phi = self.t_rhs(means.as_deref())?;
                let rhs: Vec<T> = xi.iter().zip(&t_phi).map(|(a, b)| *a + *b).collect();
                let (phi0, iterations) = self.fixed_point(&rhs, options)?;
                let sol = solve_forward_spde(&p, &phi0, lat)?;
                let gamma = self.condition.apply(&sol.mean_trajectory(lat)?);
                let r: Vec<T> =
                    sol.initial().iter().zip(&gamma).zip(xi).map(|((e, g), x)| *e - *g - *x).collect();
                Ok((sol, self.report(options, iterations, &[r])))
            }
            Direction::Backward => {
                let leaves_n = lat.nodes_at(lat.steps());
                let leaves: Vec<Vec<T>> = match xi {
                    NonlocalDatum::Deterministic(v) => vec![v.clone(); leaves_n],
                    NonlocalDatum::Leaves(l) => l.clone(),
                };
                if leaves.len() != leaves_n || leaves.iter().any(|v| v.len() != m) {
                    return Err(Error::Shape(format!("datum needs {leaves_n} leaves of length {m}")));
                }
                let probs = lat.probabilities(lat.steps());
                let mean: Vec<T> = (0..m)
                    .map(|g| {
                        let mut s = CompensatedSum::new();
                        for (p, v) in probs.iter().zip(&leaves) {
                            s.add(*p * v[g]);
                        }
                        s.value()
                    })
                    .collect();
                let remainder: Vec<Vec<T>> =
                    leaves.iter().map(|v| v.iter().zip(&mean).map(|(a, b)| *a - *b).collect()).collect();
                let g = if self.condition.is_zero() {
                    vec![T::zero(); m]
                } else {
                    let part = solve_backward_spde(&p, &remainder, lat)?;
                    self.condition.apply(&part.mean_trajectory(lat)?)
                };
                let rhs: Vec<T> = mean.iter().zip(&g).map(|(a, b)| *a + *b).collect();
                let (phi0, iterations) = self.fixed_point(&rhs, options)?;
                let terminal: Vec<Vec<T>> =
                    remainder.iter().map(|r| r.iter().zip(&phi0).map(|(a, b)| *a + *b).collect()).collect();
                let sol = solve_backward_spde(&p, &terminal, lat)?;
                let gamma = self.condition.apply(&sol.mean_trajectory(lat)?);
                let k = lat.steps();
                let residuals: Vec<Vec<T>> = (0..leaves_n)
                    .map(|leaf| {
                        sol.u.at(k, leaf).iter().zip(&gamma).zip(&leaves[leaf]).map(|((e, g), x)| *e - *g - *x).collect()
                    })
                    .collect();
                Ok((sol, self.report(options, iterations, &residuals)))
            }
        }
    }
}

/// Column `j` of `Q` is `Γ` of the Cauchy solve with datum `e_j`.
///
/// Deterministic data give deterministic solutions (the noise terms
/// vanish), so the same matrix serves the stochastic problems.
pub fn assemble_q<T: Real>(cond: &ResolvedCondition<T>, solver: &CauchySolver<T>) -> Result<DenseMatrix<T>> {
    let m = solver.len();
    if m > DENSE_GUARD {
        return Err(Error::DenseGuard { m, limit: DENSE_GUARD });
    }
    if cond.is_zero() {
        return Ok(DenseMatrix::zeros(m, m));
    }
    let cols = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![T::zero(); m];
            e[j] = T::one();
            let tr = solver.solve(cond.direction, &e, None)?;
            Ok(cond.apply(&tr.values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseMatrix::from_columns(&cols))
}
