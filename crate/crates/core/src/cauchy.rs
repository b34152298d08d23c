//! θ-scheme Cauchy solvers for `u' = A u + φ`, forward from an initial
//! datum or backward from a terminal one, and the energy reporters.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretization::{DiscreteNorms, OperatorSchedule, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{BandLu, BandMatrix, DenseMatrix};
use crate::scalar::Real;

/// Largest `M` for which dense propagator / `Q` matrices are formed.
pub const DENSE_GUARD: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    /// Datum at `t = 0`, stepping towards `T`.
    Forward,
    /// Datum at `t = T`, stepping towards `0`.
    Backward,
}

/// Grid values at every knot; `values[k]` belongs to `times.knot(k)`
/// whatever the stepping direction.
#[derive(Debug, Clone)]
pub struct Trajectory<T> {
    pub times: TimeGrid<T>,
    pub values: Vec<Vec<T>>,
    pub direction: Direction,
    pub theta: T,
    /// Largest max-norm residual of the per-step linear systems.
    pub step_residual: f64,
}

impl<T: Real> Trajectory<T> {
    pub fn at(&self, k: usize) -> &[T] {
        &self.values[k]
    }

    pub fn initial(&self) -> &[T] {
        &self.values[0]
    }

    pub fn terminal(&self) -> &[T] {
        self.values.last().expect("trajectory has at least one knot")
    }

    /// Writes `knot,time,node,value` rows in knot-major order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["knot", "time", "node", "value"])?;
        for (k, v) in self.values.iter().enumerate() {
            let t = self.times.knot(k).as_f64().to_string();
            for (j, x) in v.iter().enumerate() {
                w.write_record([k.to_string(), t.clone(), j.to_string(), x.as_f64().to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

type CacheKey = (usize, u64);

/// Implicit stepper over a fixed operator schedule and time grid.
///
/// Step matrices `I - θΔτ A` are factored once per distinct
/// (operator, θΔτ) pair and shared between concurrent solves.
#[derive(Debug)]
pub struct CauchySolver<T> {
    ops: OperatorSchedule<T>,
    times: TimeGrid<T>,
    theta: T,
    cache: RwLock<HashMap<CacheKey, Arc<BandLu<T>>>>,
}

impl<T: Clone> Clone for CauchySolver<T> {
    fn clone(&self) -> Self {
        Self {
            ops: self.ops.clone(),
            times: self.times.clone(),
            theta: self.theta.clone(),
            cache: RwLock::new(self.cache.read().expect("cache lock").clone()),
        }
    }
}

fn check_finite<T: Real>(v: &[T], what: &str, knot: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at knot {knot}")))
    }
}

impl<T: Real> CauchySolver<T> {
    pub fn new(ops: OperatorSchedule<T>, times: TimeGrid<T>, theta: T) -> Result<Self> {
        if !(theta >= T::lit(0.5) && theta <= T::one()) {
            return Err(Error::Condition(format!("theta must lie in [1/2, 1], got {theta}")));
        }
        if ops.knots() != times.knots().len() {
            return Err(Error::Shape(format!(
                "operator schedule has {} knots, time grid {}",
                ops.knots(),
                times.knots().len()
            )));
        }
        Ok(Self { ops, times, theta, cache: RwLock::new(HashMap::new()) })
    }

    pub fn times(&self) -> &TimeGrid<T> {
        &self.times
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn operators(&self) -> &OperatorSchedule<T> {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.at(0).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn step_lu(&self, knot: usize, dt: T) -> Result<Arc<BandLu<T>>> {
        let scale = self.theta * dt;
        let key = (self.ops.id(knot), scale.as_f64().to_bits());
        if let Some(lu) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(lu.clone());
        }
        let m = self.ops.at(knot).matrix.shifted(T::one(), -scale);
        let lu = BandMatrix::from_sparse(&m).factor().map_err(|_| Error::SingularStep { knot })?;
        let lu = Arc::new(lu);
        self.cache.write().expect("cache lock").entry(key).or_insert_with(|| lu.clone());
        Ok(lu)
    }

    /// Explicit part `(I + (1-θ)Δτ A_knot) v + Δτ φ + extra`.
    pub(crate) fn explicit_part(&self, knot: usize, dt: T, v: &[T], phi: Option<&[T]>, extra: Option<&[T]>) -> Vec<T> {
        let mut rhs = v.to_vec();
        let w = (T::one() - self.theta) * dt;
        if w != T::zero() {
            let av = self.ops.at(knot).apply(v);
            for (r, a) in rhs.iter_mut().zip(&av) {
                *r += w * *a;
            }
        }
        if let Some(phi) = phi {
            for (r, p) in rhs.iter_mut().zip(phi) {
                *r += dt * *p;
            }
        }
        if let Some(e) = extra {
            for (r, x) in rhs.iter_mut().zip(e) {
                *r += *x;
            }
        }
        rhs
    }

    pub(crate) fn implicit_solve(&self, knot: usize, dt: T, rhs: Vec<T>) -> Result<(Vec<T>, f64)> {
        let lu = self.step_lu(knot, dt)?;
        let mut x = rhs.clone();
        lu.solve_in_place(&mut x);
        check_finite(&x, "step solution", knot)?;
        let ax = self.ops.at(knot).apply(&x);
        let s = self.theta * dt;
        let res = x.iter().zip(&ax).zip(&rhs).fold(0.0f64, |m, ((xi, ai), ri)| m.max((*xi - s * *ai - *ri).abs().as_f64()));
        Ok((x, res))
    }

    /// `u_{k+1}` from `u_k`: `(I - θΔτA_{k+1}) u_{k+1} = (I + (1-θ)ΔτA_k) u_k + Δτφ_k + extra`.
    pub fn forward_step(&self, k: usize, u: &[T], phi: Option<&[T]>, extra: Option<&[T]>) -> Result<Vec<T>> {
        self.forward_step_checked(k, u, phi, extra).map(|(x, _)| x)
    }

    fn forward_step_checked(&self, k: usize, u: &[T], phi: Option<&[T]>, extra: Option<&[T]>) -> Result<(Vec<T>, f64)> {
        let dt = self.times.dt(k);
        let rhs = self.explicit_part(k, dt, u, phi, extra);
        self.implicit_solve(k + 1, dt, rhs)
    }

    /// `u_k` from `u_{k+1}`: `(I - θΔτA_k) u_k = (I + (1-θ)ΔτA_{k+1}) u_{k+1} + Δτφ_k + extra`.
    pub fn backward_step(&self, k: usize, u_next: &[T], phi: Option<&[T]>, extra: Option<&[T]>) -> Result<Vec<T>> {
        self.backward_step_checked(k, u_next, phi, extra).map(|(x, _)| x)
    }

    fn backward_step_checked(
        &self,
        k: usize,
        u_next: &[T],
        phi: Option<&[T]>,
        extra: Option<&[T]>,
    ) -> Result<(Vec<T>, f64)> {
        let dt = self.times.dt(k);
        let rhs = self.explicit_part(k + 1, dt, u_next, phi, extra);
        self.implicit_solve(k, dt, rhs)
    }

    fn check_datum(&self, v: &[T], forcing: Option<&[Vec<T>]>) -> Result<()> {
        let m = self.len();
        if v.len() != m {
            return Err(Error::Shape(format!("datum has length {}, grid has {m} nodes", v.len())));
        }
        if let Some(f) = forcing {
            if f.len() < self.times.steps() || f.iter().take(self.times.steps()).any(|x| x.len() != m) {
                return Err(Error::Shape("forcing must give a grid vector for every step".into()));
            }
        }
        check_finite(v, "datum", 0)
    }

    /// Forward solve from `u0` at `t = 0`; `forcing[k]` is used on step `k`.
    pub fn solve_forward(&self, u0: &[T], forcing: Option<&[Vec<T>]>) -> Result<Trajectory<T>> {
        self.check_datum(u0, forcing)?;
        let mut values = vec![u0.to_vec()];
        let mut worst = 0.0f64;
        for k in 0..self.times.steps() {
            let (next, r) = self.forward_step_checked(k, &values[k], forcing.map(|f| f[k].as_slice()), None)?;
            worst = worst.max(r);
            values.push(next);
        }
        Ok(Trajectory {
            times: self.times.clone(),
            values,
            direction: Direction::Forward,
            theta: self.theta,
            step_residual: worst,
        })
    }

    /// Backward solve from `phi_t` at `t = T`.
    pub fn solve_backward(&self, phi_t: &[T], forcing: Option<&[Vec<T>]>) -> Result<Trajectory<T>> {
        self.check_datum(phi_t, forcing)?;
        let steps = self.times.steps();
        let mut values = vec![Vec::new(); steps + 1];
        values[steps] = phi_t.to_vec();
        let mut worst = 0.0f64;
        for k in (0..steps).rev() {
            let (prev, r) = self.backward_step_checked(k, &values[k + 1], forcing.map(|f| f[k].as_slice()), None)?;
            worst = worst.max(r);
            values[k] = prev;
        }
        Ok(Trajectory {
            times: self.times.clone(),
            values,
            direction: Direction::Backward,
            theta: self.theta,
            step_residual: worst,
        })
    }

    pub fn solve(&self, direction: Direction, datum: &[T], forcing: Option<&[Vec<T>]>) -> Result<Trajectory<T>> {
        match direction {
            Direction::Forward => self.solve_forward(datum, forcing),
            Direction::Backward => self.solve_backward(datum, forcing),
        }
    }

    /// Forward stepping over knots `from..=to` only, returning the state at `to`.
    pub fn advance(&self, from: usize, to: usize, u: &[T], forcing: Option<&[Vec<T>]>) -> Result<Vec<T>> {
        if from > to || to > self.times.steps() {
            return Err(Error::StepOutOfRange { step: to, detail: format!("cannot advance from knot {from}") });
        }
        let mut v = u.to_vec();
        for k in from..to {
            v = self.forward_step(k, &v, forcing.map(|f| f[k].as_slice()), None)?;
        }
        Ok(v)
    }

    /// Dense matrix of the datum-to-far-end map (column `j` is the solve
    /// with datum `e_j` and no forcing).
    pub fn propagator_matrix(&self, direction: Direction) -> Result<DenseMatrix<T>> {
        let m = self.len();
        if m > DENSE_GUARD {
            return Err(Error::DenseGuard { m, limit: DENSE_GUARD });
        }
        let cols = (0..m)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![T::zero(); m];
                e[j] = T::one();
                let tr = self.solve(direction, &e, None)?;
                Ok(match direction {
                    Direction::Forward => tr.terminal().to_vec(),
                    Direction::Backward => tr.initial().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DenseMatrix::from_columns(&cols))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, the empirical constant; 0 for zero data.
    pub ratio: f64,
}

impl EnergyReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        let ratio = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { lhs / rhs };
        Self { lhs, rhs, ratio }
    }
}

/// Knot carrying the implicitly computed value of step `k`.
fn implicit_knot(direction: Direction, k: usize) -> usize {
    match direction {
        Direction::Forward => k + 1,
        Direction::Backward => k,
    }
}

fn energy<T: Real>(
    traj: &Trajectory<T>,
    forcing: Option<&[Vec<T>]>,
    datum: &[T],
    sup: impl Fn(&[T]) -> T,
    integrated: impl Fn(&[T]) -> T,
    forcing_norm: impl Fn(&[T]) -> T,
    datum_norm: impl Fn(&[T]) -> T,
) -> EnergyReport {
    let tg = &traj.times;
    let max = traj.values.iter().map(|v| sup(v).as_f64()).fold(0.0, f64::max);
    let mut int = 0.0;
    let mut data = datum_norm(datum).as_f64();
    for k in 0..tg.steps() {
        let dt = tg.dt(k).as_f64();
        int += dt * integrated(&traj.values[implicit_knot(traj.direction, k)]).as_f64();
        if let Some(f) = forcing {
            data += dt * forcing_norm(&f[k]).as_f64();
        }
    }
    EnergyReport::new(max + int, data)
}

/// `max‖u‖²_{H⁰} + Σ Δτ‖u‖²_{H¹}` against `Σ Δτ‖φ‖²_{H⁻¹} + ‖datum‖²_{H⁰}`.
pub fn energy_report_first<T: Real>(
    traj: &Trajectory<T>,
    norms: &DiscreteNorms<T>,
    forcing: Option<&[Vec<T>]>,
    datum: &[T],
) -> EnergyReport {
    energy(
        traj,
        forcing,
        datum,
        |v| norms.h0_sq(v),
        |v| norms.h1_sq(v),
        |v| norms.h_minus1_sq(v),
        |v| norms.h0_sq(v),
    )
}

/// `max‖u‖²_{H¹} + Σ Δτ‖u‖²_{H²}` against `Σ Δτ‖φ‖²_{H⁰} + ‖datum‖²_{H¹}`.
pub fn energy_report_second<T: Real>(
    traj: &Trajectory<T>,
    norms: &DiscreteNorms<T>,
    forcing: Option<&[Vec<T>]>,
    datum: &[T],
) -> EnergyReport {
    energy(
        traj,
        forcing,
        datum,
        |v| norms.h1_sq(v),
        |v| norms.h2_sq(v),
        |v| norms.h0_sq(v),
        |v| norms.h1_sq(v),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{CoefficientSet, Grid, Model};
    use std::f64::consts::PI;

    fn single_node(steps: usize, theta: f64) -> CauchySolver<f64> {
        let g = Grid::coarse(&[(0.0, PI, 1)]).unwrap();
        let tg = TimeGrid::uniform(1.0, steps).unwrap();
        let model = Model::new(CoefficientSet::heat(1, 1.0), g, tg.clone()).unwrap();
        CauchySolver::new(model.generator, tg, theta).unwrap()
    }

    fn heat(n: usize, steps: usize, theta: f64) -> (Model<f64>, CauchySolver<f64>) {
        let g = Grid::interval(0.0, PI, n).unwrap();
        let tg = TimeGrid::uniform(1.0, steps).unwrap();
        let model = Model::new(CoefficientSet::heat(1, 1.0), g, tg.clone()).unwrap();
        let s = CauchySolver::new(model.generator.clone(), tg, theta).unwrap();
        (model, s)
    }

    const SCALAR: f64 = 1.0 / (1.0 + 8.0 / (PI * PI));

    #[test]
    fn scalar_steps() {
        let s = single_node(1, 1.0);
        assert!((s.solve_forward(&[1.0], None).unwrap().terminal()[0] - SCALAR).abs() < 1e-15);
        assert!((s.solve_backward(&[1.0], None).unwrap().initial()[0] - SCALAR).abs() < 1e-15);
        let f = vec![vec![1.0], vec![1.0]];
        assert!((s.solve_backward(&[0.0], Some(&f)).unwrap().initial()[0] - SCALAR).abs() < 1e-15);
        assert!((s.propagator_matrix(Direction::Forward).unwrap()[(0, 0)] - SCALAR).abs() < 1e-15);
        assert!((0.55231 - SCALAR).abs() < 1e-5);
    }

    #[test]
    fn zero_data_gives_zero() {
        let (_, s) = heat(7, 4, 1.0);
        let tr = s.solve_forward(&[0.0; 7], None).unwrap();
        assert!(tr.values.iter().flatten().all(|&x| x == 0.0));
    }

    #[test]
    fn sine_mode_decay_matches_recursion() {
        for theta in [1.0, 0.5, 0.75] {
            let (m, s) = heat(31, 20, theta);
            let h = m.grid.axis(0).h;
            let u0 = m.grid.sample(|p| p[0].sin());
            let lam = -4.0 / (h * h) * (h / 2.0).sin().powi(2);
            let dt = 1.0 / 20.0;
            let rho = ((1.0 + (1.0 - theta) * dt * lam) / (1.0 - theta * dt * lam)).powi(20);
            let tr = s.solve_forward(&u0, None).unwrap();
            for (a, b) in tr.terminal().iter().zip(&u0) {
                assert!((a - rho * b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_steps_propagator_is_identity() {
        let g = Grid::interval(0.0, PI, 5).unwrap();
        let tg = TimeGrid::uniform(1.0, 4).unwrap();
        let model = Model::new(CoefficientSet::heat(1, 1.0), g, tg.clone()).unwrap();
        let s = CauchySolver::new(model.generator, tg, 1.0).unwrap();
        let id = s.advance(2, 2, &[1.0, 2.0, 3.0, 4.0, 5.0], None).unwrap();
        assert_eq!(id, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }

    #[test]
    fn self_adjoint_propagator_is_symmetric() {
        let (_, s) = heat(15, 8, 1.0);
        let p = s.propagator_matrix(Direction::Forward).unwrap();
        assert!(p.sub(&p.transpose()).max_abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_theta() {
        let g = Grid::interval(0.0, 1.0, 3).unwrap();
        let tg = TimeGrid::uniform(1.0, 2).unwrap();
        let model = Model::new(CoefficientSet::heat(1, 1.0), g, tg.clone()).unwrap();
        assert!(CauchySolver::new(model.generator, tg, 0.3).is_err());
    }

    #[test]
    fn energy_reports() {
        let (m, s) = heat(15, 8, 1.0);
        let norms = DiscreteNorms::new(&m.grid).unwrap();
        let zero = vec![0.0; 15];
        let tr = s.solve_forward(&zero, None).unwrap();
        assert_eq!(energy_report_first(&tr, &norms, None, &zero).ratio, 0.0);
        assert_eq!(energy_report_second(&tr, &norms, None, &zero).ratio, 0.0);
        let f = vec![vec![1.0; 15]; 9];
        let tr = s.solve_forward(&zero, Some(&f)).unwrap();
        let r = energy_report_first(&tr, &norms, Some(&f), &zero);
        assert!(r.lhs > 0.0 && r.ratio.is_finite());
        let r = energy_report_second(&tr, &norms, Some(&f), &zero);
        assert!(r.lhs > 0.0 && r.ratio.is_finite());
    }

    #[test]
    fn csv_rows_are_knot_major() {
        let s = single_node(2, 1.0);
        let tr = s.solve_forward(&[1.0], None).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "knot,time,node,value");
        assert_eq!(lines[1], "0,0,0,1");
        assert_eq!(lines.len(), 4);
    }
}
