//! Forward SPDE stepping and backward SPDE dynamic programming on a noise
//! lattice.
//!
//! Forward: `u_{k+1} = (I - θΔτA)^{-1}[(I + (1-θ)ΔτA)u_k + Δτφ_k + Σ_i (B_i u_k + h_i)Δw_i]`.
//! Backward: with `m = E_k[u_{k+1}]` and `χ` from the martingale part of
//! `u_{k+1}`, `(I - θΔτA_k)u_k = (I + (1-θ)ΔτA_{k+1})m + Δτφ_k + ΔτΣ_i B_i χ_i`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::cauchy::{CauchySolver, Direction};
use crate::discretization::{DiscreteNorms, Model};
use crate::error::{Error, Result};
use crate::lattice::{martingale_part, AdaptedField, NoiseLattice};
use crate::linalg::axpy;
use crate::scalar::Real;

/// Largest number of lattice paths enumerated by `definition_residual`.
pub const PATH_GUARD: usize = 1 << 20;

/// Grid-valued forcing on the lattice.
#[derive(Debug, Clone, Default)]
pub enum Forcing<T> {
    #[default]
    Zero,
    /// One grid vector per knot, the same on every lattice node.
    Deterministic(Vec<Vec<T>>),
    Adapted(AdaptedField<T>),
}

impl<T: Real> Forcing<T> {
    pub fn at(&self, k: usize, node: usize) -> Option<&[T]> {
        match self {
            Forcing::Zero => None,
            Forcing::Deterministic(v) => Some(&v[k]),
            Forcing::Adapted(f) => Some(f.at(k, node)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }

    /// Lattice mean at every step `0..steps`.
    pub fn means(&self, lat: &NoiseLattice<T>, steps: usize) -> Result<Option<Vec<Vec<T>>>> {
        match self {
            Forcing::Zero => Ok(None),
            Forcing::Deterministic(v) => Ok(Some(v[..steps].to_vec())),
            Forcing::Adapted(f) => (0..steps).map(|k| f.mean(lat, k)).collect::<Result<Vec<_>>>().map(Some),
        }
    }

    fn check(&self, lat: &NoiseLattice<T>, m: usize, name: &str) -> Result<()> {
        let steps = lat.steps();
        match self {
            Forcing::Zero => Ok(()),
            Forcing::Deterministic(v) => {
                if v.len() < steps || v.iter().take(steps).any(|x| x.len() != m) {
                    Err(Error::Shape(format!("{name}: need a grid vector for each of {steps} steps")))
                } else {
                    Ok(())
                }
            }
            Forcing::Adapted(f) => {
                f.check_against(lat)?;
                if f.width() != m || (steps > 0 && f.last_step() + 1 < steps) {
                    Err(Error::Shape(format!("{name}: adapted forcing must cover steps 0..{steps} on {m} nodes")))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Model plus stepping scheme plus the right-hand-side data.
#[derive(Debug, Clone)]
pub struct SpdeProblem<T> {
    pub model: Model<T>,
    pub solver: CauchySolver<T>,
    pub forcing: Forcing<T>,
    /// Additive noise terms `h_i` of the forward equation.
    pub noise_forcing: Vec<Forcing<T>>,
}

impl<T: Real> SpdeProblem<T> {
    pub fn new(model: Model<T>, theta: T) -> Result<Self> {
        let solver = CauchySolver::new(model.generator.clone(), model.times.clone(), theta)?;
        let n = model.noise_components();
        Ok(Self { model, solver, forcing: Forcing::Zero, noise_forcing: vec![Forcing::Zero; n] })
    }

    pub fn with_forcing(mut self, forcing: Forcing<T>) -> Self {
        self.forcing = forcing;
        self
    }

    pub fn with_noise_forcing(mut self, i: usize, h: Forcing<T>) -> Result<Self> {
        let n = self.noise_forcing.len();
        *self.noise_forcing.get_mut(i).ok_or(Error::ComponentOutOfRange { i, n })? = h;
        Ok(self)
    }

    pub fn theta(&self) -> T {
        self.solver.theta()
    }

    fn check_lattice(&self, lat: &NoiseLattice<T>) -> Result<()> {
        let n = self.model.noise_components();
        if n > 0 && lat.components() != n {
            return Err(Error::Shape(format!("coefficients have {n} noise components, lattice {}", lat.components())));
        }
        let (a, b) = (lat.times().knots(), self.model.times.knots());
        if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x != y) {
            return Err(Error::Shape("lattice and model use different time grids".into()));
        }
        let m = self.model.len();
        self.forcing.check(lat, m, "forcing")?;
        for h in &self.noise_forcing {
            h.check(lat, m, "noise forcing")?;
        }
        Ok(())
    }

    fn noise_count(&self, lat: &NoiseLattice<T>) -> usize {
        self.model.noise_components().min(lat.components())
    }

    /// `Σ_i (B_i u + h_i) Δw_i` on `branch` of step `k`.
    fn forward_noise(&self, lat: &NoiseLattice<T>, k: usize, node: usize, branch: usize, u: &[T]) -> Option<Vec<T>> {
        let n = self.noise_count(lat);
        let has_h = self.noise_forcing.iter().any(|h| !h.is_zero());
        if n == 0 && !has_h {
            return None;
        }
        let mut out = vec![T::zero(); u.len()];
        for i in 0..lat.components() {
            let dw = lat.increment(k, branch, i);
            if i < n {
                axpy(dw, &self.model.noise[i].at(k).apply(u), &mut out);
            }
            if let Some(h) = self.noise_forcing.get(i).and_then(|h| h.at(k, node)) {
                axpy(dw, h, &mut out);
            }
        }
        Some(out)
    }
}

/// Adapted solution; `chi` is empty for forward problems.
#[derive(Debug, Clone)]
pub struct SpdeSolution<T> {
    pub direction: Direction,
    pub u: AdaptedField<T>,
    pub chi: Vec<AdaptedField<T>>,
    /// Largest `|value − E_k value − Σχ Δw|` met while extracting `χ`.
    pub reconstruction_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpdeSummary {
    pub direction: Direction,
    pub steps: usize,
    pub lattice_nodes: usize,
    pub max_abs_u: f64,
    pub max_abs_chi: Vec<f64>,
    pub mean_initial_h0: f64,
    pub mean_terminal_h0: f64,
    pub reconstruction_residual: f64,
}

impl<T: Real> SpdeSolution<T> {
    /// Lattice mean of `u` at every step.
    pub fn mean_trajectory(&self, lat: &NoiseLattice<T>) -> Result<Vec<Vec<T>>> {
        (0..=self.u.last_step()).map(|k| self.u.mean(lat, k)).collect()
    }

    /// Values at the root node.
    pub fn initial(&self) -> &[T] {
        self.u.at(0, 0)
    }

    pub fn summary(&self, lat: &NoiseLattice<T>, norms: &DiscreteNorms<T>) -> Result<SpdeSummary> {
        let last = self.u.last_step();
        Ok(SpdeSummary {
            direction: self.direction,
            steps: last,
            lattice_nodes: lat.total_nodes(),
            max_abs_u: self.u.max_abs().as_f64(),
            max_abs_chi: self.chi.iter().map(|c| c.max_abs().as_f64()).collect(),
            mean_initial_h0: norms.h0(self.u.at(0, 0)).as_f64(),
            mean_terminal_h0: norms.h0(&self.u.mean(lat, last)?).as_f64(),
            reconstruction_residual: self.reconstruction_residual,
        })
    }

    /// Rows `step,node,grid_index,u,chi_1..chi_N`; `χ` cells are empty at
    /// the terminal step.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "node".into(), "grid_index".into(), "u".into()];
        header.extend((1..=self.chi.len()).map(|i| format!("chi_{i}")));
        w.write_record(&header)?;
        for k in 0..=self.u.last_step() {
            for (node, vals) in self.u.step(k).iter().enumerate() {
                for (g, v) in vals.iter().enumerate() {
                    let mut rec = vec![k.to_string(), node.to_string(), g.to_string(), v.as_f64().to_string()];
                    for c in &self.chi {
                        rec.push(if k <= c.last_step() { c.at(k, node)[g].as_f64().to_string() } else { String::new() });
                    }
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn merge_step<T: Real>(k: usize, results: Vec<Vec<(usize, Vec<T>)>>, nodes: usize) -> Result<Vec<Vec<T>>> {
    let mut next: Vec<Option<Vec<T>>> = vec![None; nodes];
    for (c, v) in results.into_iter().flatten() {
        match &next[c] {
            None => next[c] = Some(v),
            Some(prev) => {
                let scale = prev.iter().chain(&v).fold(T::one(), |s, x| s.max(x.abs()));
                if prev.iter().zip(&v).any(|(a, b)| (*a - *b).abs() > T::lit(1e-12) * scale) {
                    return Err(Error::PathDependent { step: k + 1 });
                }
            }
        }
    }
    Ok(next.into_iter().map(|v| v.expect("every node is reached")).collect())
}

/// Forward SPDE from the deterministic initial value `u0`.
///
/// On a recombining lattice the solution must recombine (e.g. `B_i ≡ 0`
/// and `h_i ≡ 0`); otherwise use a tree lattice.
pub fn solve_forward_spde<T: Real>(p: &SpdeProblem<T>, u0: &[T], lat: &NoiseLattice<T>) -> Result<SpdeSolution<T>> {
    p.check_lattice(lat)?;
    if u0.len() != p.model.len() {
        return Err(Error::Shape(format!("initial value has length {}, grid has {}", u0.len(), p.model.len())));
    }
    let mut steps = vec![vec![u0.to_vec()]];
    for k in 0..lat.steps() {
        let cur = &steps[k];
        let results = (0..lat.nodes_at(k))
            .into_par_iter()
            .map(|node| {
                let u = &cur[node];
                let phi = p.forcing.at(k, node);
                (0..lat.branches())
                    .map(|b| {
                        let extra = p.forward_noise(lat, k, node, b, u);
                        let v = p.solver.forward_step(k, u, phi, extra.as_deref())?;
                        Ok((lat.child(k, node, b), v))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        steps.push(merge_step(k, results, lat.nodes_at(k + 1))?);
    }
    Ok(SpdeSolution {
        direction: Direction::Forward,
        u: AdaptedField::from_steps(u0.len(), steps),
        chi: Vec::new(),
        reconstruction_residual: 0.0,
    })
}

/// Backward SPDE from terminal leaf values `phi_t[leaf]`.
pub fn solve_backward_spde<T: Real>(
    p: &SpdeProblem<T>,
    phi_t: &[Vec<T>],
    lat: &NoiseLattice<T>,
) -> Result<SpdeSolution<T>> {
    p.check_lattice(lat)?;
    let steps = lat.steps();
    let m = p.model.len();
    if phi_t.len() != lat.nodes_at(steps) || phi_t.iter().any(|v| v.len() != m) {
        return Err(Error::Shape(format!(
            "terminal value needs {} leaves of length {m}, got {}",
            lat.nodes_at(steps),
            phi_t.len()
        )));
    }
    let n = lat.components();
    let nb = p.noise_count(lat);
    let mut u: Vec<Vec<Vec<T>>> = vec![Vec::new(); steps + 1];
    u[steps] = phi_t.to_vec();
    let mut chi: Vec<Vec<Vec<Vec<T>>>> = vec![vec![Vec::new(); steps]; n];
    let mut recon = T::zero();
    for k in (0..steps).rev() {
        let mp = martingale_part(lat, k, &u[k + 1]);
        recon = recon.max(mp.residual);
        let dt = lat.times().dt(k);
        let vals = (0..lat.nodes_at(k))
            .into_par_iter()
            .map(|node| {
                let extra = (nb > 0).then(|| {
                    let mut e = vec![T::zero(); m];
                    for i in 0..nb {
                        axpy(dt, &p.model.noise[i].at(k).apply(&mp.chi[i][node]), &mut e);
                    }
                    e
                });
                p.solver.backward_step(k, &mp.predictable[node], p.forcing.at(k, node), extra.as_deref())
            })
            .collect::<Result<Vec<_>>>()?;
        u[k] = vals;
        for (i, c) in mp.chi.into_iter().enumerate() {
            chi[i][k] = c;
        }
    }
    Ok(SpdeSolution {
        direction: Direction::Backward,
        u: AdaptedField::from_steps(m, u),
        chi: chi.into_iter().map(|c| AdaptedField::from_steps(m, c)).collect(),
        reconstruction_residual: recon.as_f64(),
    })
}

/// Residual of the one-step identity along the edge `(k, node) → branch`.
fn edge_residual<T: Real>(
    sol: &SpdeSolution<T>,
    p: &SpdeProblem<T>,
    lat: &NoiseLattice<T>,
    k: usize,
    node: usize,
    branch: usize,
) -> Vec<T> {
    let theta = p.theta();
    let dt = lat.times().dt(k);
    let c = lat.child(k, node, branch);
    let (uk, un) = (sol.u.at(k, node), sol.u.at(k + 1, c));
    let gen = &p.model.generator;
    let mut r: Vec<T> = un.iter().zip(uk).map(|(a, b)| *a - *b).collect();
    let phi = p.forcing.at(k, node);
    match sol.direction {
        Direction::Forward => {
            if let Some(phi) = phi {
                axpy(-dt, phi, &mut r);
            }
            axpy(-theta * dt, &gen.at(k + 1).apply(un), &mut r);
            axpy(-(T::one() - theta) * dt, &gen.at(k).apply(uk), &mut r);
            if let Some(noise) = p.forward_noise(lat, k, node, branch, uk) {
                axpy(-T::one(), &noise, &mut r);
            }
        }
        Direction::Backward => {
            // u_k = u_{k+1} + Δτ(θA_k u_k + (1-θ)A_{k+1} E_k u_{k+1} + φ_k + Σ B_i χ_i) - Σ χ_i Δw_i
            axpy(theta * dt, &gen.at(k).apply(uk), &mut r);
            if theta != T::one() {
                let mean = crate::lattice::one_step_expectation(lat, k, sol.u.step(k + 1));
                axpy((T::one() - theta) * dt, &gen.at(k + 1).apply(&mean[node]), &mut r);
            }
            if let Some(phi) = phi {
                axpy(dt, phi, &mut r);
            }
            for (i, chi) in sol.chi.iter().enumerate() {
                let x = chi.at(k, node);
                if i < p.model.noise_components() {
                    axpy(dt, &p.model.noise[i].at(k).apply(x), &mut r);
                }
                axpy(-lat.increment(k, branch, i), x, &mut r);
            }
        }
    }
    r
}

/// Largest discrete `H⁰` residual of the integral identity between knots
/// `k1 < k2`, over every lattice path segment.
///
/// Path segments are enumerated exhaustively up to `PATH_GUARD`; beyond
/// that the triangle-inequality bound (sum of per-step maxima) is returned.
pub fn definition_residual<T: Real>(
    sol: &SpdeSolution<T>,
    p: &SpdeProblem<T>,
    lat: &NoiseLattice<T>,
    k1: usize,
    k2: usize,
) -> Result<f64> {
    if k1 >= k2 || k2 > sol.u.last_step() {
        return Err(Error::StepOutOfRange { step: k2, detail: format!("need {k1} < {k2} <= {}", sol.u.last_step()) });
    }
    let norms = DiscreteNorms::new(&p.model.grid)?;
    let edges: Vec<Vec<Vec<Vec<T>>>> = (k1..k2)
        .map(|k| {
            (0..lat.nodes_at(k))
                .map(|node| (0..lat.branches()).map(|b| edge_residual(sol, p, lat, k, node, b)).collect())
                .collect()
        })
        .collect();
    let paths = (lat.branches() as f64).powi((k2 - k1) as i32) * lat.nodes_at(k1) as f64;
    if paths > PATH_GUARD as f64 {
        let bound: f64 = edges
            .iter()
            .map(|step| step.iter().flatten().map(|r| norms.h0(r).as_f64()).fold(0.0, f64::max))
            .sum();
        return Ok(bound);
    }
    let mut worst = 0.0f64;
    let m = p.model.len();
    let mut acc = vec![vec![T::zero(); m]; k2 - k1 + 1];
    fn walk<T: Real>(
        lat: &NoiseLattice<T>,
        edges: &[Vec<Vec<Vec<T>>>],
        k1: usize,
        depth: usize,
        node: usize,
        acc: &mut Vec<Vec<T>>,
        norms: &DiscreteNorms<T>,
        worst: &mut f64,
    ) {
        if depth == edges.len() {
            *worst = worst.max(norms.h0(&acc[depth]).as_f64());
            return;
        }
        for b in 0..lat.branches() {
            let (head, tail) = acc.split_at_mut(depth + 1);
            for ((t, h), e) in tail[0].iter_mut().zip(&head[depth]).zip(&edges[depth][node][b]) {
                *t = *h + *e;
            }
            walk(lat, edges, k1, depth + 1, lat.child(k1 + depth, node, b), acc, norms, worst);
        }
    }
    for start in 0..lat.nodes_at(k1) {
        walk(lat, &edges, k1, 0, start, &mut acc, &norms, &mut worst);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::{CoefficientSet, Grid, TimeGrid};
    use std::f64::consts::PI;

    fn single_node_problem(noise: bool) -> (SpdeProblem<f64>, NoiseLattice<f64>) {
        let g = Grid::coarse(&[(0.0, PI, 1)]).unwrap();
        let tg = TimeGrid::uniform(1.0, 1).unwrap();
        let mut c = CoefficientSet::heat(1, 1.0);
        if noise {
            c = c.with_noise(|_, _| [0.0, 0.0], |_, _| 0.0);
        }
        let model = Model::new(c, g, tg.clone()).unwrap();
        (SpdeProblem::new(model, 1.0).unwrap(), NoiseLattice::new(1, &tg).unwrap())
    }

    const SCALAR: f64 = 1.0 / (1.0 + 8.0 / (PI * PI));

    #[test]
    fn backward_single_node_examples() {
        let (p, lat) = single_node_problem(true);
        let s = solve_backward_spde(&p, &[vec![-1.0], vec![1.0]], &lat).unwrap();
        assert!(s.initial()[0].abs() < 1e-15);
        assert!((s.chi[0].at(0, 0)[0] - 1.0).abs() < 1e-15);
        let p = p.with_forcing(Forcing::Deterministic(vec![vec![1.0], vec![1.0]]));
        let s = solve_backward_spde(&p, &[vec![1.0], vec![1.0]], &lat).unwrap();
        assert!((s.initial()[0] - 2.0 * SCALAR).abs() < 1e-14);
        assert!((s.initial()[0] - 1.10462).abs() < 1e-5);
        assert_eq!(s.chi[0].at(0, 0)[0], 0.0);
        assert!(definition_residual(&s, &p, &lat, 0, 1).unwrap() < 1e-14);
    }

    #[test]
    fn zero_data_zero_solution() {
        let (p, lat) = single_node_problem(true);
        let s = solve_backward_spde(&p, &[vec![0.0], vec![0.0]], &lat).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
        let f = solve_forward_spde(&p, &[0.0], &lat).unwrap();
        assert_eq!(f.u.max_abs(), 0.0);
    }

    #[test]
    fn mismatched_lattice_is_rejected() {
        let (p, _) = single_node_problem(true);
        let other = NoiseLattice::new(2, &TimeGrid::uniform(1.0, 1).unwrap()).unwrap();
        assert!(solve_forward_spde(&p, &[1.0], &other).is_err());
        let (p, lat) = single_node_problem(true);
        assert!(solve_backward_spde(&p, &[vec![1.0]], &lat).is_err());
    }

    #[test]
    fn multiplicative_forward_noise_needs_a_tree() {
        let g = Grid::interval(0.0, PI, 7).unwrap();
        let tg = TimeGrid::uniform(1.0, 3).unwrap();
        let c = CoefficientSet::<f64>::heat(1, 1.0).with_noise(|x, _| [0.3 * x[0].sin(), 0.0], |_, _| 0.2);
        let model = Model::new(c, g.clone(), tg.clone()).unwrap();
        let p = SpdeProblem::new(model, 1.0).unwrap();
        let u0 = g.sample(|x| x[0].sin());
        let rec = NoiseLattice::new(1, &tg).unwrap();
        assert!(matches!(solve_forward_spde(&p, &u0, &rec), Err(Error::PathDependent { .. })));
        let tree = NoiseLattice::tree(1, &tg).unwrap();
        let s = solve_forward_spde(&p, &u0, &tree).unwrap();
        assert!(definition_residual(&s, &p, &tree, 0, 3).unwrap() < 1e-12);
        assert!(definition_residual(&s, &p, &tree, 1, 3).unwrap() < 1e-12);
    }
}
