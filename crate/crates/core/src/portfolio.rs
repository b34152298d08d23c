//! Barrier-corridor portfolio: a stock `dS = S(a dt + σ dw + σ~ dw~)` on
//! `D = (s_L, s_U)`, the hedge field from the periodic backward problem
//! `u(·,T) = u(·,0) + ξ`, and the wealth `X(t) = u(S(t∧τ), t∧τ)`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cauchy::Direction;
use crate::discretization::{check_coercivity, CoefficientSet, CoercivityReport, Grid, Model, OperatorForm, TimeGrid};
use crate::error::{Error, Result};
use crate::fk::{martingale_test_spde, snapped_node, FkPathBatch, MartingaleReport};
use crate::lattice::NoiseLattice;
use crate::nonlocal::{NonlocalCondition, NonlocalDatum, NonlocalEngine, SolveOptions, SolveReport, SolveVerdict, VerdictStatus};
use crate::spde::{Forcing, SpdeSolution};

/// Payoff increment `ξ`.
#[derive(Clone)]
pub enum Payoff {
    Zero,
    /// `ξ(x, w(T))`, evaluated at every leaf of the lattice.
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// Grid values per leaf.
    Leaves(Vec<Vec<f64>>),
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("Zero"),
            Self::Function(_) => f.write_str("Function(..)"),
            Self::Leaves(l) => write!(f, "Leaves({})", l.len()),
        }
    }
}

impl Payoff {
    /// `amplitude · sin(π (x − s_L)/(s_U − s_L))`.
    pub fn sine(amplitude: f64, lower: f64, upper: f64) -> Self {
        Self::Function(Arc::new(move |x, _| amplitude * (std::f64::consts::PI * (x - lower) / (upper - lower)).sin()))
    }

    pub fn function(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        match self {
            Self::Zero => Self::Zero,
            Self::Function(f) => {
                let f = f.clone();
                Self::Function(Arc::new(move |x, w| alpha * f(x, w)))
            }
            Self::Leaves(l) => Self::Leaves(l.iter().map(|v| v.iter().map(|x| alpha * x).collect()).collect()),
        }
    }
}

/// Market under the martingale measure unless `appreciation` is set;
/// the bond is constant (`r = 0`).
#[derive(Debug, Clone)]
pub struct MarketParams {
    pub sigma: f64,
    pub sigma_tilde: f64,
    /// Drift `a`; only used by the price simulator.
    pub appreciation: f64,
    pub s0: f64,
    pub lower: f64,
    pub upper: f64,
    pub horizon: f64,
    pub payoff: Payoff,
}

/// Barrier tolerance for `ξ(s_L) = ξ(s_U) = 0`.
const BARRIER_TOL: f64 = 1e-12;

impl MarketParams {
    pub fn new(sigma: f64, sigma_tilde: f64, s0: f64, lower: f64, upper: f64, horizon: f64) -> Self {
        Self { sigma, sigma_tilde, appreciation: 0.0, s0, lower, upper, horizon, payoff: Payoff::Zero }
    }

    pub fn with_payoff(mut self, payoff: Payoff) -> Self {
        self.payoff = payoff;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.sigma, self.sigma_tilde, self.appreciation, self.s0, self.lower, self.upper, self.horizon];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::Market("parameters must be finite".into()));
        }
        if self.sigma < 0.0 || self.sigma_tilde < 0.0 {
            return Err(Error::Market("volatilities must be non-negative".into()));
        }
        if !(0.0 < self.lower && self.lower < self.s0 && self.s0 < self.upper) {
            return Err(Error::Market(format!(
                "need 0 < s_L < S(0) < s_U, got s_L={}, S(0)={}, s_U={}",
                self.lower, self.s0, self.upper
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Market("horizon must be positive".into()));
        }
        Ok(())
    }

    /// `b = ½(σ² + σ~²)x²`, `β = σx`, non-divergence form, margin
    /// `½σ~² s_L²`.
    pub fn coefficients(&self) -> CoefficientSet<f64> {
        let (s, st) = (self.sigma, self.sigma_tilde);
        let var = 0.5 * (s * s + st * st);
        CoefficientSet::new(1)
            .with_form(OperatorForm::NonDivergence)
            .with_scalar_diffusion(move |x, _| var * x[0] * x[0])
            .with_noise(move |x, _| [s * x[0], 0.0], |_, _| 0.0)
            .with_delta(0.5 * st * st * self.lower * self.lower)
    }

    /// Grid with `m` interior nodes on the corridor.
    pub fn grid(&self, m: usize) -> Result<Grid<f64>> {
        Grid::interval(self.lower, self.upper, m)
    }

    /// `ξ` at every leaf, checked to vanish at the barriers.
    pub fn payoff_leaves(&self, grid: &Grid<f64>, lat: &NoiseLattice<f64>) -> Result<Vec<Vec<f64>>> {
        let k = lat.steps();
        let leaves = lat.nodes_at(k);
        match &self.payoff {
            Payoff::Zero => Ok(vec![vec![0.0; grid.len()]; leaves]),
            Payoff::Function(f) => (0..leaves)
                .map(|leaf| {
                    let w = lat.w(k, leaf, 0);
                    for b in [self.lower, self.upper] {
                        let v = f(b, w);
                        if !(v.abs() <= BARRIER_TOL) {
                            return Err(Error::Market(format!("payoff is {v:e} at barrier {b} (leaf {leaf})")));
                        }
                    }
                    Ok(grid.sample(|x| f(x[0], w)))
                })
                .collect(),
            Payoff::Leaves(l) => {
                if l.len() != leaves || l.iter().any(|v| v.len() != grid.len()) {
                    return Err(Error::Shape(format!("payoff needs {leaves} leaves of length {}", grid.len())));
                }
                Ok(l.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct HedgeSolution {
    pub model: Model<f64>,
    pub solution: SpdeSolution<f64>,
    pub xi: Vec<Vec<f64>>,
    pub verdict: SolveVerdict,
    pub coercivity: CoercivityReport,
    pub report: SolveReport,
}

/// Solves the periodic backward problem `u(·,T) = u(·,0) + ξ` for the
/// market generator on the lattice.
pub fn solve_hedge_spde(
    mp: &MarketParams,
    grid: &Grid<f64>,
    times: &TimeGrid<f64>,
    lat: &NoiseLattice<f64>,
    theta: f64,
    options: &SolveOptions,
) -> Result<HedgeSolution> {
    mp.validate()?;
    if (times.horizon() - mp.horizon).abs() > 1e-12 * mp.horizon {
        return Err(Error::Market(format!("time grid ends at {}, market horizon is {}", times.horizon(), mp.horizon)));
    }
    if lat.components() != 1 {
        return Err(Error::Shape("the market lattice has one noise component".into()));
    }
    let coeffs = mp.coefficients();
    let coercivity = check_coercivity(&coeffs, grid, times, 0, 0);
    if !coercivity.pass {
        return Err(Error::Coercivity { margin: coercivity.margin });
    }
    let xi = mp.payoff_leaves(grid, lat)?;
    let model = Model::new(coeffs, grid.clone(), times.clone())?;
    let engine = NonlocalEngine::new(model.clone(), theta, &NonlocalCondition::kappa(Direction::Backward, 1.0))?;
    let verdict = engine.verdict();
    if verdict.status == VerdictStatus::SingularDetected {
        return Err(Error::Singular { min_sigma: verdict.evidence.min_sigma });
    }
    let (solution, report) =
        engine.solve_spde(lat, Forcing::Zero, Vec::new(), &NonlocalDatum::Leaves(xi.clone()), options)?;
    Ok(HedgeSolution { model, solution, xi, verdict, coercivity, report })
}

/// `max |u(x,T,leaf) − u(x,0) − ξ(x,leaf)|` over nodes and leaves.
pub fn stagnation_check(u: &SpdeSolution<f64>, xi: &[Vec<f64>]) -> Result<f64> {
    let k = u.u.last_step();
    let start = u.initial();
    if xi.len() != u.u.step(k).len() {
        return Err(Error::Shape(format!("{} payoff leaves for {} lattice leaves", xi.len(), u.u.step(k).len())));
    }
    let mut worst = 0.0f64;
    for (leaf, x) in xi.iter().enumerate() {
        for ((e, s), v) in u.u.at(k, leaf).iter().zip(start).zip(x) {
            worst = worst.max((e - s - v).abs());
        }
    }
    Ok(worst)
}

/// Simulated prices at the knots, frozen after leaving the corridor.
#[derive(Debug, Clone)]
pub struct MarketPaths {
    pub batch: FkPathBatch,
}

impl MarketPaths {
    pub fn paths(&self) -> usize {
        self.batch.paths
    }

    pub fn price(&self, path: usize, knot: usize) -> f64 {
        self.batch.state(path, knot)[0]
    }

    pub fn exit_time(&self, path: usize) -> f64 {
        self.batch.exit_time[path]
    }

    pub fn exit_fraction(&self) -> f64 {
        self.batch.exit_fraction()
    }
}

/// Log-Euler simulation of the price with `substeps` per step; the exit
/// from the corridor is checked after every substep.
pub fn simulate_market(
    mp: &MarketParams,
    paths: usize,
    times: &TimeGrid<f64>,
    seed: u64,
    substeps: usize,
) -> Result<MarketPaths> {
    mp.validate()?;
    if substeps == 0 {
        return Err(Error::Config("substeps must be positive".into()));
    }
    let steps = times.steps();
    let var = mp.sigma * mp.sigma + mp.sigma_tilde * mp.sigma_tilde;
    let drift = mp.appreciation - 0.5 * var;
    let one = |p: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(p as u64);
        let mut states = Vec::with_capacity(steps + 1);
        let mut branches = Vec::with_capacity(steps);
        let mut log_s = mp.s0.ln();
        let mut exit = f64::INFINITY;
        states.push([mp.s0, 0.0]);
        for k in 0..steps {
            let dt = times.dt(k) / substeps as f64;
            let sq = dt.sqrt();
            let mut total = 0.0;
            for j in 0..substeps {
                let dw: f64 = sq * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                let dwt: f64 = sq * Distribution::<f64>::sample(&StandardNormal, &mut rng);
                total += dw;
                if exit.is_finite() {
                    continue;
                }
                let bridge: f64 = rng.random();
                let prev = log_s;
                log_s += drift * dt + mp.sigma * dw + mp.sigma_tilde * dwt;
                let s = log_s.exp();
                if !(s > mp.lower && s < mp.upper) {
                    exit = times.knot(k) + (j + 1) as f64 * dt;
                } else {
                    // the log price is a Brownian motion with drift between
                    // substeps, so the bridge crossing probability is exact
                    let (lo, hi) = (mp.lower.ln(), mp.upper.ln());
                    let cross = |w: f64| (-2.0 * (prev - w) * (log_s - w) / (var * dt)).exp();
                    let (pl, ph) = (cross(lo), cross(hi));
                    if bridge >= (1.0 - pl) * (1.0 - ph) {
                        exit = times.knot(k) + (j + 1) as f64 * dt;
                        log_s = if pl >= ph { lo } else { hi };
                    }
                }
            }
            branches.push(u32::from(total > 0.0));
            states.push([log_s.exp(), 0.0]);
        }
        (states, branches, exit)
    };
    let results: Vec<_> = (0..paths).into_par_iter().map(one).collect();
    let mut states = Vec::with_capacity(paths * (steps + 1));
    let mut branches = Vec::with_capacity(paths * steps);
    let mut exits = Vec::with_capacity(paths);
    for (s, b, e) in results {
        states.extend(s);
        branches.extend(b);
        exits.push(e);
    }
    Ok(MarketPaths {
        batch: FkPathBatch::from_states([mp.s0, 0.0], times.knots().to_vec(), seed, substeps, states, branches, exits),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaHedgeStats {
    /// Rebalancing interval in knots (1 = every knot).
    pub stride: usize,
    pub mean: f64,
    pub sd: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HedgeReport {
    pub paths: usize,
    pub x0: f64,
    /// `X(t_k)` for the first `wealth_paths` paths.
    pub wealth: Vec<Vec<f64>>,
    pub martingale: MartingaleReport,
    pub stagnation_residual: f64,
    /// Rebalancing every knot and every second knot.
    pub delta_hedge: Vec<DeltaHedgeStats>,
    pub exit_fraction: f64,
}

fn value_at(u: &SpdeSolution<f64>, lat: &NoiseLattice<f64>, grid: &Grid<f64>, paths: &MarketPaths, p: usize, k: usize) -> f64 {
    grid.interpolate(u.u.at(k, snapped_node(lat, &paths.batch, p, k)), &paths.batch.state(p, k))
}

/// `X(t, x) = u(S(t∧τ), t∧τ)` along the simulated paths, the martingale
/// check of `Ê X(t)` at every knot and the delta-hedge diagnostic.
pub fn wealth_process(
    u: &SpdeSolution<f64>,
    lat: &NoiseLattice<f64>,
    grid: &Grid<f64>,
    xi: &[Vec<f64>],
    paths: &MarketPaths,
    wealth_paths: usize,
) -> Result<HedgeReport> {
    let steps = lat.steps();
    let checkpoints: Vec<usize> = (1..=steps).collect();
    let martingale = martingale_test_spde(u, lat, grid, &paths.batch, &checkpoints)?;
    let wealth = (0..wealth_paths.min(paths.paths()))
        .map(|p| (0..=steps).map(|k| value_at(u, lat, grid, paths, p, k)).collect())
        .collect();
    let delta_hedge = [1, 2].iter().filter(|&&s| steps % s == 0).map(|&s| delta_hedge_residual(u, lat, grid, paths, s)).collect();
    Ok(HedgeReport {
        paths: paths.paths(),
        x0: grid.interpolate(u.initial(), &paths.batch.start),
        wealth,
        stagnation_residual: stagnation_check(u, xi)?,
        martingale,
        delta_hedge,
        exit_fraction: paths.exit_fraction(),
    })
}

/// Self-financing account `dX^ = ∂u/∂x(S, t) dS` rebalanced every
/// `stride` knots, compared with `u(S(T∧τ), T∧τ)`. A diagnostic only:
/// with two drivers and one stock the residual need not vanish.
pub fn delta_hedge_residual(
    u: &SpdeSolution<f64>,
    lat: &NoiseLattice<f64>,
    grid: &Grid<f64>,
    paths: &MarketPaths,
    stride: usize,
) -> DeltaHedgeStats {
    let steps = lat.steps();
    let h = grid.axis(0).h;
    let residuals: Vec<f64> = (0..paths.paths())
        .into_par_iter()
        .map(|p| {
            let mut x = value_at(u, lat, grid, paths, p, 0);
            let mut k = 0;
            while k < steps {
                let next = (k + stride).min(steps);
                let s = paths.price(p, k);
                let field = u.u.at(k, snapped_node(lat, &paths.batch, p, k));
                let delta = (grid.interpolate(field, &[s + h, 0.0]) - grid.interpolate(field, &[s - h, 0.0])) / (2.0 * h);
                x += delta * (paths.price(p, next) - s);
                k = next;
            }
            x - value_at(u, lat, grid, paths, p, steps)
        })
        .collect();
    let n = residuals.len().max(1) as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let max_abs = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    DeltaHedgeStats { stride, mean, sd, max_abs }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> MarketParams {
        MarketParams::new(0.2, 0.2, 1.0, 0.5, 2.0, 1.0).with_payoff(Payoff::sine(0.01, 0.5, 2.0))
    }

    fn solve(mp: &MarketParams) -> (Grid<f64>, NoiseLattice<f64>, HedgeSolution) {
        let grid = mp.grid(31).unwrap();
        let tg = TimeGrid::uniform(1.0, 8).unwrap();
        let lat = NoiseLattice::new(1, &tg).unwrap();
        let h = solve_hedge_spde(mp, &grid, &tg, &lat, 0.5, &SolveOptions::default()).unwrap();
        (grid, lat, h)
    }

    #[test]
    fn rejects_bad_market() {
        assert!(MarketParams::new(0.2, 0.2, 3.0, 0.5, 2.0, 1.0).validate().is_err());
        let bad = MarketParams::new(0.2, 0.2, 1.0, 0.5, 2.0, 1.0).with_payoff(Payoff::function(|x, _| x));
        let grid = bad.grid(7).unwrap();
        let lat = NoiseLattice::new(1, &TimeGrid::uniform(1.0, 2).unwrap()).unwrap();
        assert!(matches!(bad.payoff_leaves(&grid, &lat), Err(Error::Market(_))));
    }

    #[test]
    fn degenerate_volatility_fails_coercivity() {
        let mp = MarketParams::new(0.2, 0.0, 1.0, 0.5, 2.0, 1.0);
        let grid = mp.grid(7).unwrap();
        let tg = TimeGrid::uniform(1.0, 2).unwrap();
        let lat = NoiseLattice::new(1, &tg).unwrap();
        assert!(matches!(
            solve_hedge_spde(&mp, &grid, &tg, &lat, 0.5, &SolveOptions::default()),
            Err(Error::Coercivity { .. })
        ));
    }

    #[test]
    fn zero_payoff_gives_zero() {
        let mp = MarketParams::new(0.2, 0.2, 1.0, 0.5, 2.0, 1.0);
        let (grid, lat, h) = solve(&mp);
        assert_eq!(h.solution.u.max_abs(), 0.0);
        let paths = simulate_market(&mp, 200, &TimeGrid::uniform(1.0, 8).unwrap(), 1, 4).unwrap();
        let r = wealth_process(&h.solution, &lat, &grid, &h.xi, &paths, 5).unwrap();
        assert!(r.wealth.iter().flatten().all(|x| *x == 0.0));
        assert!(r.delta_hedge.iter().all(|d| d.max_abs == 0.0));
        assert_eq!(r.stagnation_residual, 0.0);
    }

    #[test]
    fn sine_payoff_residual_and_linearity() {
        let mp = instance();
        let (_, _, h) = solve(&mp);
        assert_eq!(h.verdict.status, VerdictStatus::GuaranteedKappa);
        assert!(stagnation_check(&h.solution, &h.xi).unwrap() <= 1e-8);
        let (_, _, h2) = solve(&mp.clone().with_payoff(mp.payoff.scaled(2.0)));
        for (a, b) in h.solution.u.step(0)[0].iter().zip(&h2.solution.u.step(0)[0]) {
            assert!((2.0 * a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn frozen_prices_without_volatility() {
        let mp = MarketParams::new(0.0, 0.0, 1.0, 0.5, 2.0, 1.0);
        let p = simulate_market(&mp, 10, &TimeGrid::uniform(1.0, 4).unwrap(), 3, 2).unwrap();
        for path in 0..10 {
            assert!(p.exit_time(path) > 1.0);
            for k in 0..=4 {
                assert!((p.price(path, k) - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn wider_corridor_exits_less() {
        let tg = TimeGrid::uniform(1.0, 8).unwrap();
        let narrow = simulate_market(&MarketParams::new(0.3, 0.3, 1.0, 0.8, 1.25, 1.0), 2000, &tg, 5, 4).unwrap();
        let wide = simulate_market(&MarketParams::new(0.3, 0.3, 1.0, 0.7, 1.4, 1.0), 2000, &tg, 5, 4).unwrap();
        for p in 0..2000 {
            assert!(wide.exit_time(p) >= narrow.exit_time(p));
        }
        assert!(wide.exit_fraction() < narrow.exit_fraction());
    }
}
