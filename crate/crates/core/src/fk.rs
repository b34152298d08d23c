//! Feynman–Kac path simulation for the characteristic diffusion of the
//! generator and the martingale test of `γ(t∧τ) u(y(t∧τ), t∧τ)`.
//!
//! Paths solve `dy = f~ dt + Σ β_i dw_i + Σ β~_j dw~_j` with `β~` the
//! symmetric square root of `2b − Σ β_i β_iᵀ`; the weight is
//! `γ(t) = exp(∫_s^t λ~(y(r), r) dr)`, which makes `γ u(y)` a martingale
//! for solutions of `u_t + A u = 0` with `A = b:D² + f~·∇ + λ~`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cauchy::Trajectory;
use crate::discretization::{CoefficientSet, Grid, Point, TimeGrid};
use crate::error::{Error, Result};
use crate::lattice::NoiseLattice;
use crate::spde::SpdeSolution;

/// Tolerance on negative eigenvalues of `2b − Σ β βᵀ`.
pub const PSD_TOLERANCE: f64 = 1e-12;

const CHUNK: usize = 1024;

/// Symmetric square root of `2b − Σ β_i β_iᵀ` at one point.
pub fn completion(coeffs: &CoefficientSet<f64>, x: &Point<f64>, t: f64) -> Result<[[f64; 2]; 2]> {
    let mut c = (coeffs.diffusion)(x, t);
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v *= 2.0;
        }
    }
    for beta in &coeffs.noise_drift {
        let b = beta(x, t);
        for i in 0..coeffs.dim {
            for j in 0..coeffs.dim {
                c[i][j] -= b[i] * b[j];
            }
        }
    }
    if coeffs.dim == 1 {
        if c[0][0] < -PSD_TOLERANCE {
            return Err(Error::NotPsd { min_eig: c[0][0], x: *x });
        }
        return Ok([[c[0][0].max(0.0).sqrt(), 0.0], [0.0, 0.0]]);
    }
    let off = 0.5 * (c[0][1] + c[1][0]);
    let (a, d) = (c[0][0], c[1][1]);
    let mid = 0.5 * (a + d);
    let rad = (0.5 * (a - d)).hypot(off);
    let min_eig = mid - rad;
    if min_eig < -PSD_TOLERANCE {
        return Err(Error::NotPsd { min_eig, x: *x });
    }
    let det = (a * d - off * off).max(0.0);
    let s = det.sqrt();
    let tau = (a + d + 2.0 * s).max(0.0).sqrt();
    if tau == 0.0 {
        return Ok([[0.0; 2]; 2]);
    }
    Ok([[(a + s) / tau, off / tau], [off / tau, (d + s) / tau]])
}

#[derive(Debug, Clone, Serialize)]
pub struct FkSettings {
    pub paths: usize,
    pub seed: u64,
    /// Euler–Maruyama substeps per time step.
    pub substeps: usize,
}

impl Default for FkSettings {
    fn default() -> Self {
        Self { paths: 10_000, seed: 0, substeps: 8 }
    }
}

/// Euler–Maruyama paths of the characteristic diffusion started at
/// `(x, t_s)`, recorded at the knots `s..=K`.
#[derive(Debug, Clone)]
pub struct FkPathBatch {
    pub start: Point<f64>,
    pub start_knot: usize,
    pub knots: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub substeps: usize,
    pub dim: usize,
    /// Noise components `N` of the `w` driver.
    pub components: usize,
    states: Vec<Point<f64>>,
    gamma: Vec<f64>,
    /// Per path and step `0..K`, the lattice branch nearest to the `w`
    /// increment (bit `i` set when `Δw_i > 0`).
    branches: Vec<u32>,
    /// Exit time, `+∞` for paths that stay in the domain.
    pub exit_time: Vec<f64>,
}

impl FkPathBatch {
    /// Number of recorded knots per path.
    pub fn width(&self) -> usize {
        self.knots.len() - self.start_knot
    }

    fn slot(&self, path: usize, knot: usize) -> usize {
        path * self.width() + knot - self.start_knot
    }

    /// State at global knot `knot` (frozen after exit).
    pub fn state(&self, path: usize, knot: usize) -> Point<f64> {
        self.states[self.slot(path, knot)]
    }

    pub fn gamma(&self, path: usize, knot: usize) -> f64 {
        self.gamma[self.slot(path, knot)]
    }

    pub fn branches(&self, path: usize) -> &[u32] {
        let steps = self.knots.len() - 1;
        &self.branches[path * steps..(path + 1) * steps]
    }

    pub fn exited(&self, path: usize) -> bool {
        self.exit_time[path].is_finite()
    }

    /// Whether the path has left the domain by global knot `knot`.
    pub fn exited_by(&self, path: usize, knot: usize) -> bool {
        self.exit_time[path] <= self.knots[knot]
    }

    /// Fraction of paths that left the domain by `T`.
    pub fn exit_fraction(&self) -> f64 {
        self.exit_time.iter().filter(|t| t.is_finite()).count() as f64 / self.paths as f64
    }

    /// Batch from externally simulated paths with unit weights.
    pub(crate) fn from_states(
        start: Point<f64>,
        knots: Vec<f64>,
        seed: u64,
        substeps: usize,
        states: Vec<Point<f64>>,
        branches: Vec<u32>,
        exit_time: Vec<f64>,
    ) -> Self {
        let paths = exit_time.len();
        Self {
            start,
            start_knot: 0,
            paths,
            seed,
            substeps,
            dim: 1,
            components: 1,
            gamma: vec![1.0; states.len()],
            states,
            branches,
            exit_time,
            knots,
        }
    }
}

struct PathRecord {
    states: Vec<Point<f64>>,
    gamma: Vec<f64>,
    branches: Vec<u32>,
    exit_time: f64,
}

/// Simulates `settings.paths` paths from `x` at knot `s`.
///
/// Exit is checked after every substep against the closed domain, and a
/// Brownian bridge test per wall catches crossings between substeps; the
/// state and the weight are frozen from then on. The `w` driver is also
/// drawn on the steps before `s` so that lattice-valued solutions can be
/// read along every path.
pub fn fk_simulate(
    coeffs: &CoefficientSet<f64>,
    domain: &Grid<f64>,
    times: &TimeGrid<f64>,
    x: Point<f64>,
    s: usize,
    settings: &FkSettings,
) -> Result<FkPathBatch> {
    let steps = times.steps();
    if s > steps {
        return Err(Error::StepOutOfRange { step: s, detail: format!("time grid has {steps} steps") });
    }
    if coeffs.dim != domain.dim() {
        return Err(Error::Shape(format!("coefficients are {}-D, domain {}-D", coeffs.dim, domain.dim())));
    }
    let n = coeffs.noise_components();
    if n > 32 {
        return Err(Error::Shape(format!("{n} noise components exceed the 32 supported by the path record")));
    }
    if settings.substeps == 0 {
        return Err(Error::Config("substeps must be positive".into()));
    }
    // fail fast on coercivity violations at the start point
    completion(coeffs, &x, times.knot(s))?;
    let chunks: Vec<(usize, usize)> =
        (0..settings.paths).step_by(CHUNK).map(|a| (a, (a + CHUNK).min(settings.paths))).collect();
    let records = chunks
        .par_iter()
        .map(|&(a, b)| (a..b).map(|p| simulate_path(coeffs, domain, times, x, s, settings, p)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let width = steps + 1 - s;
    let mut batch = FkPathBatch {
        start: x,
        start_knot: s,
        knots: times.knots().to_vec(),
        paths: settings.paths,
        seed: settings.seed,
        substeps: settings.substeps,
        dim: coeffs.dim,
        components: n,
        states: Vec::with_capacity(settings.paths * width),
        gamma: Vec::with_capacity(settings.paths * width),
        branches: Vec::with_capacity(settings.paths * steps),
        exit_time: Vec::with_capacity(settings.paths),
    };
    for r in records.into_iter().flatten() {
        batch.states.extend(r.states);
        batch.gamma.extend(r.gamma);
        batch.branches.extend(r.branches);
        batch.exit_time.push(r.exit_time);
    }
    Ok(batch)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Brownian-bridge test for an unobserved exit between two interior
/// points `y` and `next`. Per axis and wall the crossing probability is
/// `exp(−2 d_0 d_1 / (2 b_aa Δ))`; returns the crossed wall point when the
/// uniform draw `u` falls below the combined probability.
pub(crate) fn bridge_exit(
    y: &Point<f64>,
    next: &Point<f64>,
    domain: &Grid<f64>,
    b: &[[f64; 2]; 2],
    dt: f64,
    u: f64,
) -> Option<Point<f64>> {
    let mut survive = 1.0;
    let mut best = (0.0, 0, 0.0);
    for a in 0..domain.dim() {
        let var = 2.0 * b[a][a] * dt;
        if var <= 0.0 {
            continue;
        }
        let ax = domain.axis(a);
        for wall in [ax.lo, ax.hi] {
            let p = (-2.0 * (y[a] - wall) * (next[a] - wall) / var).exp();
            survive *= 1.0 - p;
            if p > best.0 {
                best = (p, a, wall);
            }
        }
    }
    (u >= survive).then(|| {
        let mut w = *next;
        w[best.1] = best.2;
        w
    })
}

fn simulate_path(
    coeffs: &CoefficientSet<f64>,
    domain: &Grid<f64>,
    times: &TimeGrid<f64>,
    x: Point<f64>,
    s: usize,
    settings: &FkSettings,
    path: usize,
) -> Result<PathRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(path as u64);
    let dim = coeffs.dim;
    let n = coeffs.noise_components();
    let steps = times.steps();
    let mut rec = PathRecord {
        states: vec![x],
        gamma: vec![1.0],
        branches: Vec::with_capacity(steps),
        exit_time: f64::INFINITY,
    };
    let mut y = x;
    let mut log_gamma = 0.0;
    let mut alive = domain.contains(&y);
    if !alive {
        rec.exit_time = times.knot(s);
    }
    let mut dw = vec![0.0; n];
    let mut dwt = [0.0; 2];
    for k in 0..steps {
        let dt = times.dt(k) / settings.substeps as f64;
        let sq = dt.sqrt();
        let mut total = vec![0.0; n];
        for j in 0..settings.substeps {
            for (d, acc) in dw.iter_mut().zip(total.iter_mut()) {
                *d = sq * normal(&mut rng);
                *acc += *d;
            }
            for v in dwt.iter_mut().take(dim) {
                *v = sq * normal(&mut rng);
            }
            if k < s || !alive {
                continue;
            }
            let t = times.knot(k) + j as f64 * dt;
            let f = coeffs.drift_tilde(&y, t);
            let bt = completion(coeffs, &y, t)?;
            log_gamma += coeffs.lambda_tilde(&y, t) * dt;
            let mut next = y;
            for a in 0..dim {
                next[a] += f[a] * dt;
                for (beta, d) in coeffs.noise_drift.iter().zip(&dw) {
                    next[a] += beta(&y, t)[a] * d;
                }
                for c in 0..dim {
                    next[a] += bt[a][c] * dwt[c];
                }
            }
            let bridge: f64 = rng.random();
            if !domain.contains(&next) {
                alive = false;
                rec.exit_time = t + dt;
            } else if let Some(wall) = bridge_exit(&y, &next, domain, &(coeffs.diffusion)(&y, t), dt, bridge) {
                alive = false;
                rec.exit_time = t + dt;
                next = wall;
            }
            y = next;
        }
        let branch = total.iter().enumerate().fold(0u32, |b, (i, d)| if *d > 0.0 { b | (1 << i) } else { b });
        rec.branches.push(branch);
        if k >= s {
            rec.states.push(y);
            rec.gamma.push(log_gamma.exp());
        }
    }
    Ok(rec)
}

#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub knot: usize,
    pub time: f64,
    /// `m(t) = Ê[γ(t∧τ) u(y(t∧τ), t∧τ)]`.
    pub mean: f64,
    /// Standard error of the paired difference `X(t) − X(s)`.
    pub se: f64,
    pub deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleReport {
    pub paths: usize,
    pub seed: u64,
    pub start_mean: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub max_deviation: f64,
    /// Largest `|m(t) − m(s)| / SE` over the checkpoints.
    pub max_z: f64,
    pub pass: bool,
    /// Gap between the snapped-lattice and the lattice-mean evaluation of
    /// `m(t)`; zero for deterministic solutions.
    pub snap_delta: f64,
    pub exit_fraction: f64,
}

/// Band in standard errors used for the pass flag.
pub const SE_BAND: f64 = 3.0;

fn per_path_values(batch: &FkPathBatch, knots: &[usize], eval: &(impl Fn(usize, usize, &Point<f64>) -> f64 + Sync)) -> Vec<Vec<f64>> {
    let chunks: Vec<(usize, usize)> = (0..batch.paths).step_by(CHUNK).map(|a| (a, (a + CHUNK).min(batch.paths))).collect();
    chunks
        .par_iter()
        .map(|&(a, b)| {
            (a..b)
                .map(|p| knots.iter().map(|&k| batch.gamma(p, k) * eval(p, k, &batch.state(p, k))).collect::<Vec<f64>>())
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn check_knots(batch: &FkPathBatch, checkpoints: &[usize]) -> Result<()> {
    match checkpoints.iter().find(|&&k| k < batch.start_knot || k >= batch.knots.len()) {
        Some(&k) => Err(Error::Checkpoint(k)),
        None => Ok(()),
    }
}

/// Martingale test for an arbitrary field `eval(path, knot, y)`; the
/// value used at `t` is `γ(t∧τ) eval(path, t, y(t∧τ))` (states are frozen
/// after exit).
pub fn martingale_test_with(
    batch: &FkPathBatch,
    checkpoints: &[usize],
    eval: impl Fn(usize, usize, &Point<f64>) -> f64 + Sync,
) -> Result<MartingaleReport> {
    check_knots(batch, checkpoints)?;
    let mut knots = vec![batch.start_knot];
    knots.extend_from_slice(checkpoints);
    let values = per_path_values(batch, &knots, &eval);
    let n = batch.paths as f64;
    let mean_of = |c: usize| values.iter().map(|v| v[c]).sum::<f64>() / n;
    let start_mean = mean_of(0);
    let mut out = Vec::with_capacity(checkpoints.len());
    for (c, &knot) in checkpoints.iter().enumerate() {
        let mean = mean_of(c + 1);
        let dbar = mean - start_mean;
        let var = values.iter().map(|v| (v[c + 1] - v[0] - dbar).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        let deviation = dbar.abs();
        let slack = 1e-12 * (start_mean.abs() + mean.abs()).max(1e-300);
        out.push(Checkpoint { knot, time: batch.knots[knot], mean, se, deviation, pass: deviation <= SE_BAND * se + slack });
    }
    let max_deviation = out.iter().map(|c| c.deviation).fold(0.0, f64::max);
    let max_z = out.iter().map(|c| if c.se > 0.0 { c.deviation / c.se } else { 0.0 }).fold(0.0, f64::max);
    Ok(MartingaleReport {
        paths: batch.paths,
        seed: batch.seed,
        start_mean,
        pass: out.iter().all(|c| c.pass),
        checkpoints: out,
        max_deviation,
        max_z,
        snap_delta: 0.0,
        exit_fraction: batch.exit_fraction(),
    })
}

/// Martingale test for a deterministic solution on `grid`.
pub fn martingale_test(
    u: &Trajectory<f64>,
    grid: &Grid<f64>,
    batch: &FkPathBatch,
    checkpoints: &[usize],
) -> Result<MartingaleReport> {
    if u.values.len() != batch.knots.len() {
        return Err(Error::Shape(format!("solution has {} knots, paths {}", u.values.len(), batch.knots.len())));
    }
    martingale_test_with(batch, checkpoints, |_, k, y| grid.interpolate(&u.values[k], y))
}

/// Lattice node reached by a path at step `k`.
pub fn snapped_node(lat: &NoiseLattice<f64>, batch: &FkPathBatch, path: usize, k: usize) -> usize {
    let br = batch.branches(path);
    (0..k).fold(0, |node, m| lat.child(m, node, br[m] as usize))
}

/// Martingale test for a lattice solution; each path reads `u` at the
/// lattice node nearest to its own `w` increments.
pub fn martingale_test_spde(
    u: &SpdeSolution<f64>,
    lat: &NoiseLattice<f64>,
    grid: &Grid<f64>,
    batch: &FkPathBatch,
    checkpoints: &[usize],
) -> Result<MartingaleReport> {
    if lat.components() != batch.components || lat.steps() + 1 != batch.knots.len() {
        return Err(Error::Shape("lattice does not match the path batch".into()));
    }
    let mut report = martingale_test_with(batch, checkpoints, |p, k, y| {
        grid.interpolate(u.u.at(k, snapped_node(lat, batch, p, k)), y)
    })?;
    let means = u.mean_trajectory(lat)?;
    let baseline = martingale_test_with(batch, checkpoints, |_, k, y| grid.interpolate(&means[k], y))?;
    report.snap_delta = report
        .checkpoints
        .iter()
        .zip(&baseline.checkpoints)
        .map(|(a, b)| (a.mean - b.mean).abs())
        .fold((report.start_mean - baseline.start_mean).abs(), f64::max);
    Ok(report)
}
