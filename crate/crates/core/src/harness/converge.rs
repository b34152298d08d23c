use std::f64::consts::PI;
use std::fs::{self, File};
use std::path::Path;

use serde::Serialize;

use crate::cauchy::{energy_report_first, energy_report_second, Direction, Trajectory};
use crate::discretization::{DiscreteNorms, Grid};
use crate::error::{Error, Result};

use super::config::{ExperimentConfig, FieldSpec, ProblemKind, Refine};
use super::run::{build_model, datum_and_forcing, engine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reference {
    /// Closed-form single-mode solution.
    Eigenmode,
    /// The finest level, compared on the shared nodes.
    Finest,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub nodes: usize,
    pub steps: usize,
    /// `max_k ‖u_k − u_ref(t_k)‖_{H⁰}`; `None` for the finest level when it
    /// is the reference.
    pub error: Option<f64>,
    /// `log2` of the error ratio to the previous level.
    pub order: Option<f64>,
    pub energy_first: f64,
    pub energy_second: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub reference: Reference,
    pub refine: Refine,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_writer(File::create(path)?);
        w.write_record(["level", "nodes", "steps", "error", "order", "energy_first", "energy_second"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.level.to_string(),
                r.nodes.to_string(),
                r.steps.to_string(),
                opt(r.error),
                opt(r.order),
                r.energy_first.to_string(),
                r.energy_second.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn constant(f: &FieldSpec) -> Option<f64> {
    match f {
        FieldSpec::Constant { value } => Some(value.value()),
        _ => None,
    }
}

/// `u(x, t)` for a single sine mode of constant-coefficient heat flow, when
/// the config is such an instance.
fn eigen_oracle(cfg: &ExperimentConfig) -> Option<impl Fn(&Grid<f64>, f64) -> Vec<f64>> {
    let c = cfg.coefficients.as_ref()?;
    let data = cfg.data.as_ref()?;
    let b = constant(&c.diffusion)?;
    let off = c.diffusion_offdiag.as_ref().map_or(Some(0.0), constant)?;
    let lam = c.potential.as_ref().map_or(Some(0.0), constant)?;
    if off != 0.0 || !c.noise.is_empty() || c.drift.iter().any(|d| constant(d) != Some(0.0)) {
        return None;
    }
    if data.forcing.is_some() || cfg.condition.kernel.is_some() {
        return None;
    }
    let FieldSpec::SineMode { amplitude, modes, rate } = &data.datum else { return None };
    if rate.as_ref().is_some_and(|r| r.value() != 0.0) {
        return None;
    }
    let grid = cfg.grid.as_ref()?;
    if modes.len() != grid.axes.len() {
        return None;
    }
    let mut rate = lam;
    for (ax, &m) in grid.axes.iter().zip(modes) {
        let k = m as f64 * PI / (ax.hi.value() - ax.lo.value());
        rate -= b * k * k;
    }
    let horizon = cfg.time.horizon.value();
    let direction = cfg.kind.direction();
    let decay = move |t: f64| match direction {
        Direction::Forward => (rate * t).exp(),
        Direction::Backward => (rate * (horizon - t)).exp(),
    };
    let kappa = cfg.condition.kappa.as_ref().map_or(0.0, |k| k.value());
    let mut denom = 1.0 - kappa * (rate * horizon).exp();
    for m in &cfg.condition.masses {
        denom -= m.weight.value() * decay(m.time.value());
    }
    let a = amplitude.value() / denom;
    let lo: Vec<f64> = grid.axes.iter().map(|ax| ax.lo.value()).collect();
    let len: Vec<f64> = grid.axes.iter().map(|ax| ax.hi.value() - ax.lo.value()).collect();
    let modes = modes.clone();
    Some(move |g: &Grid<f64>, t: f64| {
        let s = a * decay(t);
        g.sample(|x| {
            (0..modes.len()).map(|i| (modes[i] as f64 * PI * (x[i] - lo[i]) / len[i]).sin()).product::<f64>() * s
        })
    })
}

struct Level {
    grid: Grid<f64>,
    traj: Trajectory<f64>,
    energy: (f64, f64),
}

fn refine_config(cfg: &ExperimentConfig, level: usize, refine: Refine) -> ExperimentConfig {
    let mut c = cfg.clone();
    let l = level as u32;
    if refine != Refine::Time {
        c.grid = cfg.grid.as_ref().map(|g| g.refined(l));
    }
    if refine != Refine::Space {
        c.time.steps = cfg.time.steps << l;
    }
    c
}

fn solve_level(cfg: &ExperimentConfig) -> Result<Level> {
    let (model, times) = build_model(cfg)?;
    let (xi, forcing) = datum_and_forcing(cfg, &model.grid, &times)?;
    let (traj, _) = engine(cfg, &model)?.solve_pde(forcing.as_deref(), &xi, &cfg.solver.options())?;
    let norms = DiscreteNorms::new(&model.grid)?;
    let energy = (
        energy_report_first(&traj, &norms, forcing.as_deref(), &xi).ratio,
        energy_report_second(&traj, &norms, forcing.as_deref(), &xi).ratio,
    );
    Ok(Level { grid: model.grid, traj, energy })
}

fn h0_error(grid: &Grid<f64>, traj: &Trajectory<f64>, reference: impl Fn(usize, f64) -> Result<Vec<f64>>) -> Result<f64> {
    let norms = DiscreteNorms::new(grid)?;
    let mut worst = 0.0f64;
    for (k, &t) in traj.times.knots().iter().enumerate() {
        let r = reference(k, t)?;
        let d: Vec<f64> = traj.values[k].iter().zip(&r).map(|(a, b)| a - b).collect();
        worst = worst.max(norms.h0(&d));
    }
    Ok(worst)
}

/// Solves the configured deterministic problem on `levels` successively
/// refined discretizations and tabulates the errors and observed orders.
///
/// Constant-coefficient heat flow started from a single sine mode is
/// measured against its closed form; anything else against the finest
/// level, whose knots and nodes contain those of every coarser level.
/// Writes `convergence.csv` to `out` when given.
pub fn convergence_study(cfg: &ExperimentConfig, levels: Option<usize>, out: Option<&Path>) -> Result<ConvergenceTable> {
    if !matches!(cfg.kind, ProblemKind::ForwardPde | ProblemKind::BackwardPde) {
        return Err(Error::Config(format!("convergence studies need a deterministic kind, got {:?}", cfg.kind)));
    }
    let spec = cfg.convergence.clone().unwrap_or(super::config::ConvergenceSpec { levels: 3, refine: Refine::Both });
    let levels = levels.unwrap_or(spec.levels);
    if levels < 2 {
        return Err(Error::Config("a convergence study needs at least 2 levels".into()));
    }
    let solved =
        (0..levels).map(|l| solve_level(&refine_config(cfg, l, spec.refine))).collect::<Result<Vec<_>>>()?;
    let oracle = eigen_oracle(cfg);
    let reference = if oracle.is_some() { Reference::Eigenmode } else { Reference::Finest };
    let finest = solved.last().expect("levels >= 2");
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for (l, lv) in solved.iter().enumerate() {
        let error = match &oracle {
            Some(f) => Some(h0_error(&lv.grid, &lv.traj, |_, t| Ok(f(&lv.grid, t)))?),
            None if l + 1 == levels => None,
            None => Some(h0_error(&lv.grid, &lv.traj, |_, t| {
                let k = finest.traj.times.knot_index(t).ok_or(Error::NotAKnot { t })?;
                let fine = &finest.traj.values[k];
                Ok(lv.grid.sample(|x| finest.grid.interpolate(fine, x)))
            })?),
        };
        let order = match (rows.last().and_then(|r| r.error), error) {
            (Some(prev), Some(e)) if prev > 0.0 && e > 0.0 => Some((prev / e).log2()),
            _ => None,
        };
        rows.push(ConvergenceRow {
            level: l,
            nodes: lv.grid.len(),
            steps: lv.traj.times.steps(),
            error,
            order,
            energy_first: lv.energy.0,
            energy_second: lv.energy.1,
        });
    }
    let table = ConvergenceTable { reference, refine: spec.refine, rows };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        table.write_csv(&dir.join("convergence.csv"))?;
    }
    Ok(table)
}
