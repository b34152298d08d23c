use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::cauchy::{energy_report_first, energy_report_second, Direction};
use crate::discretization::{DiscreteNorms, Grid, Model, TimeGrid};
use crate::duality::duality_residual;
use crate::error::{Error, Result};
use crate::fk::{fk_simulate, martingale_test, FkSettings};
use crate::lattice::{LatticeDump, NoiseLattice};
use crate::nonlocal::{CheckOutcome, NonlocalDatum, NonlocalEngine, SolveReport, SolveVerdict, VerdictStatus};
use crate::portfolio::{simulate_market, solve_hedge_spde, wealth_process, MarketParams, Payoff};
use crate::spde::Forcing;

use super::config::{ExperimentConfig, ProblemKind};

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    /// Solved, but no sufficient condition certifies uniqueness.
    NotGuaranteed,
    Singular,
    ResidualBreach,
    ConfigError,
    Failure,
}

impl RunStatus {
    pub fn code(self) -> i32 {
        match self {
            Self::Ok => 0,
            Self::Failure => 1,
            Self::NotGuaranteed => 2,
            Self::Singular => 3,
            Self::ResidualBreach => 4,
            Self::ConfigError => 5,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Config(_) => Self::ConfigError,
            Error::Singular { .. } => Self::Singular,
            _ => Self::Failure,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub kind: ProblemKind,
    pub status: RunStatus,
    pub exit_code: i32,
    pub config: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<SolveVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveReport>,
    /// Max-norm residual of the non-local condition (or of the stagnation
    /// identity for hedges).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub details: Value,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub report: RunReport,
    /// Files written, in the order they were produced.
    pub artifacts: Vec<PathBuf>,
}

/// Marks errors met while building the problem from the config.
fn setup<T>(r: Result<T>, what: &str) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config(_) => e,
        other => Error::Config(format!("{what}: {other}")),
    })
}

struct Outputs {
    dir: Option<PathBuf>,
    csv: bool,
    written: Vec<PathBuf>,
}

impl Outputs {
    fn csv(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        let Some(dir) = &self.dir else { return Ok(()) };
        let path = dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        write(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        self.written.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect()
    }
}

struct Solved {
    verdict: Option<SolveVerdict>,
    solve: Option<SolveReport>,
    residual: Option<f64>,
    details: Value,
    /// Extra residual checked against the tolerance (duality probe).
    extra_residual: Option<f64>,
}

fn status_of(cfg: &ExperimentConfig, s: &Solved) -> RunStatus {
    let tol = cfg.solver.residual_tol.value();
    let breach = |r: Option<f64>| r.is_some_and(|r| !(r <= tol));
    if breach(s.residual) || breach(s.extra_residual) {
        return RunStatus::ResidualBreach;
    }
    match &s.verdict {
        Some(v) if v.status == VerdictStatus::SingularDetected => RunStatus::Singular,
        // A κ outside the certified range is flagged even when a weaker
        // certificate (small ‖Q‖) still applies.
        Some(v) if !v.is_guaranteed() || v.kappa_check == CheckOutcome::NotGuaranteed => RunStatus::NotGuaranteed,
        _ => RunStatus::Ok,
    }
}

/// Runs one experiment, writing `report.json` and the CSV artifacts to
/// `out` (or the configured output directory) when one is given.
///
/// Errors while reading the config or building the problem come back as
/// `Error::Config`. A singular `I − Q` is not an error: the report then
/// carries status `Singular`.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let dir = out.map(Path::to_path_buf).or_else(|| cfg.output.dir.as_ref().map(|d| cfg.base_dir.join(d)));
    if let Some(d) = &dir {
        fs::create_dir_all(d)?;
    }
    let mut outputs = Outputs { dir, csv: cfg.output.csv, written: Vec::new() };
    let result = match cfg.kind {
        ProblemKind::ForwardPde | ProblemKind::BackwardPde => run_pde(cfg, &mut outputs),
        ProblemKind::ForwardSpde | ProblemKind::BackwardSpde => run_spde(cfg, &mut outputs),
        ProblemKind::Hedge => run_hedge(cfg, &mut outputs),
        ProblemKind::Probe => run_probe(cfg, &mut outputs),
    };
    let (status, solved, error) = match result {
        Ok(s) => (status_of(cfg, &s), s, None),
        Err(e @ Error::Singular { .. }) => {
            let verdict = singular_verdict(cfg).ok();
            let s = Solved { verdict, solve: None, residual: None, details: Value::Null, extra_residual: None };
            (RunStatus::Singular, s, Some(e.to_string()))
        }
        Err(e) => return Err(e),
    };
    let mut report = RunReport {
        kind: cfg.kind,
        status,
        exit_code: status.code(),
        config: cfg.clone(),
        verdict: solved.verdict,
        solve: solved.solve,
        boundary_residual: solved.residual,
        error,
        details: solved.details,
        artifacts: outputs.names(),
    };
    if let Some(d) = &outputs.dir {
        let path = d.join("report.json");
        report.artifacts.push("report.json".into());
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, &report)?;
        writeln!(w)?;
        w.flush()?;
        outputs.written.push(path);
    }
    Ok(RunOutcome { status, report, artifacts: outputs.written })
}

/// Verdict of the configured deterministic problem, recomputed for the
/// report of a singular run.
fn singular_verdict(cfg: &ExperimentConfig) -> Result<SolveVerdict> {
    let (model, _) = build_model(cfg)?;
    let cond = cfg.condition.build(cfg.kind.direction(), &model.grid, &model.times, &cfg.base_dir)?;
    Ok(NonlocalEngine::new(model, cfg.solver.theta.value(), &cond)?.verdict())
}

pub(crate) fn build_model(cfg: &ExperimentConfig) -> Result<(Model<f64>, TimeGrid<f64>)> {
    let grid = setup(cfg.require(&cfg.grid, "grid")?.build(), "grid")?;
    let times = setup(cfg.time.build(), "time")?;
    let coeffs = setup(cfg.require(&cfg.coefficients, "coefficients")?.build(&grid, &cfg.base_dir), "coefficients")?;
    let model = setup(Model::new(coeffs, grid, times.clone()), "coefficients")?;
    Ok((model, times))
}

pub(crate) fn engine(cfg: &ExperimentConfig, model: &Model<f64>) -> Result<NonlocalEngine<f64>> {
    let cond = setup(cfg.condition.build(cfg.kind.direction(), &model.grid, &model.times, &cfg.base_dir), "condition")?;
    let e = NonlocalEngine::new(model.clone(), cfg.solver.theta.value(), &cond);
    match e {
        Err(err @ (Error::Condition(_) | Error::NotAKnot { .. } | Error::DenseGuard { .. } | Error::Shape(_))) => {
            Err(Error::Config(format!("condition: {err}")))
        }
        other => other,
    }
}

pub(crate) fn datum_and_forcing(cfg: &ExperimentConfig, grid: &Grid<f64>, times: &TimeGrid<f64>) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>)> {
    let data = cfg.require(&cfg.data, "data")?;
    let t = match cfg.kind.direction() {
        Direction::Forward => 0.0,
        Direction::Backward => times.horizon(),
    };
    let xi = setup(data.datum.sample(grid, &cfg.base_dir, t), "data.datum")?;
    let forcing = match &data.forcing {
        None => None,
        Some(f) => Some(
            (0..times.steps())
                .map(|k| f.sample(grid, &cfg.base_dir, times.knot(k)))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::Config(format!("data.forcing: {e}")))?,
        ),
    };
    Ok((xi, forcing))
}

fn run_pde(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Solved> {
    let (model, times) = build_model(cfg)?;
    let (xi, forcing) = datum_and_forcing(cfg, &model.grid, &times)?;
    let engine = engine(cfg, &model)?;
    let verdict = engine.verdict();
    let (tr, report) = engine.solve_pde(forcing.as_deref(), &xi, &cfg.solver.options())?;
    let norms = DiscreteNorms::new(&model.grid)?;
    let details = json!({
        "energy_first": energy_report_first(&tr, &norms, forcing.as_deref(), &xi),
        "energy_second": energy_report_second(&tr, &norms, forcing.as_deref(), &xi),
        "step_residual": tr.step_residual,
        "nodes": model.len(),
        "knots": times.knots().len(),
    });
    out.csv("trajectory.csv", |w| tr.write_csv(w))?;
    Ok(Solved { verdict: Some(verdict), residual: Some(report.residual_max_abs), solve: Some(report), details, extra_residual: None })
}

fn lattice_for(cfg: &ExperimentConfig, components: usize, times: &TimeGrid<f64>) -> Result<NoiseLattice<f64>> {
    let layout = cfg.lattice.clone().unwrap_or_default().layout;
    setup(NoiseLattice::with_layout(components, times, layout), "lattice")
}

fn run_spde(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Solved> {
    let (model, times) = build_model(cfg)?;
    let (xi, forcing) = datum_and_forcing(cfg, &model.grid, &times)?;
    let lat = lattice_for(cfg, model.noise_components().max(1), &times)?;
    let engine = engine(cfg, &model)?;
    let verdict = engine.verdict();
    let datum = match cfg.kind.direction() {
        Direction::Forward => NonlocalDatum::Deterministic(xi),
        Direction::Backward => {
            NonlocalDatum::Leaves(cfg.require(&cfg.data, "data")?.leaves(&xi, lat.nodes_at(lat.steps())))
        }
    };
    let forcing = forcing.map_or(Forcing::Zero, Forcing::Deterministic);
    let (sol, report) = engine.solve_spde(&lat, forcing, Vec::new(), &datum, &cfg.solver.options())?;
    let norms = DiscreteNorms::new(&model.grid)?;
    let details = json!({
        "summary": sol.summary(&lat, &norms)?,
        "lattice_nodes": lat.total_nodes(),
        "layout": lat.layout(),
    });
    out.csv("solution.csv", |w| sol.write_csv(w))?;
    Ok(Solved { verdict: Some(verdict), residual: Some(report.residual_max_abs), solve: Some(report), details, extra_residual: None })
}

/// Market parameters, corridor grid and time grid of a hedge config.
pub fn market_from_config(cfg: &ExperimentConfig) -> Result<(MarketParams, Grid<f64>, TimeGrid<f64>)> {
    let m = cfg.require(&cfg.market, "market")?;
    let times = setup(cfg.time.build(), "time")?;
    let mut mp = MarketParams::new(
        m.sigma.value(),
        m.sigma_tilde.value(),
        m.s0.value(),
        m.lower.value(),
        m.upper.value(),
        times.horizon(),
    );
    mp.appreciation = m.appreciation.as_ref().map_or(0.0, |a| a.value());
    setup(mp.validate(), "market")?;
    let grid = setup(mp.grid(m.nodes), "market.nodes")?;
    let f = setup(m.payoff.build(&grid, &cfg.base_dir), "market.payoff")?;
    mp.payoff = Payoff::function(move |x, _| f(&[x, 0.0], 0.0));
    Ok((mp, grid, times))
}

fn run_hedge(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Solved> {
    let m = cfg.require(&cfg.market, "market")?;
    let (mp, grid, times) = market_from_config(cfg)?;
    let lat = lattice_for(cfg, 1, &times)?;
    let hedge = match solve_hedge_spde(&mp, &grid, &times, &lat, cfg.solver.theta.value(), &cfg.solver.options()) {
        Err(e @ (Error::Market(_) | Error::Coercivity { .. })) => return Err(Error::Config(format!("market: {e}"))),
        other => other?,
    };
    let paths = simulate_market(&mp, m.paths, &times, cfg.seed, m.substeps)?;
    let report = wealth_process(&hedge.solution, &lat, &grid, &hedge.xi, &paths, m.wealth_paths)?;
    out.csv("solution.csv", |w| hedge.solution.write_csv(w))?;
    out.csv("paths.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["path", "knot", "time", "price", "wealth"])?;
        for (p, row) in report.wealth.iter().enumerate() {
            for (k, x) in row.iter().enumerate() {
                c.write_record([
                    p.to_string(),
                    k.to_string(),
                    times.knot(k).to_string(),
                    paths.price(p, k).to_string(),
                    x.to_string(),
                ])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    let residual = report.stagnation_residual;
    let details = json!({
        "coercivity": hedge.coercivity,
        "martingale": report.martingale,
        "x0": report.x0,
        "delta_hedge": report.delta_hedge,
        "exit_fraction": report.exit_fraction,
        "paths": report.paths,
    });
    Ok(Solved { verdict: Some(hedge.verdict), solve: Some(hedge.report), residual: Some(residual), details, extra_residual: None })
}

fn run_probe(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Solved> {
    let probe = cfg.require(&cfg.probe, "probe")?;
    let (model, times) = build_model(cfg)?;
    let theta = cfg.solver.theta.value();
    let duality = duality_residual(&model, theta, probe.kappa.value())?;
    let (xi, forcing) = datum_and_forcing(cfg, &model.grid, &times)?;
    let engine = engine(cfg, &model)?;
    let verdict = engine.verdict();
    let (u, report) = engine.solve_pde(forcing.as_deref(), &xi, &cfg.solver.options())?;
    if probe.x.len() != model.grid.dim() {
        return Err(Error::Config(format!("probe.x needs {} coordinates", model.grid.dim())));
    }
    let mut x = [0.0; 2];
    for (o, d) in x.iter_mut().zip(&probe.x) {
        *o = d.value();
    }
    let settings = FkSettings { paths: probe.paths, seed: cfg.seed, substeps: probe.substeps };
    let batch = setup(fk_simulate(&model.coeffs, &model.grid, &times, x, probe.start_knot, &settings), "probe")?;
    let checkpoints: Vec<usize> = if probe.checkpoints.is_empty() {
        (probe.start_knot + 1..times.knots().len()).collect()
    } else {
        probe.checkpoints.clone()
    };
    let mart = setup(martingale_test(&u, &model.grid, &batch, &checkpoints), "probe.checkpoints")?;
    out.csv("martingale.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["knot", "time", "mean", "se", "deviation", "pass"])?;
        for cp in &mart.checkpoints {
            c.write_record([
                cp.knot.to_string(),
                cp.time.to_string(),
                cp.mean.to_string(),
                cp.se.to_string(),
                cp.deviation.to_string(),
                cp.pass.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    out.csv("trajectory.csv", |w| u.write_csv(w))?;
    let details = json!({
        "duality_residual": duality,
        "duality_kappa": probe.kappa,
        "martingale": mart,
    });
    Ok(Solved {
        verdict: Some(verdict),
        residual: Some(report.residual_max_abs),
        solve: Some(report),
        details,
        extra_residual: Some(duality),
    })
}

/// Lattice described by a config: time grid, layout and the number of
/// noise components of its coefficients (or `components` when given).
pub fn dump_lattice(cfg: &ExperimentConfig, components: Option<usize>) -> Result<LatticeDump> {
    let times = setup(cfg.time.build(), "time")?;
    let n = components.unwrap_or_else(|| match cfg.kind {
        ProblemKind::Hedge => 1,
        _ => cfg.coefficients.as_ref().map_or(1, |c| c.noise.len().max(1)),
    });
    Ok(lattice_for(cfg, n, &times)?.dump())
}
