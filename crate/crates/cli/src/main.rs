use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlspde::harness::{
    convergence_study, dump_lattice, run_experiment, ExperimentConfig, ProblemKind, RunOutcome, RunStatus,
};
use nlspde::Error;

#[derive(Parser)]
#[command(name = "nlspde", version, about = "Parabolic PDE/SPDE solvers with non-local in time conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML, or JSON with a .json extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir` of the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the Monte Carlo and lattice loops.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a deterministic or stochastic non-local problem.
    Solve(Common),
    /// Price and hedge the double-barrier claim.
    Hedge(Common),
    /// Duality and Feynman-Kac martingale checks.
    Probe(Common),
    /// Refinement study with observed orders.
    Converge {
        #[command(flatten)]
        common: Common,
        /// Number of levels; overrides `convergence.levels`.
        #[arg(long)]
        levels: Option<usize>,
    },
    /// Write the noise lattice of a config as JSON.
    DumpLattice {
        #[command(flatten)]
        common: Common,
        /// Noise components; defaults to the coefficient spec.
        #[arg(long)]
        components: Option<usize>,
    },
}

fn load(common: &Common) -> nlspde::Result<ExperimentConfig> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::from_path(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn expect_kind(cfg: &ExperimentConfig, allowed: &[ProblemKind], cmd: &str) -> nlspde::Result<()> {
    if allowed.contains(&cfg.kind) {
        Ok(())
    } else {
        Err(Error::Config(format!("`{cmd}` cannot run a config of kind {:?}", cfg.kind)))
    }
}

fn out_dir(common: &Common, cfg: &ExperimentConfig) -> Option<PathBuf> {
    common.out.clone().or_else(|| cfg.output.dir.as_ref().map(|d| cfg.base_dir.join(d)))
}

fn summarize(o: &RunOutcome) {
    let r = &o.report;
    println!("status: {:?} (exit {})", r.status, r.exit_code);
    if let Some(v) = &r.verdict {
        print!("verdict: {}", v.status);
        if v.evidence.kappa.is_some() {
            print!(" [{}]", v.kappa_label());
        }
        println!(" |Q| = {:.6e}, min sigma(I-Q) = {:.6e}", v.evidence.q_norm, v.evidence.min_sigma);
    }
    if let Some(res) = r.boundary_residual {
        println!("boundary residual: {res:.3e}");
    }
    if let Some(e) = &r.error {
        println!("error: {e}");
    }
    for a in &o.artifacts {
        println!("wrote {}", a.display());
    }
}

fn run(cli: Cli) -> nlspde::Result<RunStatus> {
    use ProblemKind::*;
    let (common, allowed, name): (&Common, &[ProblemKind], &str) = match &cli.command {
        Command::Solve(c) => (c, &[ForwardPde, BackwardPde, ForwardSpde, BackwardSpde], "solve"),
        Command::Hedge(c) => (c, &[Hedge], "hedge"),
        Command::Probe(c) => (c, &[Probe], "probe"),
        Command::Converge { common, levels } => {
            let cfg = load(common)?;
            let out = out_dir(common, &cfg);
            let table = convergence_study(&cfg, *levels, out.as_deref())?;
            println!("reference: {:?}, refine: {:?}", table.reference, table.refine);
            println!("{:>5} {:>7} {:>6} {:>12} {:>7}", "level", "nodes", "steps", "error", "order");
            for r in &table.rows {
                let e = r.error.map_or("-".into(), |e| format!("{e:.4e}"));
                let o = r.order.map_or("-".into(), |o| format!("{o:.3}"));
                println!("{:>5} {:>7} {:>6} {:>12} {:>7}", r.level, r.nodes, r.steps, e, o);
            }
            return Ok(RunStatus::Ok);
        }
        Command::DumpLattice { common, components } => {
            let cfg = load(common)?;
            let dump = serde_json::to_string_pretty(&dump_lattice(&cfg, *components)?)?;
            match out_dir(common, &cfg) {
                Some(dir) => {
                    fs::create_dir_all(&dir)?;
                    let path = dir.join("lattice.json");
                    fs::write(&path, dump + "\n")?;
                    println!("wrote {}", path.display());
                }
                None => println!("{dump}"),
            }
            return Ok(RunStatus::Ok);
        }
    };
    let cfg = load(common)?;
    expect_kind(&cfg, allowed, name)?;
    let out = out_dir(common, &cfg);
    let outcome = run_experiment(&cfg, out.as_deref().map(Path::new))?;
    summarize(&outcome);
    Ok(outcome.status)
}

fn main() -> ExitCode {
    let status = match run(Cli::parse()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            RunStatus::of_error(&e)
        }
    };
    ExitCode::from(status.code() as u8)
}
