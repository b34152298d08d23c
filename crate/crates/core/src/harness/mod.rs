//! Config-driven experiment runner behind the command line tool.

mod config;
mod converge;
mod run;

pub use config::*;
pub use converge::{convergence_study, ConvergenceRow, ConvergenceTable, Reference};
pub use run::{dump_lattice, market_from_config, run_experiment, RunOutcome, RunReport, RunStatus};
