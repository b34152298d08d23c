use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate interval on axis {axis}: lo={lo} must be < hi={hi}")]
    DegenerateInterval { axis: usize, lo: f64, hi: f64 },
    #[error("axis {axis} needs at least 3 interior nodes, got {n}")]
    TooFewNodes { axis: usize, n: usize },
    #[error("unsupported dimension {0} (expected 1 or 2)")]
    Dimension(usize),
    #[error("invalid time grid: {0}")]
    TimeGrid(String),
    #[error("diffusion matrix not symmetric at x={x:?}, t={t}: |b01-b10|={asym:e}")]
    NonSymmetricDiffusion { x: [f64; 2], t: f64, asym: f64 },
    #[error("coefficient `{name}` is not finite at x={x:?}, t={t}")]
    UnsampledCoefficient { name: &'static str, x: [f64; 2], t: f64 },
    #[error("noise component {i} out of range (N={n})")]
    ComponentOutOfRange { i: usize, n: usize },
    #[error("noise coefficient beta_{i} does not vanish on the boundary (|beta|={value:e} at x={x:?})")]
    BetaOnBoundary { i: usize, x: [f64; 2], value: f64 },
    #[error("singular step matrix at knot {knot}")]
    SingularStep { knot: usize },
    #[error("singular matrix (zero pivot in column {column})")]
    SingularMatrix { column: usize },
    #[error("non-finite values produced: {0}")]
    NonFinite(String),
    #[error("dense size {m} exceeds the guard {limit}")]
    DenseGuard { m: usize, limit: usize },
    #[error("lattice would have {nodes} nodes, guard is {limit}")]
    LatticeGuard { nodes: usize, limit: usize },
    #[error("lattice requires uniform time steps (step {step} differs)")]
    NonUniformSteps { step: usize },
    #[error("step {step} out of range: {detail}")]
    StepOutOfRange { step: usize, detail: String },
    #[error("values at step {step} depend on the path; use a tree lattice")]
    PathDependent { step: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("time {t} is not a knot of the time grid")]
    NotAKnot { t: f64 },
    #[error("invalid non-local condition: {0}")]
    Condition(String),
    #[error("I - Q is numerically singular (min singular value {min_sigma:e})")]
    Singular { min_sigma: f64 },
    #[error("Neumann series cannot converge: ||Q|| = {norm} >= 1")]
    NeumannDivergence { norm: f64 },
    #[error("Neumann series did not converge after {iterations} iterations (last increment {increment:e})")]
    NeumannNoConvergence { iterations: usize, increment: f64 },
    #[error("2b - sum beta beta^T not positive semidefinite (min eigenvalue {min_eig:e} at x={x:?})")]
    NotPsd { min_eig: f64, x: [f64; 2] },
    #[error("coercivity margin {margin:e} is not positive")]
    Coercivity { margin: f64 },
    #[error("invalid market parameters: {0}")]
    Market(String),
    #[error("checkpoint {0} is not a knot index of the simulation")]
    Checkpoint(usize),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
