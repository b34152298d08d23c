use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cauchy::Direction;
use crate::discretization::{CoefficientSet, Grid, OperatorForm, Point, TimeGrid};
use crate::error::{Error, Result};
use crate::lattice::LatticeLayout;
use crate::nonlocal::{Method, NonlocalCondition, SolveOptions};

/// A floating-point input kept together with the text it was written as.
///
/// Accepts a TOML/JSON string or number. Strings may also use `pi` as in
/// `"pi"`, `"2pi"`, `"pi/2"` or `"0.5*pi"`.
#[derive(Clone, PartialEq)]
pub struct Decimal {
    text: String,
    value: f64,
}

impl Decimal {
    pub fn new(text: &str) -> Result<Self> {
        let value = parse_decimal(text).ok_or_else(|| Error::Config(format!("`{text}` is not a decimal number")))?;
        Ok(Self { text: text.to_string(), value })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

impl From<f64> for Decimal {
    fn from(value: f64) -> Self {
        Self { text: value.to_string(), value }
    }
}

impl fmt::Debug for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

fn parse_decimal(text: &str) -> Option<f64> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.to_string(), Some(d.parse::<f64>().ok()?)),
        None => (s.clone(), None),
    };
    let num = match num.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => c.parse::<f64>().ok()?,
            };
            c * std::f64::consts::PI
        }
        None => num.parse::<f64>().ok()?,
    };
    let v = match den {
        Some(d) => num / d,
        None => num,
    };
    v.is_finite().then_some(v)
}

impl<'de> Deserialize<'de> for Decimal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(i64),
            Float(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(s) => Decimal::new(&s).map_err(serde::de::Error::custom),
            Raw::Int(i) => Ok(Self { text: i.to_string(), value: i as f64 }),
            Raw::Float(v) => Ok(Self::from(v)),
        }
    }
}

impl Serialize for Decimal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

fn one() -> Decimal {
    Decimal { text: "1".into(), value: 1.0 }
}

/// A scalar field `f(x, t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: Decimal,
    },
    /// `offset + Σ slope_a x_a + time · t`
    Affine {
        offset: Decimal,
        #[serde(default)]
        slope: Vec<Decimal>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        time: Option<Decimal>,
    },
    /// `amplitude · e^{rate t} · Π_a sin(m_a π (x_a − lo_a)/(hi_a − lo_a))`
    SineMode {
        #[serde(default = "one")]
        amplitude: Decimal,
        modes: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rate: Option<Decimal>,
    },
    /// `coef · x_axis^power`
    Power {
        coef: Decimal,
        power: Decimal,
        #[serde(default)]
        axis: usize,
    },
    /// One value per grid node, read from column `column` (default
    /// `value`) of a CSV file.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<String>,
    },
}

pub type Field = Arc<dyn Fn(&Point<f64>, f64) -> f64 + Send + Sync>;

impl FieldSpec {
    pub fn depends_on_time(&self) -> bool {
        match self {
            Self::Affine { time, .. } => time.as_ref().is_some_and(|t| t.value() != 0.0),
            Self::SineMode { rate, .. } => rate.as_ref().is_some_and(|r| r.value() != 0.0),
            _ => false,
        }
    }

    fn csv_values(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let name = column.unwrap_or("value");
        let idx = rdr
            .headers()?
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{} has no column `{name}`", path.display())))?;
        let mut out = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let cell = rec.get(idx).unwrap_or("");
            out.push(cell.trim().parse::<f64>().map_err(|_| {
                Error::Config(format!("{} line {}: `{cell}` is not a number", path.display(), line + 2))
            })?);
        }
        Ok(out)
    }

    /// Builds the field on `grid`; `base` resolves relative CSV paths.
    pub fn build(&self, grid: &Grid<f64>, base: &Path) -> Result<Field> {
        Ok(match self.clone() {
            Self::Constant { value } => {
                let v = value.value();
                Arc::new(move |_, _| v)
            }
            Self::Affine { offset, slope, time } => {
                let (o, t) = (offset.value(), time.map_or(0.0, |t| t.value()));
                let s: Vec<f64> = slope.iter().map(Decimal::value).collect();
                if s.len() > grid.dim() {
                    return Err(Error::Config(format!("affine slope has {} entries for a {}-D grid", s.len(), grid.dim())));
                }
                Arc::new(move |x, tt| o + s.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + t * tt)
            }
            Self::SineMode { amplitude, modes, rate } => {
                if modes.len() != grid.dim() || modes.contains(&0) {
                    return Err(Error::Config(format!("sine-mode needs {} positive mode numbers", grid.dim())));
                }
                let axes: Vec<(f64, f64, f64)> = grid
                    .axes()
                    .iter()
                    .zip(&modes)
                    .map(|(ax, &m)| (ax.lo, ax.hi, m as f64 * std::f64::consts::PI))
                    .collect();
                let (a, r) = (amplitude.value(), rate.map_or(0.0, |r| r.value()));
                Arc::new(move |x, t| {
                    a * (r * t).exp() * axes.iter().zip(x).map(|((lo, hi, k), xa)| (k * (xa - lo) / (hi - lo)).sin()).product::<f64>()
                })
            }
            Self::Power { coef, power, axis } => {
                if axis >= grid.dim() {
                    return Err(Error::Config(format!("power axis {axis} out of range")));
                }
                let (c, p) = (coef.value(), power.value());
                Arc::new(move |x, _| c * x[axis].powf(p))
            }
            Self::Csv { path, column } => {
                let path = base.join(path);
                let values = Self::csv_values(&path, column.as_deref())?;
                if values.len() != grid.len() {
                    return Err(Error::Config(format!(
                        "{} has {} values, the grid has {} nodes",
                        path.display(),
                        values.len(),
                        grid.len()
                    )));
                }
                let g = grid.clone();
                Arc::new(move |x, _| g.interpolate(&values, x))
            }
        })
    }

    /// Grid values at time `t`; CSV fields are returned exactly.
    pub fn sample(&self, grid: &Grid<f64>, base: &Path, t: f64) -> Result<Vec<f64>> {
        if let Self::Csv { path, column } = self {
            let v = Self::csv_values(&base.join(path), column.as_deref())?;
            if v.len() != grid.len() {
                return Err(Error::Config(format!("{} has {} values, the grid has {} nodes", path.display(), v.len(), grid.len())));
            }
            return Ok(v);
        }
        let f = self.build(grid, base)?;
        Ok(grid.sample(|x| f(x, t)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    ForwardPde,
    BackwardPde,
    ForwardSpde,
    BackwardSpde,
    Hedge,
    Probe,
}

impl ProblemKind {
    pub fn direction(self) -> Direction {
        match self {
            Self::ForwardPde | Self::ForwardSpde => Direction::Forward,
            _ => Direction::Backward,
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::ForwardSpde | Self::BackwardSpde | Self::Hedge)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub lo: Decimal,
    pub hi: Decimal,
    pub nodes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub axes: Vec<AxisSpec>,
}

impl GridSpec {
    pub fn build(&self) -> Result<Grid<f64>> {
        let axes: Vec<(f64, f64, usize)> = self.axes.iter().map(|a| (a.lo.value(), a.hi.value(), a.nodes)).collect();
        Grid::new(&axes)
    }

    /// Same domain with `(n + 1) · 2^level − 1` interior nodes per axis.
    pub fn refined(&self, level: u32) -> Self {
        let axes = self.axes.iter().map(|a| AxisSpec { nodes: (a.nodes + 1) * (1 << level) - 1, ..a.clone() }).collect();
        Self { axes }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub horizon: Decimal,
    pub steps: usize,
    /// Extra knots, e.g. mixing times off the uniform grid.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extra_knots: Vec<Decimal>,
}

impl TimeSpec {
    pub fn build(&self) -> Result<TimeGrid<f64>> {
        let extra: Vec<f64> = self.extra_knots.iter().map(Decimal::value).collect();
        TimeGrid::uniform_with(self.horizon.value(), self.steps, &extra)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub beta: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_bar: Option<FieldSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSpec {
    #[serde(default = "divergence")]
    pub form: OperatorForm,
    /// Isotropic diffusion `b = s(x,t) I`.
    pub diffusion: FieldSpec,
    /// Symmetric off-diagonal entry `b_01 = b_10` (2-D only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_offdiag: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<FieldSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise: Vec<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<Decimal>,
}

fn divergence() -> OperatorForm {
    OperatorForm::Divergence
}

impl CoefficientSpec {
    fn fields(&self) -> impl Iterator<Item = &FieldSpec> {
        std::iter::once(&self.diffusion)
            .chain(&self.diffusion_offdiag)
            .chain(&self.drift)
            .chain(&self.potential)
            .chain(self.noise.iter().flat_map(|n| n.beta.iter().chain(&n.beta_bar)))
    }

    pub fn build(&self, grid: &Grid<f64>, base: &Path) -> Result<CoefficientSet<f64>> {
        let dim = grid.dim();
        let vector = |specs: &[FieldSpec], what: &str| -> Result<Option<Vec<Field>>> {
            if specs.is_empty() {
                return Ok(None);
            }
            if specs.len() != dim {
                return Err(Error::Config(format!("{what} needs {dim} components, got {}", specs.len())));
            }
            specs.iter().map(|s| s.build(grid, base)).collect::<Result<Vec<_>>>().map(Some)
        };
        let diag = self.diffusion.build(grid, base)?;
        let mut c = CoefficientSet::new(dim).with_form(self.form);
        c = match &self.diffusion_offdiag {
            None => c.with_scalar_diffusion(move |x, t| diag(x, t)),
            Some(o) => {
                if dim != 2 {
                    return Err(Error::Config("diffusion_offdiag needs a 2-D grid".into()));
                }
                let off = o.build(grid, base)?;
                c.with_diffusion(move |x, t| {
                    let (d, o) = (diag(x, t), off(x, t));
                    [[d, o], [o, d]]
                })
            }
        };
        if let Some(f) = vector(&self.drift, "drift")? {
            c = c.with_drift(move |x, t| {
                let mut v = [0.0; 2];
                for (o, g) in v.iter_mut().zip(&f) {
                    *o = g(x, t);
                }
                v
            });
        }
        if let Some(p) = &self.potential {
            let p = p.build(grid, base)?;
            c = c.with_potential(move |x, t| p(x, t));
        }
        for (i, n) in self.noise.iter().enumerate() {
            let beta = vector(&n.beta, &format!("noise[{i}].beta"))?.unwrap_or_default();
            let bar = match &n.beta_bar {
                Some(b) => b.build(grid, base)?,
                None => Arc::new(|_: &Point<f64>, _: f64| 0.0),
            };
            c = c.with_noise(
                move |x, t| {
                    let mut v = [0.0; 2];
                    for (o, g) in v.iter_mut().zip(&beta) {
                        *o = g(x, t);
                    }
                    v
                },
                move |x, t| bar(x, t),
            );
        }
        if let Some(d) = &self.delta {
            c = c.with_delta(d.value());
        }
        if self.fields().any(FieldSpec::depends_on_time) {
            c = c.time_dependent();
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    pub time: Decimal,
    pub weight: Decimal,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Decimal>,
    /// `k0(t)`, evaluated at the origin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<FieldSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masses: Vec<MassSpec>,
}

impl ConditionSpec {
    pub fn is_cauchy(&self) -> bool {
        self.kappa.is_none() && self.kernel.is_none() && self.masses.is_empty()
    }

    pub fn build(
        &self,
        direction: Direction,
        grid: &Grid<f64>,
        times: &TimeGrid<f64>,
        base: &Path,
    ) -> Result<NonlocalCondition<f64>> {
        let mut c = match &self.kappa {
            Some(k) => NonlocalCondition::kappa(direction, k.value()),
            None => NonlocalCondition::cauchy(direction),
        };
        if let Some(k) = &self.kernel {
            let f = k.build(grid, base)?;
            c = c.with_kernel_fn(times, |t| f(&[0.0, 0.0], t));
        }
        for m in &self.masses {
            c = c.with_mass(m.time.value(), m.weight.value());
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomLeaves {
    pub amplitude: Decimal,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// `ξ`.
    pub datum: FieldSpec,
    /// `φ(x, t)`, sampled at the left knot of every step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forcing: Option<FieldSpec>,
    /// Adds independent `U(−a, a)` values per leaf and node to `ξ`
    /// (backward stochastic problems).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_leaves: Option<RandomLeaves>,
}

impl DataSpec {
    pub fn leaves(&self, base_values: &[f64], leaves: usize) -> Vec<Vec<f64>> {
        match &self.random_leaves {
            None => vec![base_values.to_vec(); leaves],
            Some(r) => {
                let mut rng = ChaCha8Rng::seed_from_u64(r.seed);
                let a = r.amplitude.value();
                (0..leaves)
                    .map(|_| base_values.iter().map(|v| v + a * rng.random_range(-1.0..=1.0)).collect())
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "half")]
    pub theta: Decimal,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_tol")]
    pub tol: Decimal,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Largest accepted boundary-condition residual (max norm).
    #[serde(default = "default_residual_tol")]
    pub residual_tol: Decimal,
}

fn half() -> Decimal {
    Decimal { text: "0.5".into(), value: 0.5 }
}

fn default_tol() -> Decimal {
    Decimal { text: "1e-12".into(), value: 1e-12 }
}

fn default_max_iter() -> usize {
    10_000
}

fn default_residual_tol() -> Decimal {
    Decimal { text: "1e-8".into(), value: 1e-8 }
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { theta: half(), method: Method::Direct, tol: default_tol(), max_iter: default_max_iter(), residual_tol: default_residual_tol() }
    }
}

impl SolverSpec {
    pub fn options(&self) -> SolveOptions {
        SolveOptions { method: self.method, tol: self.tol.value(), max_iter: self.max_iter }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    #[serde(default = "recombining")]
    pub layout: LatticeLayout,
}

fn recombining() -> LatticeLayout {
    LatticeLayout::Recombining
}

impl Default for LatticeSpec {
    fn default() -> Self {
        Self { layout: LatticeLayout::Recombining }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// `κ` of the duality transpose test.
    #[serde(default = "one")]
    pub kappa: Decimal,
    /// Start point of the Feynman–Kac paths.
    pub x: Vec<Decimal>,
    #[serde(default)]
    pub start_knot: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Knot indices; every knot after the start when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<usize>,
}

fn default_paths() -> usize {
    10_000
}

fn default_substeps() -> usize {
    8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSpec {
    pub sigma: Decimal,
    pub sigma_tilde: Decimal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appreciation: Option<Decimal>,
    pub s0: Decimal,
    pub lower: Decimal,
    pub upper: Decimal,
    /// Interior grid nodes on `(lower, upper)`.
    pub nodes: usize,
    /// `ξ(x)` on the corridor; must vanish at the barriers.
    pub payoff: FieldSpec,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Paths written to the per-path CSV.
    #[serde(default = "default_wealth_paths")]
    pub wealth_paths: usize,
}

fn default_wealth_paths() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Refine {
    #[default]
    Both,
    Space,
    Time,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSpec {
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default)]
    pub refine: Refine,
}

fn default_levels() -> usize {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub csv: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: None, csv: true }
    }
}

/// One experiment: problem kind, discretization sizes, coefficients,
/// non-local condition, data, solver settings and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ProblemKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    pub time: TimeSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientSpec>,
    #[serde(default)]
    pub condition: ConditionSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub market: Option<MarketSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
        .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.to_string().trim_start_matches("config error: "))))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub(crate) fn require<'a, T>(&self, v: &'a Option<T>, section: &str) -> Result<&'a T> {
        v.as_ref().ok_or_else(|| Error::Config(format!("`{section}` section is required for kind {:?}", self.kind)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_forms() {
        assert_eq!(Decimal::new("0.25").unwrap().value(), 0.25);
        assert_eq!(Decimal::new("pi").unwrap().value(), std::f64::consts::PI);
        assert_eq!(Decimal::new("pi/2").unwrap().value(), std::f64::consts::FRAC_PI_2);
        assert_eq!(Decimal::new("2*pi").unwrap().value(), 2.0 * std::f64::consts::PI);
        assert!(Decimal::new("abc").is_err());
        assert_eq!(Decimal::new(" 1e-3 ").unwrap().text(), " 1e-3 ");
    }

    #[test]
    fn parses_and_echoes_verbatim() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
kind = "forward-pde"
[grid]
axes = [{ lo = "0", hi = "pi", nodes = 7 }]
[time]
horizon = "1.000"
steps = 4
[coefficients]
diffusion = { kind = "constant", value = "1" }
[condition]
kappa = "0.50"
[data]
datum = { kind = "sine-mode", modes = [1] }
"#,
        )
        .unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"1.000\"") && json.contains("\"0.50\"") && json.contains("\"pi\""));
        assert_eq!(cfg.time.horizon.value(), 1.0);
    }

    #[test]
    fn unknown_field_is_reported_with_location() {
        let err = ExperimentConfig::from_toml_str("kind = \"forward-pde\"\n[time]\nhorizon = \"1\"\nsteps = 4\nsetps = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("setps") && err.contains("line 5"), "{err}");
    }
}
