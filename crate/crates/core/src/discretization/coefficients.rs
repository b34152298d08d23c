use std::fmt;
use std::sync::Arc;

use crate::scalar::Real;

use super::Point;

pub type ScalarField<T> = Arc<dyn Fn(&Point<T>, T) -> T + Send + Sync>;
pub type VectorField<T> = Arc<dyn Fn(&Point<T>, T) -> [T; 2] + Send + Sync>;
pub type MatrixField<T> = Arc<dyn Fn(&Point<T>, T) -> [[T; 2]; 2] + Send + Sync>;

/// How the generator's first- and zeroth-order coefficients are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorForm {
    /// `div(b grad v) + f . grad v + lambda v`
    Divergence,
    /// `b : D^2 v + f~ . grad v + lambda~ v`
    NonDivergence,
}

/// Deterministic coefficient samplers for the generator and the noise
/// operators.
///
/// `drift` and `potential` hold `f`/`lambda` in divergence form and
/// `f~`/`lambda~` in non-divergence form.
#[derive(Clone)]
pub struct CoefficientSet<T> {
    pub dim: usize,
    pub form: OperatorForm,
    pub diffusion: MatrixField<T>,
    pub drift: VectorField<T>,
    pub potential: ScalarField<T>,
    pub noise_drift: Vec<VectorField<T>>,
    pub noise_potential: Vec<ScalarField<T>>,
    /// Claimed coercivity margin.
    pub delta: T,
    /// Lets assembly reuse one operator for every knot.
    pub time_independent: bool,
}

impl<T: fmt::Debug> fmt::Debug for CoefficientSet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("dim", &self.dim)
            .field("form", &self.form)
            .field("noise_components", &self.noise_drift.len())
            .field("delta", &self.delta)
            .field("time_independent", &self.time_independent)
            .finish_non_exhaustive()
    }
}

fn scalar_matrix<T: Real>(s: T) -> [[T; 2]; 2] {
    [[s, T::zero()], [T::zero(), s]]
}

impl<T: Real> CoefficientSet<T> {
    /// `b = I`, no drift, no potential, no noise.
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            form: OperatorForm::Divergence,
            diffusion: Arc::new(|_, _| scalar_matrix(T::one())),
            drift: Arc::new(|_, _| [T::zero(); 2]),
            potential: Arc::new(|_, _| T::zero()),
            noise_drift: Vec::new(),
            noise_potential: Vec::new(),
            delta: T::zero(),
            time_independent: true,
        }
    }

    /// Constant isotropic diffusion `b = c I`.
    pub fn heat(dim: usize, c: T) -> Self {
        Self::new(dim).with_diffusion(move |_, _| scalar_matrix(c)).with_delta(c)
    }

    pub fn with_form(mut self, form: OperatorForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(&Point<T>, T) -> [[T; 2]; 2] + Send + Sync + 'static) -> Self {
        self.diffusion = Arc::new(f);
        self
    }

    /// Isotropic diffusion `b = s(x, t) I`.
    pub fn with_scalar_diffusion(self, f: impl Fn(&Point<T>, T) -> T + Send + Sync + 'static) -> Self {
        self.with_diffusion(move |x, t| scalar_matrix(f(x, t)))
    }

    pub fn with_drift(mut self, f: impl Fn(&Point<T>, T) -> [T; 2] + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(f);
        self
    }

    pub fn with_potential(mut self, f: impl Fn(&Point<T>, T) -> T + Send + Sync + 'static) -> Self {
        self.potential = Arc::new(f);
        self
    }

    /// Appends a noise component `B v = beta . grad v + beta_bar v`.
    pub fn with_noise(
        mut self,
        beta: impl Fn(&Point<T>, T) -> [T; 2] + Send + Sync + 'static,
        beta_bar: impl Fn(&Point<T>, T) -> T + Send + Sync + 'static,
    ) -> Self {
        self.noise_drift.push(Arc::new(beta));
        self.noise_potential.push(Arc::new(beta_bar));
        self
    }

    pub fn with_delta(mut self, delta: T) -> Self {
        self.delta = delta;
        self
    }

    pub fn time_dependent(mut self) -> Self {
        self.time_independent = false;
        self
    }

    /// Number of noise components `N`.
    pub fn noise_components(&self) -> usize {
        self.noise_drift.len()
    }

    /// Zeroth-order coefficient of the non-divergence representation; in
    /// divergence form this is `lambda` itself.
    pub fn lambda_tilde(&self, x: &Point<T>, t: T) -> T {
        (self.potential)(x, t)
    }

    /// Drift of the non-divergence representation, `f + div b` for
    /// divergence-form input (divergence by central differences).
    pub fn drift_tilde(&self, x: &Point<T>, t: T) -> [T; 2] {
        let mut f = (self.drift)(x, t);
        if self.form == OperatorForm::Divergence {
            let eps = T::lit(1e-6);
            let two = T::lit(2.0);
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let mut xp = *x;
                    let mut xm = *x;
                    xp[j] += eps;
                    xm[j] -= eps;
                    f[i] += ((self.diffusion)(&xp, t)[i][j] - (self.diffusion)(&xm, t)[i][j]) / (two * eps);
                }
            }
        }
        f
    }
}
