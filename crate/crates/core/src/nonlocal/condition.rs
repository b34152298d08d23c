use crate::cauchy::Direction;
use crate::discretization::TimeGrid;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::{CompensatedSum, Real};

/// Point evaluation `k_i u(·, t_i)`, optionally through a spatial kernel
/// matrix (`k_i K_i u(·, t_i)`).
#[derive(Debug, Clone)]
pub struct PointMass<T> {
    pub time: T,
    pub weight: T,
    pub spatial: Option<DenseMatrix<T>>,
}

/// The mixing operator
/// `Γu = ∫ k0(t) K0 u(·,t) dt + Σ_i k_i K_i u(·,t_i)` (after taking the
/// lattice mean of stochastic `u`), together with the side on which the
/// condition is imposed: forward `u(·,0) − Γu = ξ`, backward
/// `u(·,T) − Γu = ξ`.
#[derive(Debug, Clone)]
pub struct NonlocalCondition<T> {
    pub direction: Direction,
    /// `k0` at every knot of the time grid.
    pub kernel: Option<Vec<T>>,
    pub kernel_spatial: Option<DenseMatrix<T>>,
    pub masses: Vec<PointMass<T>>,
    /// Set by `kappa`: backward `Γu = κ u(·,0)`, forward `Γu = κ u(·,T)`.
    pub kappa: Option<T>,
}

impl<T: Real> NonlocalCondition<T> {
    /// `Γ = 0`: the classical Cauchy problem.
    pub fn cauchy(direction: Direction) -> Self {
        Self { direction, kernel: None, kernel_spatial: None, masses: Vec::new(), kappa: None }
    }

    /// Scalar shortcut coupling the two ends of the horizon.
    pub fn kappa(direction: Direction, kappa: T) -> Self {
        Self { kappa: Some(kappa), ..Self::cauchy(direction) }
    }

    pub fn with_kernel(mut self, k0: Vec<T>) -> Self {
        self.kernel = Some(k0);
        self
    }

    pub fn with_kernel_fn(self, times: &TimeGrid<T>, k0: impl Fn(T) -> T) -> Self {
        self.with_kernel(times.knots().iter().map(|&t| k0(t)).collect())
    }

    pub fn with_kernel_spatial(mut self, k: DenseMatrix<T>) -> Self {
        self.kernel_spatial = Some(k);
        self
    }

    pub fn with_mass(mut self, time: T, weight: T) -> Self {
        self.masses.push(PointMass { time, weight, spatial: None });
        self
    }

    pub fn with_spatial_mass(mut self, time: T, weight: T, spatial: DenseMatrix<T>) -> Self {
        self.masses.push(PointMass { time, weight, spatial: Some(spatial) });
        self
    }

    /// Whether `Γ` is exactly the scalar shortcut.
    pub fn is_kappa_form(&self) -> bool {
        self.kappa.is_some() && self.kernel.is_none() && self.masses.is_empty()
    }

    /// Checks the condition against a time grid and `M` grid nodes and
    /// precomputes the quadrature weights.
    pub fn resolve(&self, times: &TimeGrid<T>, m: usize) -> Result<ResolvedCondition<T>> {
        let horizon = times.horizon();
        let check_spatial = |k: &DenseMatrix<T>| {
            if k.rows() != m || k.cols() != m {
                Err(Error::Shape(format!("spatial kernel is {}x{}, grid has {m} nodes", k.rows(), k.cols())))
            } else {
                Ok(())
            }
        };
        let mut masses: Vec<ResolvedMass<T>> = Vec::new();
        let mut all = self.masses.clone();
        if let Some(kappa) = self.kappa {
            let t = match self.direction {
                Direction::Forward => horizon,
                Direction::Backward => T::zero(),
            };
            all.push(PointMass { time: t, weight: kappa, spatial: None });
        }
        for pm in &all {
            let allowed = match self.direction {
                Direction::Forward => pm.time > T::zero() && pm.time <= horizon,
                Direction::Backward => pm.time >= T::zero() && pm.time < horizon,
            };
            if !allowed {
                let range = match self.direction {
                    Direction::Forward => "(0, T]",
                    Direction::Backward => "[0, T)",
                };
                return Err(Error::Condition(format!("mixing time {} outside {range}", pm.time)));
            }
            let knot = times.knot_index(pm.time).ok_or(Error::NotAKnot { t: pm.time.as_f64() })?;
            if let Some(k) = &pm.spatial {
                check_spatial(k)?;
            }
            match masses.iter_mut().find(|r| r.knot == knot) {
                Some(r) => r.absorb(pm, m),
                None => masses.push(ResolvedMass { knot, weight: pm.weight, spatial: pm.spatial.clone() }),
            }
        }
        masses.sort_by_key(|r| r.knot);
        let kernel = match &self.kernel {
            None => None,
            Some(k0) => {
                if k0.len() != times.knots().len() {
                    return Err(Error::Shape(format!(
                        "kernel has {} samples, time grid {} knots",
                        k0.len(),
                        times.knots().len()
                    )));
                }
                if k0.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("kernel weight".into()));
                }
                Some(trapezoid_weights(times).into_iter().zip(k0).map(|(w, k)| w * *k).collect::<Vec<_>>())
            }
        };
        if let Some(k) = &self.kernel_spatial {
            check_spatial(k)?;
        }
        let mut mu = CompensatedSum::new();
        if let Some(kw) = &kernel {
            for w in kw {
                mu.add(w.abs());
            }
        }
        for r in &masses {
            mu.add(r.weight.abs());
        }
        let spatial = self.kernel_spatial.is_some() || masses.iter().any(|r| r.spatial.is_some());
        Ok(ResolvedCondition {
            direction: self.direction,
            kernel,
            kernel_spatial: self.kernel_spatial.clone(),
            masses,
            kernel_mass: mu.value(),
            kappa: if self.is_kappa_form() { self.kappa } else { None },
            spatial,
        })
    }
}

/// Trapezoid weights of the knots.
pub fn trapezoid_weights<T: Real>(times: &TimeGrid<T>) -> Vec<T> {
    let n = times.knots().len();
    let half = T::lit(0.5);
    (0..n)
        .map(|k| {
            let left = if k > 0 { times.dt(k - 1) } else { T::zero() };
            let right = if k + 1 < n { times.dt(k) } else { T::zero() };
            half * (left + right)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ResolvedMass<T> {
    pub knot: usize,
    pub weight: T,
    pub spatial: Option<DenseMatrix<T>>,
}

impl<T: Real> ResolvedMass<T> {
    /// Adds a second mass at the same knot.
    fn absorb(&mut self, other: &PointMass<T>, m: usize) {
        match (&self.spatial, &other.spatial) {
            (None, None) => self.weight += other.weight,
            _ => {
                let id = DenseMatrix::identity(m);
                let a = self.spatial.as_ref().unwrap_or(&id).scale(self.weight);
                let b = other.spatial.as_ref().unwrap_or(&id).scale(other.weight);
                self.weight = T::one();
                self.spatial = Some(a.add(&b));
            }
        }
    }
}

/// A condition checked against a concrete grid.
#[derive(Debug, Clone)]
pub struct ResolvedCondition<T> {
    pub direction: Direction,
    /// Trapezoid weight times `k0` at each knot.
    pub kernel: Option<Vec<T>>,
    pub kernel_spatial: Option<DenseMatrix<T>>,
    /// Sorted by knot, duplicates merged.
    pub masses: Vec<ResolvedMass<T>>,
    /// `∫|k0| dt + Σ|k_i|` (trapezoid).
    pub kernel_mass: T,
    /// Present only for the pure scalar shortcut.
    pub kappa: Option<T>,
    pub spatial: bool,
}

impl<T: Real> ResolvedCondition<T> {
    pub fn is_zero(&self) -> bool {
        self.kernel.as_ref().is_none_or(|k| k.iter().all(|w| *w == T::zero()))
            && self.masses.iter().all(|r| r.weight == T::zero())
    }

    /// `Γu` for grid values `u[k]` at every knot.
    pub fn apply(&self, values: &[Vec<T>]) -> Vec<T> {
        let m = values.first().map_or(0, Vec::len);
        let mut out = vec![T::zero(); m];
        if let Some(kw) = &self.kernel {
            let mut acc = vec![CompensatedSum::new(); m];
            for (w, v) in kw.iter().zip(values) {
                if *w != T::zero() {
                    for (a, x) in acc.iter_mut().zip(v) {
                        a.add(*w * *x);
                    }
                }
            }
            let integral: Vec<T> = acc.iter().map(|a| a.value()).collect();
            let integral = match &self.kernel_spatial {
                Some(k) => k.matvec(&integral),
                None => integral,
            };
            for (o, v) in out.iter_mut().zip(&integral) {
                *o += *v;
            }
        }
        for r in &self.masses {
            let v = &values[r.knot];
            let v = match &r.spatial {
                Some(k) => k.matvec(v),
                None => v.clone(),
            };
            for (o, x) in out.iter_mut().zip(&v) {
                *o += r.weight * *x;
            }
        }
        out
    }
}

/// `Γu` for a trajectory of grid values (one vector per knot).
pub fn apply_gamma<T: Real>(cond: &ResolvedCondition<T>, values: &[Vec<T>]) -> Vec<T> {
    cond.apply(values)
}
