use std::fmt;

use serde::Serialize;

use crate::cauchy::Direction;
use crate::discretization::{CoefficientSet, Grid, TimeGrid};
use crate::scalar::Real;

use super::ResolvedCondition;

/// Threshold below which `min σ(I − Q)` counts as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictStatus {
    GuaranteedKappa,
    GuaranteedKernelMass,
    GuaranteedSmallNorm,
    FredholmNumeric,
    SingularDetected,
}

impl VerdictStatus {
    pub fn is_guaranteed(self) -> bool {
        matches!(self, Self::GuaranteedKappa | Self::GuaranteedKernelMass | Self::GuaranteedSmallNorm)
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// The sufficient condition that certifies (or fails to certify) unique
/// solvability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Certificate {
    /// `Γu = κ u` at the far end with `κ ∈ [−1, 1]`, `λ~ ≤ 0`, `β̄ ≡ 0`.
    QuasiPeriodicKappa,
    /// Forward problem with `∫|k0| + Σ|k_i| ≤ 1` and `λ~ ≤ 0`.
    KernelMassAtMostOne,
    /// Computed `‖Q‖ < 1`.
    SmallOperatorNorm,
    /// No a-priori certificate; uniqueness is read off `min σ(I − Q)`.
    FredholmAlternative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CheckOutcome {
    Passed,
    NotGuaranteed,
    NotApplicable,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerdictEvidence {
    pub q_norm: f64,
    pub kernel_mass: f64,
    pub kappa: Option<f64>,
    pub min_sigma: f64,
    pub max_lambda_tilde: f64,
    pub max_abs_beta_bar: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveVerdict {
    pub status: VerdictStatus,
    pub certificate: Certificate,
    pub kappa_check: CheckOutcome,
    pub kernel_mass_check: CheckOutcome,
    pub small_norm_check: CheckOutcome,
    pub evidence: VerdictEvidence,
}

impl SolveVerdict {
    pub fn is_guaranteed(&self) -> bool {
        self.status.is_guaranteed()
    }

    /// `GuaranteedKappa`, `NotGuaranteedKappa` or `NotApplicable`.
    pub fn kappa_label(&self) -> &'static str {
        match self.kappa_check {
            CheckOutcome::Passed => "GuaranteedKappa",
            CheckOutcome::NotGuaranteed => "NotGuaranteedKappa",
            CheckOutcome::NotApplicable => "NotApplicable",
        }
    }
}

/// Largest `λ~` and largest `|β̄_i|` over grid nodes and knots.
pub(crate) fn sample_signs<T: Real>(coeffs: &CoefficientSet<T>, grid: &Grid<T>, times: &TimeGrid<T>) -> (f64, f64) {
    let mut lam = f64::NEG_INFINITY;
    let mut bbar = 0.0f64;
    let pts = grid.points();
    for &t in times.knots() {
        for x in &pts {
            lam = lam.max(coeffs.lambda_tilde(x, t).as_f64());
            for b in &coeffs.noise_potential {
                bbar = bbar.max(b(x, t).abs().as_f64());
            }
        }
    }
    (lam, bbar)
}

/// Runs the certificate cascade: κ-form, kernel mass, small `‖Q‖`, then
/// the numeric Fredholm test. `min_sigma` below `SINGULAR_THRESHOLD`
/// overrides every certificate.
pub fn verdict<T: Real>(
    cond: &ResolvedCondition<T>,
    coeffs: &CoefficientSet<T>,
    grid: &Grid<T>,
    times: &TimeGrid<T>,
    q_norm: f64,
    min_sigma: f64,
) -> SolveVerdict {
    let (max_lambda_tilde, max_abs_beta_bar) = sample_signs(coeffs, grid, times);
    let lambda_ok = max_lambda_tilde <= 0.0;
    let kappa_check = match cond.kappa {
        None => CheckOutcome::NotApplicable,
        Some(k) => {
            let k = k.as_f64();
            if (-1.0..=1.0).contains(&k) && lambda_ok && max_abs_beta_bar == 0.0 {
                CheckOutcome::Passed
            } else {
                CheckOutcome::NotGuaranteed
            }
        }
    };
    let kernel_mass_check = if cond.direction != Direction::Forward || cond.spatial {
        CheckOutcome::NotApplicable
    } else if cond.kernel_mass.as_f64() <= 1.0 && lambda_ok {
        CheckOutcome::Passed
    } else {
        CheckOutcome::NotGuaranteed
    };
    let small_norm_check = if q_norm < 1.0 { CheckOutcome::Passed } else { CheckOutcome::NotGuaranteed };
    let (mut status, certificate) = if kappa_check == CheckOutcome::Passed {
        (VerdictStatus::GuaranteedKappa, Certificate::QuasiPeriodicKappa)
    } else if kernel_mass_check == CheckOutcome::Passed {
        (VerdictStatus::GuaranteedKernelMass, Certificate::KernelMassAtMostOne)
    } else if small_norm_check == CheckOutcome::Passed {
        (VerdictStatus::GuaranteedSmallNorm, Certificate::SmallOperatorNorm)
    } else {
        (VerdictStatus::FredholmNumeric, Certificate::FredholmAlternative)
    };
    if !(min_sigma >= SINGULAR_THRESHOLD) {
        status = VerdictStatus::SingularDetected;
    }
    SolveVerdict {
        status,
        certificate,
        kappa_check,
        kernel_mass_check,
        small_norm_check,
        evidence: VerdictEvidence {
            q_norm,
            kernel_mass: cond.kernel_mass.as_f64(),
            kappa: cond.kappa.map(|k| k.as_f64()),
            min_sigma,
            max_lambda_tilde,
            max_abs_beta_bar,
        },
    }
}
