use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::scalar::Real;

use super::{CoefficientSet, Grid, Point, TimeGrid};

/// Random unit directions tried per node, on top of the basis vectors.
pub const COERCIVITY_SAMPLES: usize = 64;

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    /// Smallest eigenvalue of `b - 1/2 sum beta beta^T` over nodes and knots.
    pub margin: f64,
    /// Smallest Rayleigh quotient over the sampled directions.
    pub sampled_margin: f64,
    pub claimed: f64,
    pub pass: bool,
    pub worst_point: [f64; 2],
    pub worst_time: f64,
}

/// `b - 1/2 sum_i beta_i beta_i^T` at one point.
pub fn coercivity_form<T: Real>(coeffs: &CoefficientSet<T>, x: &Point<T>, t: T) -> [[T; 2]; 2] {
    let mut s = (coeffs.diffusion)(x, t);
    let half = T::lit(0.5);
    for beta in &coeffs.noise_drift {
        let b = beta(x, t);
        for i in 0..coeffs.dim {
            for j in 0..coeffs.dim {
                s[i][j] -= half * b[i] * b[j];
            }
        }
    }
    s
}

pub(crate) fn min_eigenvalue_sym<T: Real>(s: &[[T; 2]; 2], dim: usize) -> T {
    if dim == 1 {
        return s[0][0];
    }
    let half = T::lit(0.5);
    let (a, d) = (s[0][0], s[1][1]);
    let c = half * (s[0][1] + s[1][0]);
    let m = half * (a + d);
    let r = (half * (a - d)).hypot(c);
    m - r
}

/// Evaluates the coercivity margin at every node and knot, both exactly
/// (2x2 eigenvalue) and by sampling basis plus `samples` random directions.
pub fn check_coercivity<T: Real>(
    coeffs: &CoefficientSet<T>,
    grid: &Grid<T>,
    times: &TimeGrid<T>,
    samples: usize,
    seed: u64,
) -> CoercivityReport {
    let dim = coeffs.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dirs: Vec<[f64; 2]> = vec![[1.0, 0.0]];
    if dim == 2 {
        dirs.push([0.0, 1.0]);
        for _ in 0..samples {
            let theta: f64 = rng.random::<f64>() * std::f64::consts::TAU;
            dirs.push([theta.cos(), theta.sin()]);
        }
    }
    let mut margin = f64::INFINITY;
    let mut sampled = f64::INFINITY;
    let mut worst_point = [0.0; 2];
    let mut worst_time = 0.0;
    for &t in times.knots() {
        for x in grid.points() {
            let s = coercivity_form(coeffs, &x, t);
            let m = min_eigenvalue_sym(&s, dim).as_f64();
            if m < margin {
                margin = m;
                worst_point = [x[0].as_f64(), x[1].as_f64()];
                worst_time = t.as_f64();
            }
            for y in &dirs {
                let mut q = 0.0;
                for i in 0..dim {
                    for j in 0..dim {
                        q += y[i] * s[i][j].as_f64() * y[j];
                    }
                }
                let norm2: f64 = y[..dim].iter().map(|v| v * v).sum();
                sampled = sampled.min(q / norm2);
            }
        }
    }
    let claimed = coeffs.delta.as_f64();
    CoercivityReport { margin, sampled_margin: sampled, claimed, pass: margin > 0.0 && margin >= claimed, worst_point, worst_time }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pure_heat_margin_is_one() {
        let g = Grid::<f64>::interval(0.0, 1.0, 5).unwrap();
        let tg = TimeGrid::<f64>::uniform(1.0, 2).unwrap();
        let r = check_coercivity(&CoefficientSet::heat(1, 1.0), &g, &tg, COERCIVITY_SAMPLES, 1);
        assert_eq!(r.margin, 1.0);
        assert!(r.pass);
    }

    #[test]
    fn critical_noise_fails() {
        let g = Grid::<f64>::new(&[(0.0, 1.0, 3), (0.0, 1.0, 3)]).unwrap();
        let tg = TimeGrid::<f64>::uniform(1.0, 1).unwrap();
        let c = CoefficientSet::heat(2, 1.0)
            .with_noise(|_, _| [2f64.sqrt(), 0.0], |_, _| 0.0)
            .with_delta(1e-8);
        let r = check_coercivity(&c, &g, &tg, COERCIVITY_SAMPLES, 1);
        assert!(r.margin.abs() < 1e-15);
        assert!(!r.pass);
        assert!(r.sampled_margin >= r.margin - 1e-15);
    }

    #[test]
    fn market_coefficients_margin() {
        let (sigma, sigma_t, s_l, s_u) = (0.2, 0.3, 0.5, 2.0);
        let g = Grid::interval(s_l, s_u, 31).unwrap();
        let tg = TimeGrid::<f64>::uniform(1.0, 4).unwrap();
        let c = CoefficientSet::new(1)
            .with_scalar_diffusion(move |x, _| 0.5 * (sigma * sigma + sigma_t * sigma_t) * x[0] * x[0])
            .with_noise(move |x, _| [sigma * x[0], 0.0], |_, _| 0.0)
            .with_delta(0.5 * sigma_t * sigma_t * s_l * s_l);
        let r = check_coercivity(&c, &g, &tg, COERCIVITY_SAMPLES, 1);
        assert!(r.pass);
        assert!(r.margin >= 0.5 * sigma_t * sigma_t * s_l * s_l - 1e-12);
    }
}
