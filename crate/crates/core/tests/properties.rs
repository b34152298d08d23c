use std::f64::consts::PI;

use proptest::prelude::*;

use nlspde::discretization::{assemble_adjoints, assemble_generator, assemble_noise, CoefficientSet, Grid, Model, OperatorForm, TimeGrid};
use nlspde::fk::{fk_simulate, FkSettings};
use nlspde::linalg::dot;
use nlspde::nonlocal::{NonlocalCondition, NonlocalEngine, SolveOptions};
use nlspde::portfolio::{solve_hedge_spde, MarketParams, Payoff};
use nlspde::Direction;

fn coefficients(dim: usize, a: f64, d: f64, c: f64, beta: f64, form: OperatorForm) -> CoefficientSet<f64> {
    let mut set = CoefficientSet::<f64>::new(dim)
        .with_form(form)
        .with_diffusion(move |x, t| {
            let s = 1.0 + a * (x[0] + t).sin().powi(2);
            [[s, 0.1 * a], [0.1 * a, 1.0 + 0.5 * a * x[1].cos().powi(2)]]
        })
        .with_drift(move |x, _| [d * x[0].cos(), -d * x[1].sin()])
        .with_potential(move |x, _| c * (1.0 + x[0]).ln());
    if dim == 1 {
        set = set.with_diffusion(move |x, t| [[1.0 + a * (x[0] + t).sin().powi(2), 0.0], [0.0, 0.0]]);
    }
    let across = move |y: f64| if dim == 1 { 1.0 } else { y.sin() };
    set.with_noise(move |x, _| [beta * x[0].sin() * across(x[1]), 0.0], move |x, _| 0.3 * beta * x[0])
}

fn grid(dim: usize) -> Grid<f64> {
    if dim == 1 {
        Grid::interval(0.0, PI, 9).unwrap()
    } else {
        Grid::new(&[(0.0, PI, 5), (0.0, PI, 4)]).unwrap()
    }
}

fn random_vector(n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| ((i as f64 + 1.0) * (seed as f64 * 0.618 + 0.37)).sin()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_operators_are_weighted_transposes(
        dim in 1usize..=2,
        a in 0.0f64..1.0,
        d in -1.0f64..1.0,
        c in -1.0f64..0.5,
        beta in 0.0f64..0.8,
        divergence in any::<bool>(),
        t in 0.0f64..1.0,
        seed in 0u64..1000,
    ) {
        let form = if divergence { OperatorForm::Divergence } else { OperatorForm::NonDivergence };
        let coeffs = coefficients(dim, a, d, c, beta, form);
        let g = grid(dim);
        let a_op = assemble_generator(&coeffs, &g, t).unwrap();
        let b_op = assemble_noise(&coeffs, &g, t, 0).unwrap();
        let (a_star, b_star) = assemble_adjoints(&coeffs, &g, t).unwrap();
        let u = random_vector(g.len(), seed);
        let v = random_vector(g.len(), seed + 7);
        // magnitude of the terms being summed, so the bound is relative
        let size = |x: &[f64], y: &[f64]| 1.0 + x.iter().zip(y).map(|(p, q)| (p * q).abs()).sum::<f64>();
        let au = a_star.apply(&u);
        let (lhs, rhs) = (dot(&au, &v), dot(&u, &a_op.apply(&v)));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * size(&au, &v), "A: {lhs} vs {rhs}");
        let bu = b_star[0].apply(&u);
        let (lhs, rhs) = (dot(&bu, &v), dot(&u, &b_op.apply(&v)));
        prop_assert!((lhs - rhs).abs() <= 1e-10 * size(&bu, &v), "B: {lhs} vs {rhs}");
    }

    #[test]
    fn nonlocal_solve_is_linear(
        kappa in -1.0f64..1.0,
        alpha in -3.0f64..3.0,
        backward in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let direction = if backward { Direction::Backward } else { Direction::Forward };
        let model = Model::new(
            CoefficientSet::heat(1, 1.0).with_potential(|x, _| -0.2 * x[0]),
            Grid::interval(0.0, PI, 11).unwrap(),
            TimeGrid::uniform(1.0, 6).unwrap(),
        )
        .unwrap();
        let engine = NonlocalEngine::new(model, 0.5, &NonlocalCondition::kappa(direction, kappa)).unwrap();
        let xi1 = random_vector(11, seed);
        let xi2 = random_vector(11, seed + 1);
        let f1: Vec<Vec<f64>> = (0..6).map(|k| random_vector(11, seed + 10 + k)).collect();
        let f2: Vec<Vec<f64>> = (0..6).map(|k| random_vector(11, seed + 20 + k)).collect();
        let opts = SolveOptions::default();
        let (u1, _) = engine.solve_pde(Some(&f1), &xi1, &opts).unwrap();
        let (u2, _) = engine.solve_pde(Some(&f2), &xi2, &opts).unwrap();
        let xi: Vec<f64> = xi1.iter().zip(&xi2).map(|(a, b)| alpha * a + b).collect();
        let f: Vec<Vec<f64>> = f1.iter().zip(&f2).map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + y).collect()).collect();
        let (u, _) = engine.solve_pde(Some(&f), &xi, &opts).unwrap();
        for k in 0..u.values.len() {
            for i in 0..11 {
                let want = alpha * u1.values[k][i] + u2.values[k][i];
                prop_assert!((u.values[k][i] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn weight_decays_within_the_potential_bounds(c in -2.0f64..0.0, s in 0usize..4, seed in 0u64..50) {
        let tg = TimeGrid::uniform(1.0, 8).unwrap();
        let g = Grid::interval(0.0, PI, 15).unwrap();
        let coeffs = CoefficientSet::<f64>::heat(1, 0.5).with_potential(move |x, _| c * (1.0 + x[0].sin()));
        let b = fk_simulate(&coeffs, &g, &tg, [PI / 2.0, 0.0], s, &FkSettings { paths: 64, seed, substeps: 4 }).unwrap();
        for p in 0..64 {
            let mut prev = 1.0;
            prop_assert_eq!(b.gamma(p, s), 1.0);
            for k in s + 1..=8 {
                let gk = b.gamma(p, k);
                // λ~ ≤ 0: the weight decays, never faster than e^{2c Δt}
                prop_assert!(gk <= prev * (1.0 + 1e-15));
                prop_assert!(gk >= prev * (2.0 * c * tg.dt(k - 1)).exp() * (1.0 - 1e-12));
                prev = gk;
            }
        }
    }

    #[test]
    fn hedge_is_homogeneous_in_the_payoff(alpha in -4.0f64..4.0) {
        let base = MarketParams::new(0.2, 0.2, 1.0, 0.5, 2.0, 1.0).with_payoff(Payoff::sine(1.0, 0.5, 2.0));
        let scaled = base.clone().with_payoff(base.payoff.scaled(alpha));
        let grid = base.grid(15).unwrap();
        let times = TimeGrid::uniform(1.0, 4).unwrap();
        let lat = nlspde::NoiseLattice::new(1, &times).unwrap();
        let opts = SolveOptions::default();
        let u = solve_hedge_spde(&base, &grid, &times, &lat, 0.5, &opts).unwrap().solution;
        let v = solve_hedge_spde(&scaled, &grid, &times, &lat, 0.5, &opts).unwrap().solution;
        for k in 0..=4 {
            for node in 0..lat.nodes_at(k) {
                for (a, b) in u.u.at(k, node).iter().zip(v.u.at(k, node)) {
                    prop_assert!((alpha * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                }
            }
        }
    }
}

#[test]
fn single_precision_tracks_double() {
    let m32 = Model::<f32>::new(
        CoefficientSet::heat(1, 1.0),
        Grid::interval(0.0, std::f32::consts::PI, 15).unwrap(),
        TimeGrid::uniform(1.0, 8).unwrap(),
    )
    .unwrap();
    let m64 = Model::<f64>::new(CoefficientSet::heat(1, 1.0), Grid::interval(0.0, PI, 15).unwrap(), TimeGrid::uniform(1.0, 8).unwrap())
        .unwrap();
    let xi32 = m32.grid.sample(|x| x[0].sin());
    let xi64 = m64.grid.sample(|x| x[0].sin());
    let e32 = NonlocalEngine::new(m32, 0.5, &NonlocalCondition::kappa(Direction::Forward, 0.5)).unwrap();
    let e64 = NonlocalEngine::new(m64, 0.5, &NonlocalCondition::kappa(Direction::Forward, 0.5)).unwrap();
    let (u32_, _) = e32.solve_pde(None, &xi32, &SolveOptions::default()).unwrap();
    let (u64_, _) = e64.solve_pde(None, &xi64, &SolveOptions::default()).unwrap();
    for (a, b) in u32_.values.iter().flatten().zip(u64_.values.iter().flatten()) {
        assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b}");
    }
}
