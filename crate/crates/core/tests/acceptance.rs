//! The acceptance suite: ten end-to-end criteria, one line each.
//!
//! Runs as a plain binary (no libtest harness) so the report lines are
//! always printed; exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nlspde::cauchy::{energy_report_first, energy_report_second, CauchySolver};
use nlspde::discretization::{CoefficientSet, DiscreteNorms, Grid, Model, TimeGrid};
use nlspde::duality::duality_residual;
use nlspde::fk::{fk_simulate, martingale_test, FkSettings};
use nlspde::harness::{run_experiment, ExperimentConfig, RunStatus};
use nlspde::lattice::{
    conditional_expectation, martingale_part, stochastic_integral, AdaptedField, LatticeLayout, NoiseLattice,
};
use nlspde::nonlocal::{Method, NonlocalCondition, NonlocalDatum, NonlocalEngine, SolveOptions, VerdictStatus};
use nlspde::portfolio::{simulate_market, solve_hedge_spde, stagnation_check, wealth_process, MarketParams, Payoff};
use nlspde::spde::Forcing;
use nlspde::Direction;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn heat_model(m: usize, k: usize) -> Model<f64> {
    Model::new(CoefficientSet::heat(1, 1.0), Grid::interval(0.0, PI, m).unwrap(), TimeGrid::uniform(1.0, k).unwrap())
        .unwrap()
}

/// `(1/h²) tridiag(1, −2, 1)` on `m` interior nodes of `(0, π)`.
fn dirichlet_laplacian(m: usize) -> DMatrix<f64> {
    let h = PI / (m + 1) as f64;
    DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
        0 => -2.0 / (h * h),
        1 => 1.0 / (h * h),
        _ => 0.0,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn cauchy_reduction() -> Outcome {
    let model = heat_model(63, 64);
    let grid = model.grid.clone();
    let times = model.times.clone();
    let xi = grid.sample(|x| x[0].sin() + 0.3 * (3.0 * x[0]).sin());
    let forcing: Vec<Vec<f64>> = (0..64).map(|k| grid.sample(|x| x[0] * (PI - x[0]) * (1.0 + times.knot(k)))).collect();
    let start = Instant::now();
    let engine = NonlocalEngine::new(model.clone(), 0.5, &NonlocalCondition::kappa(Direction::Forward, 0.0)).unwrap();
    let (u, _) = engine.solve_pde(Some(&forcing), &xi, &SolveOptions::default()).unwrap();
    let elapsed = start.elapsed();
    let plain = CauchySolver::new(model.generator.clone(), times.clone(), 0.5).unwrap().solve_forward(&xi, Some(&forcing)).unwrap();
    let with_zero_kernel = NonlocalEngine::new(
        model,
        0.5,
        &NonlocalCondition::cauchy(Direction::Forward).with_kernel(vec![0.0; times.knots().len()]),
    )
    .unwrap()
    .solve_pde(Some(&forcing), &xi, &SolveOptions::default())
    .unwrap()
    .0;
    let err = u
        .values
        .iter()
        .zip(&plain.values)
        .chain(with_zero_kernel.values.iter().zip(&plain.values))
        .map(|(a, b)| max_abs_diff(a, b))
        .fold(0.0, f64::max);
    outcome(err <= 1e-12 && elapsed < Duration::from_secs(1), format!("max|diff| = {err:.2e}, {elapsed:.2?}"))
}

fn eigen_oracle() -> Outcome {
    let (m, k, dt) = (63, 64, 1.0 / 64.0);
    let eig = SymmetricEigen::new(dirichlet_laplacian(m));
    let coeffs: Vec<f64> = (0..m).map(|j| 1.0 + j as f64 / m as f64).collect();
    let phi: DVector<f64> = (0..m).fold(DVector::zeros(m), |acc, j| acc + eig.eigenvectors.column(j) * coeffs[j]);
    let rho: Vec<f64> = eig.eigenvalues.iter().map(|mu| (1.0 - dt * mu).powi(-(k as i32))).collect();
    let ks = [-1.0, -0.5, 0.5, 1.0];
    let oracle: Vec<Vec<f64>> = ks.iter().map(|kk| coeffs.iter().zip(&rho).map(|(c, r)| c / (1.0 - kk * r)).collect()).collect();

    let start = Instant::now();
    let model = heat_model(m, k);
    let mut worst = 0.0f64;
    for (kk, want) in ks.iter().zip(&oracle) {
        let engine = NonlocalEngine::new(model.clone(), 1.0, &NonlocalCondition::kappa(Direction::Forward, *kk)).unwrap();
        let (u, _) = engine.solve_pde(None, phi.as_slice(), &SolveOptions::default()).unwrap();
        let u0 = DVector::from_column_slice(u.initial());
        for (j, w) in want.iter().enumerate() {
            let a = eig.eigenvectors.column(j).dot(&u0);
            worst = worst.max((a - w).abs() / w.abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(worst <= 1e-8 && elapsed < Duration::from_secs(5), format!("max relative mode error {worst:.2e}, {elapsed:.2?}"))
}

fn quasi_periodic_backward_spde() -> Outcome {
    let start = Instant::now();
    let grid = Grid::interval(0.0, PI, 31).unwrap();
    let times = TimeGrid::uniform(1.0, 8).unwrap();
    let coeffs = CoefficientSet::<f64>::heat(1, 1.0).with_noise(|x, _| [0.5 * x[0].sin(), 0.0], |_, _| 0.0);
    let model = Model::new(coeffs, grid.clone(), times.clone()).unwrap();
    let lat = NoiseLattice::new(1, &times).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xi: Vec<Vec<f64>> = (0..lat.nodes_at(8))
        .map(|_| grid.sample(|x| x[0].sin() + rng.random_range(-0.5..0.5) * (2.0 * x[0]).sin()))
        .collect();
    let mut worst = 0.0f64;
    for kappa in [-1.0, 0.0, 0.5, 1.0] {
        let engine = NonlocalEngine::new(model.clone(), 0.5, &NonlocalCondition::kappa(Direction::Backward, kappa)).unwrap();
        let (sol, _) = engine
            .solve_spde(&lat, Forcing::Zero, Vec::new(), &NonlocalDatum::Leaves(xi.clone()), &SolveOptions::default())
            .unwrap();
        let u0 = sol.u.at(0, 0);
        for (leaf, x) in xi.iter().enumerate() {
            let end = sol.u.at(8, leaf);
            for i in 0..end.len() {
                worst = worst.max((end[i] - kappa * u0[i] - x[i]).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(worst <= 1e-8 && elapsed < Duration::from_secs(30), format!("max leaf residual {worst:.2e}, {elapsed:.2?}"))
}

fn duality() -> Outcome {
    let start = Instant::now();
    let heat = heat_model(15, 8);
    let variable = Model::new(
        CoefficientSet::<f64>::new(1)
            .with_scalar_diffusion(|x, _| 1.0 + 0.5 * x[0].sin())
            .with_drift(|x, _| [0.3 * x[0].cos(), 0.0])
            .with_potential(|x, _| -0.2 - 0.1 * x[0]),
        Grid::interval(0.0, PI, 15).unwrap(),
        TimeGrid::uniform(1.0, 8).unwrap(),
    )
    .unwrap();
    let mut worst = 0.0f64;
    for model in [&heat, &variable] {
        for theta in [0.5, 1.0] {
            worst = worst.max(duality_residual(model, theta, 0.7).unwrap());
        }
    }
    let elapsed = start.elapsed();
    outcome(worst <= 1e-10 && elapsed < Duration::from_secs(5), format!("max relative transpose defect {worst:.2e}, {elapsed:.2?}"))
}

fn neumann_vs_direct() -> Outcome {
    let times = TimeGrid::uniform(1.0, 16).unwrap();
    let grid = Grid::interval(0.0, PI, 31).unwrap();
    let cooled = Model::new(CoefficientSet::heat(1, 0.5).with_potential(|_, _| -0.3), grid.clone(), times.clone()).unwrap();
    let heat = Model::new(CoefficientSet::heat(1, 1.0), grid.clone(), times.clone()).unwrap();
    let cases = vec![
        (heat.clone(), NonlocalCondition::kappa(Direction::Forward, 0.5)),
        (heat.clone(), NonlocalCondition::kappa(Direction::Backward, -1.0)),
        (cooled.clone(), NonlocalCondition::cauchy(Direction::Forward).with_kernel_fn(&times, |t| 0.8 * (1.0 + t) / 1.5)),
        (cooled, NonlocalCondition::cauchy(Direction::Forward).with_mass(0.25, 0.4).with_mass(1.0, -0.5)),
        (heat, NonlocalCondition::kappa(Direction::Forward, 2.0)),
    ];
    let xi = grid.sample(|x| x[0] * (PI - x[0]));
    let forcing: Vec<Vec<f64>> = (0..16).map(|_| grid.sample(|x| x[0].cos())).collect();
    let neumann = SolveOptions { method: Method::Neumann, tol: 1e-15, max_iter: 100_000 };
    let (mut worst, mut compared) = (0.0f64, 0);
    for (model, cond) in cases {
        let engine = NonlocalEngine::new(model, 0.5, &cond).unwrap();
        let (direct, report) = engine.solve_pde(Some(&forcing), &xi, &SolveOptions::default()).unwrap();
        if report.q_norm > 0.9 {
            continue;
        }
        let (series, _) = engine.solve_pde(Some(&forcing), &xi, &neumann).unwrap();
        for (a, b) in direct.values.iter().zip(&series.values) {
            worst = worst.max(max_abs_diff(a, b));
        }
        compared += 1;
    }
    outcome(worst <= 1e-8 && compared >= 4, format!("{compared} instances with |Q| <= 0.9, max|diff| = {worst:.2e}"))
}

fn martingale_property() -> Outcome {
    let start = Instant::now();
    let model = heat_model(63, 16);
    let u = CauchySolver::new(model.generator.clone(), model.times.clone(), 0.5)
        .unwrap()
        .solve_backward(&model.grid.sample(|x| x[0].sin()), None)
        .unwrap();
    let settings = FkSettings { paths: 100_000, seed: 20, substeps: 16 };
    let batch = fk_simulate(&model.coeffs, &model.grid, &model.times, [PI / 2.0, 0.0], 0, &settings).unwrap();
    let r = martingale_test(&u, &model.grid, &batch, &[2, 4, 6, 8, 10, 12, 14, 16]).unwrap();
    let elapsed = start.elapsed();
    outcome(
        r.pass && r.checkpoints.len() == 8 && elapsed < Duration::from_secs(60),
        format!("max z = {:.2}, exit fraction {:.3}, {elapsed:.2?}", r.max_z, r.exit_fraction),
    )
}

fn neumaier(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

/// Every branch sequence of length `len`, each component in `0..branches`.
fn sequences(branches: usize, len: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..branches.pow(len as u32)).map(move |mut code| {
        (0..len)
            .map(|_| {
                let b = code % branches;
                code /= branches;
                b
            })
            .collect()
    })
}

/// Tower property, Itô isometry and martingale reconstruction against
/// brute-force enumeration of every path. Returns the largest defect.
fn lattice_defect(n: usize, k: usize, layout: LatticeLayout, rng: &mut ChaCha8Rng) -> f64 {
    let times = TimeGrid::uniform(1.0, k).unwrap();
    let lat = NoiseLattice::with_layout(n, &times, layout).unwrap();
    let nb = lat.branches();
    let dt = 1.0 / k as f64;
    let mut worst = 0.0f64;

    let terminal = AdaptedField::from_fn(&lat, k, 1, |kk, _| vec![if kk == k { rng.random_range(-1.0..1.0) } else { 0.0 }]);
    for k1 in 0..k {
        let direct = conditional_expectation(&lat, &terminal, k, k1).unwrap();
        for node in 0..lat.nodes_at(k1) {
            let brute = neumaier(sequences(nb, k - k1).map(|seq| {
                let leaf = seq.iter().enumerate().fold(node, |nd, (i, b)| lat.child(k1 + i, nd, *b));
                terminal.at(k, leaf)[0]
            })) / (nb.pow((k - k1) as u32)) as f64;
            worst = worst.max((direct[node][0] - brute).abs());
        }
        for k2 in k1 + 1..k {
            let inner = conditional_expectation(&lat, &terminal, k, k2).unwrap();
            let field = AdaptedField::from_fn(&lat, k2, 1, |kk, node| vec![if kk == k2 { inner[node][0] } else { 0.0 }]);
            let outer = conditional_expectation(&lat, &field, k2, k1).unwrap();
            for (a, b) in outer.iter().zip(&direct) {
                worst = worst.max((a[0] - b[0]).abs());
            }
        }
    }

    // random adapted integrands, one per component
    let zeta: Vec<AdaptedField<f64>> =
        (0..n).map(|_| AdaptedField::from_fn(&lat, k - 1, 1, |_, _| vec![rng.random_range(-1.0..1.0)])).collect();
    let paths: Vec<Vec<usize>> = sequences(nb, k).collect();
    let integrals: Vec<Vec<f64>> = paths
        .iter()
        .map(|seq| {
            let mut node = 0;
            let mut acc = vec![0.0; n];
            for (m, &b) in seq.iter().enumerate() {
                for j in 0..n {
                    acc[j] += zeta[j].at(m, node)[0] * lat.increment(m, b, j);
                }
                node = lat.child(m, node, b);
            }
            acc
        })
        .collect();
    let quad: Vec<f64> = paths
        .iter()
        .map(|seq| {
            let mut node = 0;
            let mut acc = vec![0.0; n];
            for (m, &b) in seq.iter().enumerate() {
                for j in 0..n {
                    acc[j] += zeta[j].at(m, node)[0].powi(2) * dt;
                }
                node = lat.child(m, node, b);
            }
            acc.iter().sum::<f64>()
        })
        .collect();
    let count = paths.len() as f64;
    for i in 0..n {
        worst = worst.max((neumaier(integrals.iter().map(|v| v[i])) / count).abs());
        for j in 0..n {
            let cross = neumaier(integrals.iter().map(|v| v[i] * v[j])) / count;
            let want = if i == j {
                neumaier(paths.iter().map(|seq| {
                    let mut node = 0;
                    let mut acc = 0.0;
                    for (m, &b) in seq.iter().enumerate() {
                        acc += zeta[i].at(m, node)[0].powi(2) * dt;
                        node = lat.child(m, node, b);
                    }
                    acc
                })) / count
            } else {
                0.0
            };
            worst = worst.max((cross - want).abs());
        }
    }
    let total_isometry = neumaier(integrals.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>())) / count;
    worst = worst.max((total_isometry - neumaier(quad.iter().copied()) / count).abs());

    // the library integral agrees path by path where it is defined
    if layout == LatticeLayout::Tree {
        let lib = stochastic_integral(&lat, &zeta[0], 0, k).unwrap();
        for (seq, v) in paths.iter().zip(&integrals) {
            let leaf = seq.iter().enumerate().fold(0, |nd, (m, b)| lat.child(m, nd, *b));
            worst = worst.max((lib.at(k, leaf)[0] - v[0]).abs());
        }
    } else {
        // ∫w dw recombines; E[(∫w dw)²] = Σ t_m Δτ
        let w = AdaptedField::from_fn(&lat, k - 1, 1, |kk, node| vec![lat.w(kk, node, 0)]);
        let iw = stochastic_integral(&lat, &w, 0, k).unwrap();
        let second = neumaier((0..lat.nodes_at(k)).map(|leaf| lat.probability(k, leaf) * iw.at(k, leaf)[0].powi(2)));
        let want = neumaier((0..k).map(|m| m as f64 * dt * dt));
        worst = worst.max((second - want).abs());
    }

    // reconstruction: fields affine in each Δw are represented exactly
    for step in 0..k {
        let base: Vec<f64> = (0..lat.nodes_at(step)).map(|_| rng.random_range(-1.0..1.0)).collect();
        let slope: Vec<Vec<f64>> = (0..lat.nodes_at(step)).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut next = vec![vec![0.0]; lat.nodes_at(step + 1)];
        for node in 0..lat.nodes_at(step) {
            for b in 0..nb {
                let v = base[node] + (0..n).map(|j| slope[node][j] * lat.increment(step, b, j)).sum::<f64>();
                // shared children on a recombining lattice keep the last
                // write, so the exact comparison below is tree-only
                next[lat.child(step, node, b)] = vec![v];
            }
        }
        let part = martingale_part(&lat, step, &next);
        if layout == LatticeLayout::Tree || lat.nodes_at(step) == 1 {
            worst = worst.max(part.residual);
            for node in 0..lat.nodes_at(step) {
                worst = worst.max((part.predictable[node][0] - base[node]).abs());
                for j in 0..n {
                    worst = worst.max((part.chi[j][node][0] - slope[node][j]).abs());
                }
            }
        }
        if n == 1 {
            // any field on a binary step is affine in Δw
            worst = worst.max(part.residual);
        }
    }
    worst
}

fn lattice_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for layout in [LatticeLayout::Recombining, LatticeLayout::Tree] {
        for n in 1..=3usize {
            for k in 1..=16usize {
                if n * k > 16 {
                    continue;
                }
                let times = TimeGrid::uniform(1.0, k).unwrap();
                let Ok(lat) = NoiseLattice::with_layout(n, &times, layout) else { continue };
                if lat.total_nodes() > 10_000 {
                    continue;
                }
                worst = worst.max(lattice_defect(n, k, layout, &mut rng));
                checked += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{checked} lattices, max defect {worst:.2e}"))
}

fn portfolio_stagnation() -> Outcome {
    let start = Instant::now();
    let mp = MarketParams::new(0.2, 0.2, 1.0, 0.5, 2.0, 1.0).with_payoff(Payoff::sine(1.0, 0.5, 2.0));
    let grid = mp.grid(31).unwrap();
    let times = TimeGrid::uniform(1.0, 8).unwrap();
    let lat = NoiseLattice::new(1, &times).unwrap();
    let hedge = solve_hedge_spde(&mp, &grid, &times, &lat, 0.5, &SolveOptions::default()).unwrap();
    let stagnation = stagnation_check(&hedge.solution, &hedge.xi).unwrap();
    let paths = simulate_market(&mp, 100_000, &times, 2024, 8).unwrap();
    let report = wealth_process(&hedge.solution, &lat, &grid, &hedge.xi, &paths, 10).unwrap();
    let elapsed = start.elapsed();
    outcome(
        stagnation <= 1e-8 && report.martingale.pass && elapsed < Duration::from_secs(120),
        format!("stagnation residual {stagnation:.2e}, max z = {:.2}, {elapsed:.2?}", report.martingale.max_z),
    )
}

fn energy_boundedness() -> Outcome {
    let mut ratios: Vec<(f64, f64)> = Vec::new();
    for level in 0..3 {
        let m = 16 << level;
        let k = 8 << level;
        let model = heat_model(m - 1, k);
        let grid = model.grid.clone();
        let times = model.times.clone();
        let xi = grid.sample(|x| x[0].sin() + 0.5 * (2.0 * x[0]).sin());
        let forcing: Vec<Vec<f64>> = (0..k).map(|s| grid.sample(|x| (x[0] * (PI - x[0])) * (1.0 + times.knot(s)))).collect();
        let engine = NonlocalEngine::new(model, 0.5, &NonlocalCondition::kappa(Direction::Forward, 0.5)).unwrap();
        let (u, _) = engine.solve_pde(Some(&forcing), &xi, &SolveOptions::default()).unwrap();
        let norms = DiscreteNorms::new(&grid).unwrap();
        ratios.push((
            energy_report_first(&u, &norms, Some(&forcing), &xi).ratio,
            energy_report_second(&u, &norms, Some(&forcing), &xi).ratio,
        ));
    }
    let change = ratios
        .windows(2)
        .flat_map(|w| [(w[1].0 / w[0].0 - 1.0).abs(), (w[1].1 / w[0].1 - 1.0).abs()])
        .fold(0.0, f64::max);
    let shown: Vec<String> = ratios.iter().map(|(a, b)| format!("({a:.4}, {b:.4})")).collect();
    outcome(change <= 0.10, format!("ratios {}, max relative change {change:.3}", shown.join(" ")))
}

fn verdicts() -> Outcome {
    let model = heat_model(15, 8);
    let kappa = NonlocalEngine::new(model.clone(), 0.5, &NonlocalCondition::kappa(Direction::Forward, 1.5)).unwrap().verdict();
    let cooled = Model::new(CoefficientSet::heat(1, 1.0).with_potential(|_, _| -0.1), model.grid.clone(), model.times.clone()).unwrap();
    let kernel = NonlocalEngine::new(cooled, 0.5, &NonlocalCondition::cauchy(Direction::Forward).with_kernel_fn(&model.times, |_| 0.8))
        .unwrap()
        .verdict();

    // k = 1/ρ₁ for the implicit Euler propagator of the first mode
    let eig = SymmetricEigen::new(dirichlet_laplacian(15));
    let mu1 = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let k_sing = (1.0 - mu1 / 8.0).powi(8);
    let cfg = ExperimentConfig::from_toml_str(&format!(
        r#"
kind = "forward-pde"
[grid]
axes = [{{ lo = "0", hi = "pi", nodes = 15 }}]
[time]
horizon = "1"
steps = 8
[coefficients]
diffusion = {{ kind = "constant", value = "1" }}
[condition]
kappa = "{k_sing:?}"
[data]
datum = {{ kind = "sine-mode", modes = [1] }}
[solver]
theta = "1"
"#
    ))
    .unwrap();
    let run = run_experiment(&cfg, None).unwrap();
    let singular = run.report.verdict.as_ref().map(|v| v.status);
    let pass = kappa.kappa_label() == "NotGuaranteedKappa"
        && kernel.status == VerdictStatus::GuaranteedKernelMass
        && singular == Some(VerdictStatus::SingularDetected)
        && run.status == RunStatus::Singular
        && run.status.code() == 3;
    outcome(
        pass,
        format!(
            "kappa 1.5 -> {}, kernel mass 0.8 -> {}, k = {k_sing:.6} -> {:?} (exit {})",
            kappa.kappa_label(),
            kernel.status,
            singular,
            run.status.code()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("cauchy reduction", cauchy_reduction),
        ("eigen oracle", eigen_oracle),
        ("quasi-periodic backward spde", quasi_periodic_backward_spde),
        ("duality transpose", duality),
        ("neumann vs direct", neumann_vs_direct),
        ("martingale property", martingale_property),
        ("lattice exactness", lattice_exactness),
        ("portfolio stagnation", portfolio_stagnation),
        ("energy boundedness", energy_boundedness),
        ("verdicts", verdicts),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!("acceptance {:>2} {:<30} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
