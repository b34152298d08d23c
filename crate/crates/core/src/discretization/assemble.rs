use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::scalar::Real;

use super::{CoefficientSet, Grid, OperatorForm, Point, TimeGrid};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorTag {
    Generator,
    Noise(usize),
    GeneratorAdjoint,
    NoiseAdjoint(usize),
}

/// Sparse discrete operator on the interior nodes of a grid.
#[derive(Debug, Clone)]
pub struct OperatorMatrix<T> {
    pub matrix: SparseMatrix<T>,
    /// Quadrature weight of the discrete `H^0` inner product.
    pub weight: T,
    pub tag: OperatorTag,
    pub time: T,
}

impl<T: Real> OperatorMatrix<T> {
    pub fn apply(&self, v: &[T]) -> Vec<T> {
        self.matrix.matvec(v)
    }

    pub fn len(&self) -> usize {
        self.matrix.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn to_f64_point<T: Real>(p: &Point<T>) -> [f64; 2] {
    [p[0].as_f64(), p[1].as_f64()]
}

/// Checked access to the coefficient samplers.
struct Sampler<'a, T> {
    c: &'a CoefficientSet<T>,
    t: T,
}

impl<T: Real> Sampler<'_, T> {
    fn finite(&self, name: &'static str, x: &Point<T>, vals: &[T]) -> Result<()> {
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::UnsampledCoefficient { name, x: to_f64_point(x), t: self.t.as_f64() })
        }
    }

    fn b(&self, x: &Point<T>) -> Result<[[T; 2]; 2]> {
        let b = (self.c.diffusion)(x, self.t);
        self.finite("b", x, &[b[0][0], b[0][1], b[1][0], b[1][1]])?;
        if self.c.dim == 2 {
            let asym = (b[0][1] - b[1][0]).abs();
            if asym > T::lit(SYMMETRY_TOL) {
                return Err(Error::NonSymmetricDiffusion {
                    x: to_f64_point(x),
                    t: self.t.as_f64(),
                    asym: asym.as_f64(),
                });
            }
        }
        Ok(b)
    }

    fn f(&self, x: &Point<T>) -> Result<[T; 2]> {
        let f = (self.c.drift)(x, self.t);
        self.finite("f", x, &f[..self.c.dim])?;
        Ok(f)
    }

    fn lambda(&self, x: &Point<T>) -> Result<T> {
        let l = (self.c.potential)(x, self.t);
        self.finite("lambda", x, &[l])?;
        Ok(l)
    }

    fn beta(&self, i: usize, x: &Point<T>) -> Result<[T; 2]> {
        let b = (self.c.noise_drift[i])(x, self.t);
        self.finite("beta", x, &b[..self.c.dim])?;
        Ok(b)
    }

    fn beta_bar(&self, i: usize, x: &Point<T>) -> Result<T> {
        let b = (self.c.noise_potential[i])(x, self.t);
        self.finite("beta_bar", x, &[b])?;
        Ok(b)
    }
}

/// Triplet collector that drops couplings to boundary nodes.
struct Stencil<'g, T> {
    grid: &'g Grid<T>,
    trip: Vec<(usize, usize, T)>,
}

impl<'g, T: Real> Stencil<'g, T> {
    fn new(grid: &'g Grid<T>) -> Self {
        Self { grid, trip: Vec::with_capacity(grid.len() * (1 + 4 * grid.dim())) }
    }

    fn add(&mut self, row: usize, ij: [isize; 2], v: T) {
        if let Some(col) = self.grid.index(ij) {
            self.trip.push((row, col, v));
        }
    }

    fn finish(self) -> SparseMatrix<T> {
        let m = self.grid.len();
        SparseMatrix::from_triplets(m, m, self.trip)
    }
}

fn shift(ij: [isize; 2], axis: usize, d: isize) -> [isize; 2] {
    let mut out = ij;
    out[axis] += d;
    out
}

fn node_ij<T: Real>(grid: &Grid<T>, row: usize) -> [isize; 2] {
    let mi = grid.multi_index(row);
    [mi[0] as isize, mi[1] as isize]
}

/// Second-order terms; `adjoint` moves the coefficient inside the
/// derivative (non-divergence form only, divergence form is symmetric).
fn add_diffusion<T: Real>(st: &mut Stencil<'_, T>, s: &Sampler<'_, T>, form: OperatorForm, adjoint: bool) -> Result<()> {
    let grid = st.grid;
    let half = T::lit(0.5);
    let four = T::lit(4.0);
    for row in 0..grid.len() {
        let ij = node_ij(grid, row);
        let x = grid.point_at(ij);
        for a in 0..grid.dim() {
            let h = grid.axis(a).h;
            let h2 = h * h;
            match form {
                OperatorForm::Divergence => {
                    let mut xp = x;
                    let mut xm = x;
                    xp[a] += half * h;
                    xm[a] -= half * h;
                    let bp = s.b(&xp)?[a][a];
                    let bm = s.b(&xm)?[a][a];
                    st.add(row, shift(ij, a, 1), bp / h2);
                    st.add(row, ij, -(bp + bm) / h2);
                    st.add(row, shift(ij, a, -1), bm / h2);
                }
                OperatorForm::NonDivergence if !adjoint => {
                    let b = s.b(&x)?[a][a];
                    st.add(row, shift(ij, a, 1), b / h2);
                    st.add(row, ij, -(b + b) / h2);
                    st.add(row, shift(ij, a, -1), b / h2);
                }
                OperatorForm::NonDivergence => {
                    let (p, m) = (shift(ij, a, 1), shift(ij, a, -1));
                    let bp = s.b(&grid.point_at(p))?[a][a];
                    let b0 = s.b(&x)?[a][a];
                    let bm = s.b(&grid.point_at(m))?[a][a];
                    st.add(row, p, bp / h2);
                    st.add(row, ij, -(b0 + b0) / h2);
                    st.add(row, m, bm / h2);
                }
            }
        }
        if grid.dim() == 2 {
            let q = four * grid.axis(0).h * grid.axis(1).h;
            let corner = |di: isize, dj: isize| [ij[0] + di, ij[1] + dj];
            match form {
                OperatorForm::Divergence => {
                    // d/dx (b01 d/dy v)
                    let bx_p = s.b(&grid.point_at(shift(ij, 0, 1)))?[0][1];
                    let bx_m = s.b(&grid.point_at(shift(ij, 0, -1)))?[0][1];
                    st.add(row, corner(1, 1), bx_p / q);
                    st.add(row, corner(1, -1), -bx_p / q);
                    st.add(row, corner(-1, 1), -bx_m / q);
                    st.add(row, corner(-1, -1), bx_m / q);
                    // d/dy (b10 d/dx v)
                    let by_p = s.b(&grid.point_at(shift(ij, 1, 1)))?[1][0];
                    let by_m = s.b(&grid.point_at(shift(ij, 1, -1)))?[1][0];
                    st.add(row, corner(1, 1), by_p / q);
                    st.add(row, corner(-1, 1), -by_p / q);
                    st.add(row, corner(1, -1), -by_m / q);
                    st.add(row, corner(-1, -1), by_m / q);
                }
                OperatorForm::NonDivergence => {
                    for (di, dj, sign) in [(1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0)] {
                        let at = if adjoint { grid.point_at(corner(di, dj)) } else { x };
                        let b = s.b(&at)?;
                        st.add(row, corner(di, dj), T::lit(sign) * (b[0][1] + b[1][0]) / q);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Central first-order terms `c . grad v`, or `-div(c v)` when `adjoint`.
fn add_advection<T: Real>(
    st: &mut Stencil<'_, T>,
    mut coef: impl FnMut(&Point<T>) -> Result<[T; 2]>,
    adjoint: bool,
) -> Result<()> {
    let grid = st.grid;
    let two = T::lit(2.0);
    for row in 0..grid.len() {
        let ij = node_ij(grid, row);
        for a in 0..grid.dim() {
            let h = grid.axis(a).h;
            let (p, m) = (shift(ij, a, 1), shift(ij, a, -1));
            if adjoint {
                let cp = coef(&grid.point_at(p))?[a];
                let cm = coef(&grid.point_at(m))?[a];
                st.add(row, p, -cp / (two * h));
                st.add(row, m, cm / (two * h));
            } else {
                let c = coef(&grid.point_at(ij))?[a];
                st.add(row, p, c / (two * h));
                st.add(row, m, -c / (two * h));
            }
        }
    }
    Ok(())
}

fn add_diagonal<T: Real>(st: &mut Stencil<'_, T>, mut coef: impl FnMut(&Point<T>) -> Result<T>) -> Result<()> {
    for row in 0..st.grid.len() {
        let x = st.grid.coords(row);
        let v = coef(&x)?;
        st.trip.push((row, row, v));
    }
    Ok(())
}

/// Discrete generator `A` at time `t`.
pub fn assemble_generator<T: Real>(coeffs: &CoefficientSet<T>, grid: &Grid<T>, t: T) -> Result<OperatorMatrix<T>> {
    check_dim(coeffs, grid)?;
    let s = Sampler { c: coeffs, t };
    let mut st = Stencil::new(grid);
    add_diffusion(&mut st, &s, coeffs.form, false)?;
    add_advection(&mut st, |x| s.f(x), false)?;
    add_diagonal(&mut st, |x| s.lambda(x))?;
    Ok(OperatorMatrix { matrix: st.finish(), weight: grid.weight(), tag: OperatorTag::Generator, time: t })
}

/// Discrete noise operator `B_i` (zero-based component `i`) at time `t`.
pub fn assemble_noise<T: Real>(coeffs: &CoefficientSet<T>, grid: &Grid<T>, t: T, i: usize) -> Result<OperatorMatrix<T>> {
    check_dim(coeffs, grid)?;
    let n = coeffs.noise_components();
    if i >= n {
        return Err(Error::ComponentOutOfRange { i, n });
    }
    let s = Sampler { c: coeffs, t };
    let mut st = Stencil::new(grid);
    add_advection(&mut st, |x| s.beta(i, x), false)?;
    add_diagonal(&mut st, |x| s.beta_bar(i, x))?;
    Ok(OperatorMatrix { matrix: st.finish(), weight: grid.weight(), tag: OperatorTag::Noise(i), time: t })
}

/// Adjoints `A*` and `B_i*` assembled from their own formulas (not by
/// transposition), so that discrete duality is a genuine check.
pub fn assemble_adjoints<T: Real>(
    coeffs: &CoefficientSet<T>,
    grid: &Grid<T>,
    t: T,
) -> Result<(OperatorMatrix<T>, Vec<OperatorMatrix<T>>)> {
    check_dim(coeffs, grid)?;
    let s = Sampler { c: coeffs, t };
    let mut st = Stencil::new(grid);
    add_diffusion(&mut st, &s, coeffs.form, true)?;
    add_advection(&mut st, |x| s.f(x), true)?;
    add_diagonal(&mut st, |x| s.lambda(x))?;
    let a_star =
        OperatorMatrix { matrix: st.finish(), weight: grid.weight(), tag: OperatorTag::GeneratorAdjoint, time: t };
    let mut b_star = Vec::with_capacity(coeffs.noise_components());
    for i in 0..coeffs.noise_components() {
        let mut st = Stencil::new(grid);
        add_advection(&mut st, |x| s.beta(i, x), true)?;
        add_diagonal(&mut st, |x| s.beta_bar(i, x))?;
        b_star.push(OperatorMatrix {
            matrix: st.finish(),
            weight: grid.weight(),
            tag: OperatorTag::NoiseAdjoint(i),
            time: t,
        });
    }
    Ok((a_star, b_star))
}

fn check_dim<T: Real>(coeffs: &CoefficientSet<T>, grid: &Grid<T>) -> Result<()> {
    if coeffs.dim != grid.dim() {
        return Err(Error::Shape(format!("coefficients are {}-D, grid is {}-D", coeffs.dim, grid.dim())));
    }
    Ok(())
}

/// Boundary positions (including corners) of the grid.
pub(crate) fn boundary_points<T: Real>(grid: &Grid<T>) -> Vec<Point<T>> {
    let mut out = Vec::new();
    if grid.dim() == 1 {
        let n = grid.axis(0).n as isize;
        out.push(grid.point_at([-1, 0]));
        out.push(grid.point_at([n, 0]));
    } else {
        let (nx, ny) = (grid.axis(0).n as isize, grid.axis(1).n as isize);
        for i in -1..=nx {
            out.push(grid.point_at([i, -1]));
            out.push(grid.point_at([i, ny]));
        }
        for j in 0..ny {
            out.push(grid.point_at([-1, j]));
            out.push(grid.point_at([nx, j]));
        }
    }
    out
}

/// Verifies that every `beta_i` vanishes on the boundary at every knot.
pub fn check_beta_vanishes_on_boundary<T: Real>(
    coeffs: &CoefficientSet<T>,
    grid: &Grid<T>,
    times: &TimeGrid<T>,
    tol: T,
) -> Result<()> {
    let pts = boundary_points(grid);
    for (i, beta) in coeffs.noise_drift.iter().enumerate() {
        for &t in times.knots() {
            for p in &pts {
                let b = beta(p, t);
                let mag = b[..coeffs.dim].iter().fold(T::zero(), |m, v| m.max(v.abs()));
                if !(mag <= tol) {
                    return Err(Error::BetaOnBoundary { i, x: to_f64_point(p), value: mag.as_f64() });
                }
            }
        }
    }
    Ok(())
}

/// One operator per knot, sharing storage when coefficients are
/// time-independent.
#[derive(Debug, Clone)]
pub struct OperatorSchedule<T> {
    ops: Vec<OperatorMatrix<T>>,
    at_knot: Vec<usize>,
}

impl<T: Real> OperatorSchedule<T> {
    pub fn build(
        times: &TimeGrid<T>,
        time_independent: bool,
        mut assemble: impl FnMut(T) -> Result<OperatorMatrix<T>>,
    ) -> Result<Self> {
        if time_independent {
            let op = assemble(times.knot(0))?;
            Ok(Self { ops: vec![op], at_knot: vec![0; times.knots().len()] })
        } else {
            let ops = times.knots().iter().map(|&t| assemble(t)).collect::<Result<Vec<_>>>()?;
            Ok(Self { at_knot: (0..ops.len()).collect(), ops })
        }
    }

    pub fn at(&self, knot: usize) -> &OperatorMatrix<T> {
        &self.ops[self.at_knot[knot]]
    }

    /// Identifier of the distinct operator used at `knot`.
    pub fn id(&self, knot: usize) -> usize {
        self.at_knot[knot]
    }

    pub fn knots(&self) -> usize {
        self.at_knot.len()
    }

    /// Schedule of transposed matrices.
    pub fn transposed(&self, tag: OperatorTag) -> Self {
        let ops = self
            .ops
            .iter()
            .map(|o| OperatorMatrix { matrix: o.matrix.transpose(), weight: o.weight, tag, time: o.time })
            .collect();
        Self { ops, at_knot: self.at_knot.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lap3() -> (Grid<f64>, OperatorMatrix<f64>) {
        let g = Grid::<f64>::interval(0.0, PI, 3).unwrap();
        let a = assemble_generator(&CoefficientSet::heat(1, 1.0), &g, 0.0).unwrap();
        (g, a)
    }

    #[test]
    fn heat_stencil_on_three_nodes() {
        let (g, a) = lap3();
        let h2 = g.axis(0).h.powi(2);
        let expected = [[-2.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.matrix.get(i, j) - expected[i][j] / h2).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn potential_shifts_the_diagonal() {
        let (g, a) = lap3();
        let shifted = assemble_generator(&CoefficientSet::heat(1, 1.0).with_potential(|_, _| -1.0), &g, 0.0).unwrap();
        let diff = a.matrix.shifted(-1.0, 1.0);
        assert!(shifted.matrix.max_abs_diff(&diff) < 1e-14);
    }

    #[test]
    fn single_node_generator() {
        let g = Grid::coarse(&[(0.0, PI, 1)]).unwrap();
        let a = assemble_generator(&CoefficientSet::heat(1, 1.0), &g, 0.0).unwrap();
        assert!((a.matrix.get(0, 0) + 8.0 / (PI * PI)).abs() < 1e-15);
        assert!((a.matrix.get(0, 0) + 0.810_57).abs() < 1e-5);
    }

    #[test]
    fn noise_operator_edge_cases() {
        let g = Grid::<f64>::interval(0.0, PI, 4).unwrap();
        let zero = CoefficientSet::<f64>::new(1).with_noise(|_, _| [0.0, 0.0], |_, _| 0.0);
        let b = assemble_noise(&zero, &g, 0.0, 0).unwrap();
        assert_eq!(b.matrix.to_dense().max_abs(), 0.0);
        let ident = CoefficientSet::<f64>::new(1).with_noise(|_, _| [0.0, 0.0], |_, _| 1.0);
        let b = assemble_noise(&ident, &g, 0.0, 0).unwrap();
        assert!(b.matrix.max_abs_diff(&SparseMatrix::identity(4)) == 0.0);
        assert!(matches!(assemble_noise(&ident, &g, 0.0, 1), Err(Error::ComponentOutOfRange { i: 1, n: 1 })));
    }

    #[test]
    fn sine_weighted_first_difference_by_hand() {
        let g = Grid::<f64>::interval(0.0, PI, 3).unwrap();
        let c = CoefficientSet::<f64>::new(1).with_noise(|x, _| [x[0].sin(), 0.0], |_, _| 0.0);
        let b = assemble_noise(&c, &g, 0.0, 0).unwrap().matrix.to_dense();
        let h = PI / 4.0;
        let (s1, s2, s3) = ((PI / 4.0).sin(), 1.0, (3.0 * PI / 4.0).sin());
        let expected = [
            [0.0, s1 / (2.0 * h), 0.0],
            [-s2 / (2.0 * h), 0.0, s2 / (2.0 * h)],
            [0.0, -s3 / (2.0 * h), 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((b[(i, j)] - expected[i][j]).abs() < 1e-14, "({i},{j})");
            }
        }
    }

    #[test]
    fn adjoint_of_constant_noise_potential_is_scaled_identity() {
        let g = Grid::<f64>::interval(0.0, 1.0, 5).unwrap();
        let c = CoefficientSet::<f64>::new(1).with_noise(|_, _| [0.0, 0.0], |_, _| 2.5);
        let (_, bs) = assemble_adjoints(&c, &g, 0.0).unwrap();
        assert!(bs[0].matrix.max_abs_diff(&SparseMatrix::identity(5).scale(2.5)) == 0.0);
    }

    #[test]
    fn self_adjoint_heat() {
        let g = Grid::<f64>::new(&[(0.0, 1.0, 4), (0.0, 2.0, 5)]).unwrap();
        let c = CoefficientSet::heat(2, 1.0).with_form(OperatorForm::NonDivergence);
        let a = assemble_generator(&c, &g, 0.0).unwrap();
        let (a_star, _) = assemble_adjoints(&c, &g, 0.0).unwrap();
        assert!(a.matrix.max_abs_diff(&a_star.matrix) < 1e-12);
    }

    #[test]
    fn rejects_nonsymmetric_diffusion() {
        let g = Grid::<f64>::new(&[(0.0, 1.0, 3), (0.0, 1.0, 3)]).unwrap();
        let c = CoefficientSet::new(2).with_diffusion(|_, _| [[1.0, 0.1], [0.0, 1.0]]);
        assert!(matches!(assemble_generator(&c, &g, 0.0), Err(Error::NonSymmetricDiffusion { .. })));
    }

    #[test]
    fn rejects_nonfinite_coefficients() {
        let g = Grid::<f64>::interval(0.0, 1.0, 3).unwrap();
        let c = CoefficientSet::<f64>::new(1).with_potential(|x, _| if x[0] > 0.6 { f64::NAN } else { 0.0 });
        assert!(matches!(assemble_generator(&c, &g, 0.0), Err(Error::UnsampledCoefficient { name: "lambda", .. })));
    }

    #[test]
    fn beta_boundary_check() {
        let g = Grid::<f64>::interval(0.0, PI, 5).unwrap();
        let tg = TimeGrid::<f64>::uniform(1.0, 2).unwrap();
        let ok = CoefficientSet::<f64>::new(1).with_noise(|x, _| [x[0].sin(), 0.0], |_, _| 0.0);
        check_beta_vanishes_on_boundary(&ok, &g, &tg, 1e-12).unwrap();
        let bad = CoefficientSet::<f64>::new(1).with_noise(|x, _| [x[0], 0.0], |_, _| 0.0);
        assert!(check_beta_vanishes_on_boundary(&bad, &g, &tg, 1e-12).is_err());
    }
}
