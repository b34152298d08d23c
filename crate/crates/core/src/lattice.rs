//! Binomial discretization of an `N`-component Wiener process: every
//! component moves by `±√Δτ` with probability ½, independently.
//!
//! Two layouts share one interface. `Recombining` keys nodes by per-component
//! up-counts, so step `k` has `(k+1)^N` nodes; `Tree` keeps every path apart
//! (`2^{Nk}` nodes) and can carry path-dependent quantities.

use serde::Serialize;

use crate::discretization::TimeGrid;
use crate::error::{Error, Result};
use crate::scalar::{CompensatedSum, Real};

/// Upper bound on the total node count over all steps.
pub const LATTICE_GUARD: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeLayout {
    Recombining,
    Tree,
}

#[derive(Debug, Clone)]
pub struct NoiseLattice<T> {
    components: usize,
    times: TimeGrid<T>,
    layout: LatticeLayout,
    sqrt_dt: Vec<T>,
    nodes: Vec<usize>,
    probabilities: Vec<Vec<T>>,
}

fn checked_nodes(layout: LatticeLayout, n: usize, k: usize) -> Option<usize> {
    match layout {
        LatticeLayout::Recombining => (k + 1).checked_pow(n as u32),
        LatticeLayout::Tree => n.checked_mul(k).and_then(|e| 1usize.checked_shl(e as u32)).filter(|_| n * k < 64),
    }
}

impl<T: Real> NoiseLattice<T> {
    /// Recombining lattice; requires equal steps.
    pub fn new(components: usize, times: &TimeGrid<T>) -> Result<Self> {
        Self::with_layout(components, times, LatticeLayout::Recombining)
    }

    /// Non-recombining (full binary) lattice.
    pub fn tree(components: usize, times: &TimeGrid<T>) -> Result<Self> {
        Self::with_layout(components, times, LatticeLayout::Tree)
    }

    pub fn with_layout(components: usize, times: &TimeGrid<T>, layout: LatticeLayout) -> Result<Self> {
        if components == 0 {
            return Err(Error::Condition("a lattice needs at least one noise component".into()));
        }
        if layout == LatticeLayout::Recombining {
            if let Some(step) = times.first_nonuniform_step() {
                return Err(Error::NonUniformSteps { step });
            }
        }
        let mut nodes = Vec::with_capacity(times.steps() + 1);
        let mut total = 0usize;
        for k in 0..=times.steps() {
            let c = checked_nodes(layout, components, k)
                .filter(|c| *c <= LATTICE_GUARD)
                .ok_or(Error::LatticeGuard { nodes: usize::MAX, limit: LATTICE_GUARD })?;
            total = total.saturating_add(c);
            if total > LATTICE_GUARD {
                return Err(Error::LatticeGuard { nodes: total, limit: LATTICE_GUARD });
            }
            nodes.push(c);
        }
        let sqrt_dt = (0..times.steps()).map(|k| times.dt(k).sqrt()).collect();
        let mut lat = Self { components, times: times.clone(), layout, sqrt_dt, nodes, probabilities: Vec::new() };
        lat.probabilities = lat.propagate_probabilities();
        Ok(lat)
    }

    fn propagate_probabilities(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::one()]];
        let w = self.branch_weight();
        for k in 0..self.steps() {
            let mut next = vec![T::zero(); self.nodes[k + 1]];
            for (node, p) in out[k].iter().enumerate() {
                for b in 0..self.branches() {
                    next[self.child(k, node, b)] += *p * w;
                }
            }
            out.push(next);
        }
        out
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn times(&self) -> &TimeGrid<T> {
        &self.times
    }

    pub fn layout(&self) -> LatticeLayout {
        self.layout
    }

    pub fn steps(&self) -> usize {
        self.times.steps()
    }

    /// Branches per step, `2^N`.
    pub fn branches(&self) -> usize {
        1 << self.components
    }

    /// Probability of each branch, `2^{-N}`.
    pub fn branch_weight(&self) -> T {
        T::one() / T::from_usize_lossy(self.branches())
    }

    pub fn nodes_at(&self, k: usize) -> usize {
        self.nodes[k]
    }

    pub fn total_nodes(&self) -> usize {
        self.nodes.iter().sum()
    }

    pub fn probability(&self, k: usize, node: usize) -> T {
        self.probabilities[k][node]
    }

    pub fn probabilities(&self, k: usize) -> &[T] {
        &self.probabilities[k]
    }

    /// Per-component up-move counts of `node` at step `k`.
    pub fn up_counts(&self, k: usize, node: usize) -> Vec<usize> {
        match self.layout {
            LatticeLayout::Recombining => {
                let mut rest = node;
                (0..self.components)
                    .map(|_| {
                        let c = rest % (k + 1);
                        rest /= k + 1;
                        c
                    })
                    .collect()
            }
            LatticeLayout::Tree => {
                let mut counts = vec![0; self.components];
                let mask = self.branches() - 1;
                let mut rest = node;
                for _ in 0..k {
                    let b = rest & mask;
                    for (i, c) in counts.iter_mut().enumerate() {
                        *c += (b >> i) & 1;
                    }
                    rest >>= self.components;
                }
                counts
            }
        }
    }

    /// Whether component `i` moves up on `branch`.
    pub fn is_up(branch: usize, i: usize) -> bool {
        (branch >> i) & 1 == 1
    }

    /// Node reached from `node` at step `k` along `branch`.
    pub fn child(&self, k: usize, node: usize, branch: usize) -> usize {
        match self.layout {
            LatticeLayout::Recombining => {
                let (r0, r1) = (k + 1, k + 2);
                let mut rest = node;
                let mut idx = 0;
                let mut place = 1;
                for i in 0..self.components {
                    let c = rest % r0 + ((branch >> i) & 1);
                    rest /= r0;
                    idx += c * place;
                    place *= r1;
                }
                idx
            }
            LatticeLayout::Tree => (node << self.components) | branch,
        }
    }

    /// `(parent, branch)` pairs leading into `node` at step `k + 1`.
    pub fn parents(&self, k: usize, node: usize) -> Vec<(usize, usize)> {
        match self.layout {
            LatticeLayout::Tree => vec![(node >> self.components, node & (self.branches() - 1))],
            LatticeLayout::Recombining => {
                let counts = self.up_counts(k + 1, node);
                let mut out = Vec::new();
                'b: for b in 0..self.branches() {
                    let mut idx = 0;
                    let mut place = 1;
                    for (i, &c) in counts.iter().enumerate() {
                        let up = (b >> i) & 1;
                        if c < up || c - up > k {
                            continue 'b;
                        }
                        idx += (c - up) * place;
                        place *= k + 1;
                    }
                    out.push((idx, b));
                }
                out
            }
        }
    }

    /// Increment of component `i` on `branch` during step `k`.
    pub fn increment(&self, k: usize, branch: usize, i: usize) -> T {
        if Self::is_up(branch, i) {
            self.sqrt_dt[k]
        } else {
            -self.sqrt_dt[k]
        }
    }

    /// `w_i` at `node` of step `k`.
    pub fn w(&self, k: usize, node: usize, i: usize) -> T {
        match self.layout {
            LatticeLayout::Recombining => {
                let c = self.up_counts(k, node)[i];
                let h = self.sqrt_dt.first().copied().unwrap_or_else(T::zero);
                (T::from_usize_lossy(2 * c) - T::from_usize_lossy(k)) * h
            }
            LatticeLayout::Tree => {
                let mask = self.branches() - 1;
                let mut acc = T::zero();
                for m in (0..k).rev() {
                    let b = (node >> (self.components * (k - 1 - m))) & mask;
                    acc += self.increment(m, b, i);
                }
                acc
            }
        }
    }

    /// Node at step `branches.len()` reached from the root.
    pub fn node_along(&self, branches: &[usize]) -> usize {
        branches.iter().enumerate().fold(0, |node, (k, &b)| self.child(k, node, b))
    }

    /// Visits every root-to-step-`k` path as the sequence of its nodes
    /// (length `k + 1`) and branches (length `k`).
    pub fn for_each_path(&self, k: usize, mut f: impl FnMut(&[usize], &[usize])) {
        let mut nodes = vec![0usize; k + 1];
        let mut branches = vec![0usize; k];
        fn rec<T: Real>(
            lat: &NoiseLattice<T>,
            m: usize,
            k: usize,
            nodes: &mut [usize],
            branches: &mut [usize],
            f: &mut dyn FnMut(&[usize], &[usize]),
        ) {
            if m == k {
                f(nodes, branches);
                return;
            }
            for b in 0..lat.branches() {
                branches[m] = b;
                nodes[m + 1] = lat.child(m, nodes[m], b);
                rec(lat, m + 1, k, nodes, branches, f);
            }
        }
        rec(self, 0, k, &mut nodes, &mut branches, &mut f);
    }

    /// JSON-friendly description of the full lattice.
    pub fn dump(&self) -> LatticeDump {
        let mut nodes = Vec::with_capacity(self.total_nodes());
        for k in 0..=self.steps() {
            for node in 0..self.nodes_at(k) {
                nodes.push(NodeDump {
                    step: k,
                    node,
                    up_counts: self.up_counts(k, node),
                    w: (0..self.components).map(|i| self.w(k, node, i).as_f64()).collect(),
                    probability: self.probability(k, node).as_f64(),
                    parents: if k == 0 { Vec::new() } else { self.parents(k - 1, node) },
                    children: if k == self.steps() {
                        Vec::new()
                    } else {
                        (0..self.branches()).map(|b| self.child(k, node, b)).collect()
                    },
                });
            }
        }
        LatticeDump {
            components: self.components,
            layout: self.layout,
            steps: self.steps(),
            times: self.times.knots().iter().map(|t| t.as_f64()).collect(),
            nodes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeDump {
    pub step: usize,
    pub node: usize,
    pub up_counts: Vec<usize>,
    pub w: Vec<f64>,
    pub probability: f64,
    /// `(parent node at the previous step, branch)`.
    pub parents: Vec<(usize, usize)>,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeDump {
    pub components: usize,
    pub layout: LatticeLayout,
    pub steps: usize,
    pub times: Vec<f64>,
    pub nodes: Vec<NodeDump>,
}

/// Vector-valued field on lattice nodes: `values[k][node]` has `width`
/// entries (grid values, or a single scalar).
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField<T> {
    width: usize,
    values: Vec<Vec<Vec<T>>>,
}

impl<T: Real> AdaptedField<T> {
    /// Zero field on steps `0..=last`.
    pub fn zeros(lat: &NoiseLattice<T>, last: usize, width: usize) -> Self {
        let values = (0..=last).map(|k| vec![vec![T::zero(); width]; lat.nodes_at(k)]).collect();
        Self { width, values }
    }

    pub fn from_fn(lat: &NoiseLattice<T>, last: usize, width: usize, mut f: impl FnMut(usize, usize) -> Vec<T>) -> Self {
        let values = (0..=last)
            .map(|k| {
                (0..lat.nodes_at(k))
                    .map(|n| {
                        let v = f(k, n);
                        assert_eq!(v.len(), width, "field width mismatch");
                        v
                    })
                    .collect()
            })
            .collect();
        Self { width, values }
    }

    /// Same vector at every node of step `k`, for each `k` in `per_step`.
    pub fn deterministic(lat: &NoiseLattice<T>, per_step: &[Vec<T>]) -> Self {
        let width = per_step.first().map_or(0, Vec::len);
        let values = per_step.iter().enumerate().map(|(k, v)| vec![v.clone(); lat.nodes_at(k)]).collect();
        Self { width, values }
    }

    pub(crate) fn from_steps(width: usize, values: Vec<Vec<Vec<T>>>) -> Self {
        Self { width, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Last step on which the field is defined.
    pub fn last_step(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, k: usize, node: usize) -> &[T] {
        &self.values[k][node]
    }

    pub fn at_mut(&mut self, k: usize, node: usize) -> &mut Vec<T> {
        &mut self.values[k][node]
    }

    pub fn step(&self, k: usize) -> &[Vec<T>] {
        &self.values[k]
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        let values = self.values.iter().map(|s| s.iter().map(|v| v.iter().map(|&x| f(x)).collect()).collect()).collect();
        Self { width: self.width, values }
    }

    /// Unconditional mean at step `k`.
    pub fn mean(&self, lat: &NoiseLattice<T>, k: usize) -> Result<Vec<T>> {
        Ok(conditional_expectation(lat, self, k, 0)?.swap_remove(0))
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().flatten().flatten().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub(crate) fn check_against(&self, lat: &NoiseLattice<T>) -> Result<()> {
        for (k, s) in self.values.iter().enumerate() {
            if k > lat.steps() || s.len() != lat.nodes_at(k) {
                return Err(Error::Shape(format!("field step {k} does not match the lattice")));
            }
        }
        Ok(())
    }
}

fn check_step<T: Real>(field: &AdaptedField<T>, k: usize) -> Result<()> {
    if k > field.last_step() {
        Err(Error::StepOutOfRange { step: k, detail: format!("field is defined up to step {}", field.last_step()) })
    } else {
        Ok(())
    }
}

/// One-step expectation: for every node at step `k`, the branch average of
/// `next` (values at step `k + 1`), summed in branch order.
pub fn one_step_expectation<T: Real>(lat: &NoiseLattice<T>, k: usize, next: &[Vec<T>]) -> Vec<Vec<T>> {
    let w = lat.branch_weight();
    let width = next.first().map_or(0, Vec::len);
    (0..lat.nodes_at(k))
        .map(|node| {
            let mut sums = vec![CompensatedSum::new(); width];
            for b in 0..lat.branches() {
                for (s, v) in sums.iter_mut().zip(&next[lat.child(k, node, b)]) {
                    s.add(*v);
                }
            }
            sums.iter().map(|s| s.value() * w).collect()
        })
        .collect()
}

/// `E[field_{to} | step from]` for every node of step `from`.
pub fn conditional_expectation<T: Real>(
    lat: &NoiseLattice<T>,
    field: &AdaptedField<T>,
    to: usize,
    from: usize,
) -> Result<Vec<Vec<T>>> {
    check_step(field, to)?;
    if from > to {
        return Err(Error::StepOutOfRange { step: from, detail: format!("expectation target step {to} precedes it") });
    }
    field.check_against(lat)?;
    let mut cur = field.step(to).to_vec();
    for k in (from..to).rev() {
        cur = one_step_expectation(lat, k, &cur);
    }
    Ok(cur)
}

/// Itô sum `Σ_{m<k} ζ_m Δw_j`, accumulated along each path.
///
/// On a recombining lattice the result must itself recombine; paths that
/// meet with different accumulated values give `Error::PathDependent`.
pub fn stochastic_integral<T: Real>(
    lat: &NoiseLattice<T>,
    integrand: &AdaptedField<T>,
    j: usize,
    k: usize,
) -> Result<AdaptedField<T>> {
    if j >= lat.components() {
        return Err(Error::ComponentOutOfRange { i: j, n: lat.components() });
    }
    if k > lat.steps() {
        return Err(Error::StepOutOfRange { step: k, detail: format!("lattice has {} steps", lat.steps()) });
    }
    if k > 0 {
        check_step(integrand, k - 1)?;
    }
    let width = integrand.width();
    let mut out = vec![vec![vec![T::zero(); width]]];
    for m in 0..k {
        let mut next: Vec<Option<Vec<T>>> = vec![None; lat.nodes_at(m + 1)];
        for node in 0..lat.nodes_at(m) {
            let zeta = integrand.at(m, node);
            for b in 0..lat.branches() {
                let dw = lat.increment(m, b, j);
                let v: Vec<T> = out[m][node].iter().zip(zeta).map(|(i, z)| *i + *z * dw).collect();
                let c = lat.child(m, node, b);
                match &next[c] {
                    None => next[c] = Some(v),
                    Some(prev) => {
                        let scale = prev.iter().chain(&v).fold(T::one(), |s, x| s.max(x.abs()));
                        if prev.iter().zip(&v).any(|(a, b)| (*a - *b).abs() > T::lit(1e-12) * scale) {
                            return Err(Error::PathDependent { step: m + 1 });
                        }
                    }
                }
            }
        }
        out.push(next.into_iter().map(|v| v.expect("every node has a parent")).collect());
    }
    Ok(AdaptedField::from_steps(width, out))
}

/// Predictable part and martingale coefficients of a step-`k + 1` field.
#[derive(Debug, Clone)]
pub struct MartingalePart<T> {
    /// `E_k[value]` per step-`k` node.
    pub predictable: Vec<Vec<T>>,
    /// `chi[j][node]`: coefficient of `Δw_j`.
    pub chi: Vec<Vec<Vec<T>>>,
    /// Largest `|value − E_k[value] − Σ_j χ_j Δw_j|` over children.
    pub residual: T,
}

/// Splits `next` (values at step `k + 1`) into its conditional mean and
/// `Σ_j χ_j Δw_j`, with `χ_j` the average up-minus-down difference in
/// component `j` divided by `2√Δτ`.
pub fn martingale_part<T: Real>(lat: &NoiseLattice<T>, k: usize, next: &[Vec<T>]) -> MartingalePart<T> {
    let n = lat.components();
    let predictable = one_step_expectation(lat, k, next);
    let width = predictable.first().map_or(0, Vec::len);
    let pair_weight = T::lit(2.0) / T::from_usize_lossy(lat.branches());
    let scale = pair_weight / (T::lit(2.0) * lat.sqrt_dt[k]);
    let mut chi = vec![Vec::with_capacity(lat.nodes_at(k)); n];
    let mut residual = T::zero();
    for node in 0..lat.nodes_at(k) {
        for (j, chi_j) in chi.iter_mut().enumerate() {
            let mut sums = vec![CompensatedSum::new(); width];
            for b in 0..lat.branches() {
                if NoiseLattice::<T>::is_up(b, j) {
                    let up = &next[lat.child(k, node, b)];
                    let down = &next[lat.child(k, node, b & !(1 << j))];
                    for ((s, u), d) in sums.iter_mut().zip(up).zip(down) {
                        s.add(*u - *d);
                    }
                }
            }
            chi_j.push(sums.iter().map(|s| s.value() * scale).collect::<Vec<T>>());
        }
        for b in 0..lat.branches() {
            let v = &next[lat.child(k, node, b)];
            for g in 0..width {
                let mut r = v[g] - predictable[node][g];
                for (j, chi_j) in chi.iter().enumerate() {
                    r -= chi_j[node][g] * lat.increment(k, b, j);
                }
                residual = residual.max(r.abs());
            }
        }
    }
    MartingalePart { predictable, chi, residual }
}

/// Copies a recombining-lattice field onto the matching tree lattice.
pub fn lift_to_tree<T: Real>(
    lat: &NoiseLattice<T>,
    tree: &NoiseLattice<T>,
    field: &AdaptedField<T>,
) -> Result<AdaptedField<T>> {
    if tree.layout() != LatticeLayout::Tree || tree.components() != lat.components() || tree.steps() != lat.steps() {
        return Err(Error::Shape("lift needs a tree lattice of the same shape".into()));
    }
    let mut values = vec![vec![field.at(0, 0).to_vec()]];
    let mut map = vec![0usize];
    for k in 0..field.last_step() {
        let mut next_map = vec![0; tree.nodes_at(k + 1)];
        let mut step = vec![Vec::new(); tree.nodes_at(k + 1)];
        for (tnode, &rnode) in map.iter().enumerate() {
            for b in 0..tree.branches() {
                let tc = tree.child(k, tnode, b);
                let rc = lat.child(k, rnode, b);
                next_map[tc] = rc;
                step[tc] = field.at(k + 1, rc).to_vec();
            }
        }
        values.push(step);
        map = next_map;
    }
    Ok(AdaptedField::from_steps(field.width(), values))
}
