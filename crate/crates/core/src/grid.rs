//! Grid representations of periodic densities, flows and currents.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Graph, TimeGrid};

/// `mu[y, k]`, one probability vector per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicDensity {
    grid: TimeGrid,
    n: usize,
    values: Vec<f64>,
}

impl PeriodicDensity {
    /// `values[k * n + y]`.
    pub fn new(grid: TimeGrid, n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || values.len() != n * grid.bins() {
            return Err(Error::Shape(format!(
                "density needs {} entries for {n} states and {} bins, got {}",
                n * grid.bins(),
                grid.bins(),
                values.len()
            )));
        }
        Ok(Self { grid, n, values })
    }

    pub fn zeros(grid: TimeGrid, n: usize) -> Self {
        Self { grid, n, values: vec![0.0; n * grid.bins()] }
    }

    pub fn constant(grid: TimeGrid, v: &[f64]) -> Self {
        let mut values = Vec::with_capacity(v.len() * grid.bins());
        for _ in 0..grid.bins() {
            values.extend_from_slice(v);
        }
        Self { grid, n: v.len(), values }
    }

    pub fn from_fn(grid: TimeGrid, n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * grid.bins());
        for k in 0..grid.bins() {
            values.extend((0..n).map(|y| f(y, k)));
        }
        Self { grid, n, values }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    pub fn get(&self, y: usize, k: usize) -> f64 {
        self.values[k * self.n + y]
    }

    pub fn set(&mut self, y: usize, k: usize, v: f64) {
        self.values[k * self.n + y] = v;
    }

    pub fn bin(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn bin_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.bin(k).iter().sum()
    }

    /// `(1/T0) * int mu_t dt`.
    pub fn time_average(&self) -> Vec<f64> {
        let mut avg = vec![0.0; self.n];
        for k in 0..self.grid.bins() {
            for (a, v) in avg.iter_mut().zip(self.bin(k)) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= self.grid.bins() as f64);
        avg
    }

    /// Rescales every bin to unit mass.
    pub fn normalize(&mut self) {
        for k in 0..self.grid.bins() {
            let s = self.mass(k);
            self.bin_mut(k).iter_mut().for_each(|v| *v /= s);
        }
    }

    /// `max_{y,k} |self - other|`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `Q[(y, z), k]` on the directed edges of the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicFlow {
    graph: Arc<Graph>,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl PeriodicFlow {
    /// `values[k * n_edges + e]`.
    pub fn new(graph: Arc<Graph>, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.n_edges() * grid.bins() {
            return Err(Error::Shape(format!(
                "flow needs {} entries, got {}",
                graph.n_edges() * grid.bins(),
                values.len()
            )));
        }
        Ok(Self { graph, grid, values })
    }

    pub fn zeros(graph: Arc<Graph>, grid: TimeGrid) -> Self {
        let len = graph.n_edges() * grid.bins();
        Self { graph, grid, values: vec![0.0; len] }
    }

    pub fn from_fn(graph: Arc<Graph>, grid: TimeGrid, f: impl Fn(usize, usize) -> f64) -> Self {
        let m = graph.n_edges();
        let mut values = Vec::with_capacity(m * grid.bins());
        for k in 0..grid.bins() {
            values.extend((0..m).map(|e| f(e, k)));
        }
        Self { graph, grid, values }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn get(&self, e: usize, k: usize) -> f64 {
        self.values[k * self.graph.n_edges() + e]
    }

    pub fn set(&mut self, e: usize, k: usize, v: f64) {
        let m = self.graph.n_edges();
        self.values[k * m + e] = v;
    }

    /// Zero when `(y, z)` is not an edge.
    pub fn get_between(&self, y: usize, z: usize, k: usize) -> f64 {
        self.graph.edge_id(y, z).map_or(0.0, |e| self.get(e, k))
    }

    pub fn bin(&self, k: usize) -> &[f64] {
        let m = self.graph.n_edges();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_average(&self) -> Vec<f64> {
        let m = self.graph.n_edges();
        let mut avg = vec![0.0; m];
        for k in 0..self.grid.bins() {
            for (a, v) in avg.iter_mut().zip(self.bin(k)) {
                *a += v;
            }
        }
        avg.iter_mut().for_each(|a| *a /= self.grid.bins() as f64);
        avg
    }

    /// Total mass `int sum_e Q_t(e) dt`.
    pub fn total(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Antisymmetric `J[(y, z), k]` stored once per unordered pair `y < z`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicCurrent {
    graph: Arc<Graph>,
    grid: TimeGrid,
    values: Vec<f64>,
}

impl PeriodicCurrent {
    /// `values[k * n_pairs + p]`, oriented from the smaller to the larger state.
    pub fn new(graph: Arc<Graph>, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != graph.n_pairs() * grid.bins() {
            return Err(Error::Shape(format!(
                "current needs {} entries, got {}",
                graph.n_pairs() * grid.bins(),
                values.len()
            )));
        }
        Ok(Self { graph, grid, values })
    }

    pub fn zeros(graph: Arc<Graph>, grid: TimeGrid) -> Self {
        let len = graph.n_pairs() * grid.bins();
        Self { graph, grid, values: vec![0.0; len] }
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn graph_arc(&self) -> &Arc<Graph> {
        &self.graph
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    /// Current along pair `p` in its reference orientation.
    pub fn pair_value(&self, p: usize, k: usize) -> f64 {
        self.values[k * self.graph.n_pairs() + p]
    }

    pub fn set_pair_value(&mut self, p: usize, k: usize, v: f64) {
        let np = self.graph.n_pairs();
        self.values[k * np + p] = v;
    }

    /// `J(y, z)` on bin `k`; zero when `{y, z}` is not in `E_s`.
    pub fn get(&self, y: usize, z: usize, k: usize) -> f64 {
        match self.graph.pair_id(y, z) {
            Some((p, sign)) => sign * self.pair_value(p, k),
            None => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn time_average(&self) -> Vec<f64> {
        let np = self.graph.n_pairs();
        let mut avg = vec![0.0; np];
        for k in 0..self.grid.bins() {
            for (p, a) in avg.iter_mut().enumerate() {
                *a += self.pair_value(p, k);
            }
        }
        avg.iter_mut().for_each(|a| *a /= self.grid.bins() as f64);
        avg
    }
}

/// Out-sum minus in-sum at one state and bin.
pub trait Divergence {
    fn divergence(&self, y: usize, k: usize) -> f64;
}

// Summed pair by pair, in the same order as for currents, so that
// `div Q` and `div J(Q)` agree bit for bit.
impl Divergence for PeriodicFlow {
    fn divergence(&self, y: usize, k: usize) -> f64 {
        let mut d = 0.0;
        for &(a, b) in self.graph.pairs() {
            if a == y || b == y {
                let net = self.get_between(a, b, k) - self.get_between(b, a, k);
                if a == y {
                    d += net;
                } else {
                    d -= net;
                }
            }
        }
        d
    }
}

impl Divergence for PeriodicCurrent {
    fn divergence(&self, y: usize, k: usize) -> f64 {
        let mut d = 0.0;
        for (p, &(a, b)) in self.graph.pairs().iter().enumerate() {
            if a == y {
                d += self.pair_value(p, k);
            } else if b == y {
                d -= self.pair_value(p, k);
            }
        }
        d
    }
}

/// `max_{y,k} |(mu_{k+1} - mu_k) M / T0 + div Q_k|`, periodic in `k`.
pub fn continuity_residual(mu: &PeriodicDensity, q: &impl Divergence) -> f64 {
    let grid = mu.grid();
    let inv_dt = 1.0 / grid.dt();
    let mut worst = 0.0f64;
    for k in 0..grid.bins() {
        let next = grid.next(k);
        for y in 0..mu.n_states() {
            let r = (mu.get(y, next) - mu.get(y, k)) * inv_dt + q.divergence(y, k);
            worst = worst.max(r.abs());
        }
    }
    worst
}

/// `J = Q(y, z) - Q(z, y)` on every pair of `E_s`.
pub fn current_from_flow(q: &PeriodicFlow) -> PeriodicCurrent {
    let graph = q.graph_arc().clone();
    let grid = q.grid();
    let np = graph.n_pairs();
    let mut values = Vec::with_capacity(np * grid.bins());
    for k in 0..grid.bins() {
        for &(y, z) in graph.pairs() {
            values.push(q.get_between(y, z, k) - q.get_between(z, y, k));
        }
    }
    PeriodicCurrent { graph, grid, values }
}

/// Membership tolerances. The continuity tolerance is `cont_scale / M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub mass: f64,
    pub zero: f64,
    pub cont_scale: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mass: 1e-12, zero: 1e-12, cont_scale: 50.0 }
    }
}

impl Tolerances {
    pub fn cont(&self, bins: usize) -> f64 {
        self.cont_scale / bins as f64
    }
}

/// A failed admissibility condition, with its location.
#[derive(Clone, Debug, PartialEq)]
pub enum MembershipViolation {
    /// Grids or graphs of the inputs do not match.
    Shape(String),
    /// Item (i): the bin mass is not 1.
    Mass { bin: usize, mass: f64 },
    /// A density or flow entry is negative.
    Negative { index: usize, bin: usize, value: f64 },
    /// Item (iii): the continuity equation fails.
    Continuity { residual: f64, tolerance: f64 },
    /// Item (iv): positive outflow from a state with zero mass.
    Support { edge: (usize, usize), bin: usize },
    /// Item (v): the current runs against a one-way edge.
    OneWaySign { edge: (usize, usize), bin: usize, value: f64 },
}

impl fmt::Display for MembershipViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shape(s) => write!(f, "shape mismatch: {s}"),
            Self::Mass { bin, mass } => write!(f, "item (i): mass {mass} in bin {bin}"),
            Self::Negative { index, bin, value } => {
                write!(f, "negative entry {value} at index {index}, bin {bin}")
            }
            Self::Continuity { residual, tolerance } => {
                write!(f, "item (iii): continuity residual {residual:.3e} exceeds {tolerance:.3e}")
            }
            Self::Support { edge, bin } => {
                write!(f, "item (iv): flow out of an empty state along {edge:?} in bin {bin}")
            }
            Self::OneWaySign { edge, bin, value } => {
                write!(f, "item (v): current {value} on one-way edge {edge:?} in bin {bin}")
            }
        }
    }
}

fn mass_checks(mu: &PeriodicDensity, tol: &Tolerances, out: &mut Vec<MembershipViolation>) {
    for k in 0..mu.grid().bins() {
        for y in 0..mu.n_states() {
            let v = mu.get(y, k);
            if !(v >= 0.0) {
                out.push(MembershipViolation::Negative { index: y, bin: k, value: v });
            }
        }
        let m = mu.mass(k);
        if !((m - 1.0).abs() <= tol.mass) {
            out.push(MembershipViolation::Mass { bin: k, mass: m });
        }
    }
}

fn continuity_check(
    mu: &PeriodicDensity,
    q: &impl Divergence,
    tol: &Tolerances,
    out: &mut Vec<MembershipViolation>,
) {
    let residual = continuity_residual(mu, q);
    let tolerance = tol.cont(mu.grid().bins());
    if !(residual <= tolerance) {
        out.push(MembershipViolation::Continuity { residual, tolerance });
    }
}

/// Checks items (i), (iii), (iv) of `Lambda` plus nonnegativity; empty = member.
pub fn lambda_membership(mu: &PeriodicDensity, q: &PeriodicFlow, tol: &Tolerances) -> Vec<MembershipViolation> {
    if mu.grid() != q.grid() || mu.n_states() != q.graph().n_states() {
        return vec![MembershipViolation::Shape("density and flow grids differ".into())];
    }
    let mut out = Vec::new();
    mass_checks(mu, tol, &mut out);
    for k in 0..q.grid().bins() {
        for (e, &(y, z)) in q.graph().edges().iter().enumerate() {
            let v = q.get(e, k);
            if !(v >= 0.0) {
                out.push(MembershipViolation::Negative { index: e, bin: k, value: v });
            } else if mu.get(y, k) < tol.zero && v >= tol.zero {
                out.push(MembershipViolation::Support { edge: (y, z), bin: k });
            }
        }
    }
    continuity_check(mu, q, tol, &mut out);
    out
}

/// Checks items (i), (iii), (iv), (v) of `Lambda_a`; empty = member.
pub fn lambda_a_membership(
    mu: &PeriodicDensity,
    j: &PeriodicCurrent,
    tol: &Tolerances,
) -> Vec<MembershipViolation> {
    if mu.grid() != j.grid() || mu.n_states() != j.graph().n_states() {
        return vec![MembershipViolation::Shape("density and current grids differ".into())];
    }
    let graph = j.graph();
    let mut out = Vec::new();
    mass_checks(mu, tol, &mut out);
    for k in 0..j.grid().bins() {
        for (p, &(a, b)) in graph.pairs().iter().enumerate() {
            let v = j.pair_value(p, k);
            if !v.is_finite() {
                out.push(MembershipViolation::Negative { index: p, bin: k, value: v });
                continue;
            }
            for (y, z, jyz) in [(a, b, v), (b, a, -v)] {
                if mu.get(y, k) < tol.zero && jyz >= tol.zero {
                    out.push(MembershipViolation::Support { edge: (y, z), bin: k });
                }
                let forward = graph.edge_id(y, z).is_some();
                let backward = graph.edge_id(z, y).is_some();
                if forward && !backward && jyz < -tol.zero {
                    out.push(MembershipViolation::OneWaySign { edge: (y, z), bin: k, value: jyz });
                }
            }
        }
    }
    continuity_check(mu, j, tol, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn two_state_flow(grid: TimeGrid, a: f64, b: f64) -> PeriodicFlow {
        PeriodicFlow::from_fn(Arc::new(Graph::two_state()), grid, |e, _| if e == 0 { a } else { b })
    }

    #[test]
    fn balanced_two_state_flow() {
        let q = two_state_flow(TimeGrid::new(1.0, 4).unwrap(), 0.7, 0.7);
        assert_eq!(q.divergence(0, 2), 0.0);
        assert_eq!(q.divergence(1, 2), 0.0);
    }

    #[test]
    fn cycle_flow_is_divergence_free() {
        let g = Arc::new(Graph::with_states(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap());
        let q = PeriodicFlow::from_fn(g, TimeGrid::new(1.0, 3).unwrap(), |_, _| 1.3);
        for y in 0..3 {
            assert_eq!(q.divergence(y, 1), 0.0);
        }
    }

    #[test]
    fn unbalanced_two_state_flow() {
        let q = two_state_flow(TimeGrid::new(1.0, 2).unwrap(), 2.0, 1.0);
        assert_eq!(q.divergence(0, 0), 1.0);
        assert_eq!(q.divergence(1, 0), -1.0);
        let j = current_from_flow(&q);
        assert_eq!(j.get(0, 1, 0), 1.0);
        assert_eq!(j.get(1, 0, 0), -1.0);
        assert_eq!(j.divergence(0, 0), 1.0);
    }

    #[test]
    fn constant_density_with_balanced_flow_has_zero_residual() {
        let grid = TimeGrid::new(2.0, 8).unwrap();
        let mu = PeriodicDensity::constant(grid, &[0.3, 0.7]);
        let q = two_state_flow(grid, 0.5, 0.5);
        assert_eq!(continuity_residual(&mu, &q), 0.0);
    }

    #[test]
    fn sinusoidal_density_residual_is_small() {
        // J_t = -d/dt mu_t(0) sampled at midpoints; the forward difference
        // against the midpoint derivative leaves an O(1/M) error,
        // about pi^2 / (2M) here.
        for m in [16, 64, 256] {
            let grid = TimeGrid::new(1.0, m).unwrap();
            let mu = PeriodicDensity::from_fn(grid, 2, |y, k| {
                let v = 0.5 + 0.25 * (2.0 * PI * grid.midpoint(k)).sin();
                if y == 0 { v } else { 1.0 - v }
            });
            let g = Arc::new(Graph::two_state());
            let vals = (0..m).map(|k| -0.5 * PI * (2.0 * PI * grid.midpoint(k)).cos()).collect();
            let j = PeriodicCurrent::new(g, grid, vals).unwrap();
            let res = continuity_residual(&mu, &j);
            assert!(res <= 6.0 / m as f64, "M={m}: {res}");
        }
    }

    #[test]
    fn mass_violation_detected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mut mu = PeriodicDensity::constant(grid, &[0.5, 0.5]);
        mu.set(0, 2, 0.4);
        let q = two_state_flow(grid, 0.0, 0.0);
        let v = lambda_membership(&mu, &q, &Tolerances::default());
        assert!(v.iter().any(|x| matches!(x, MembershipViolation::Mass { bin: 2, .. })));
    }

    #[test]
    fn support_violation_detected() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let mu = PeriodicDensity::constant(grid, &[0.0, 1.0]);
        let q = two_state_flow(grid, 0.2, 0.2);
        let v = lambda_membership(&mu, &q, &Tolerances::default());
        assert!(v.iter().any(|x| matches!(x, MembershipViolation::Support { edge: (0, 1), .. })));
    }

    #[test]
    fn one_way_sign_violation() {
        let g = Arc::new(Graph::with_states(3, vec![(0, 1), (1, 2), (2, 0)]).unwrap());
        let grid = TimeGrid::new(1.0, 2).unwrap();
        let mu = PeriodicDensity::constant(grid, &[1.0 / 3.0; 3]);
        let j = PeriodicCurrent::new(g.clone(), grid, vec![0.5; 6]).unwrap();
        // pairs: (0,1) ok, (0,2) means J(0,2)=0.5 but only 2->0 exists, (1,2) ok
        let v = lambda_a_membership(&mu, &j, &Tolerances::default());
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|x| matches!(x, MembershipViolation::OneWaySign { edge: (2, 0), .. })));
        let j = PeriodicCurrent::new(g, grid, vec![0.5, -0.5, 0.5, 0.5, -0.5, 0.5]).unwrap();
        assert!(lambda_a_membership(&mu, &j, &Tolerances::default()).is_empty());
    }

    proptest! {
        #[test]
        fn divergence_sums_to_zero(vals in prop::collection::vec(0.0f64..5.0, 18)) {
            let g = Arc::new(Graph::with_states(3, vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)]).unwrap());
            let grid = TimeGrid::new(1.0, 3).unwrap();
            let q = PeriodicFlow::new(g, grid, vals).unwrap();
            for k in 0..3 {
                let s: f64 = (0..3).map(|y| q.divergence(y, k)).sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }

        #[test]
        fn flow_and_current_residuals_agree(
            vals in prop::collection::vec(0.0f64..5.0, 16),
            w in prop::collection::vec(0.1f64..1.0, 8),
        ) {
            let g = Arc::new(Graph::two_state());
            let grid = TimeGrid::new(1.0, 8).unwrap();
            let q = PeriodicFlow::new(g, grid, vals).unwrap();
            let mu = PeriodicDensity::from_fn(grid, 2, |y, k| if y == 0 { w[k] } else { 1.0 - w[k] });
            let j = current_from_flow(&q);
            for k in 0..8 {
                for y in 0..2 {
                    prop_assert_eq!(q.divergence(y, k), j.divergence(y, k));
                }
            }
            prop_assert_eq!(continuity_residual(&mu, &q), continuity_residual(&mu, &j));
        }
    }
}
