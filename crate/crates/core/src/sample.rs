//! Random admissible measure-flow pairs.
//!
//! A sample is drawn as a continuous-time description first, so that the
//! same sample can be tabulated on several grids. On a given grid the
//! continuity equation is then enforced exactly by a correction current
//! along a spanning tree of two-way pairs.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{current_from_flow, Divergence, PeriodicCurrent, PeriodicDensity, PeriodicFlow};
use crate::model::{Graph, TimeGrid};

/// Continuous description of a random pair:
/// `mu_t(y) ~ b_y exp(eps (a_y sin wt + c_y cos wt))` and
/// `Q_t(e) = s_e (1 + beta_e sin(wt + phase_e))` before the correction.
#[derive(Clone, Debug)]
pub struct SampleSpec {
    graph: Arc<Graph>,
    period: f64,
    eps: f64,
    b: Vec<f64>,
    a: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    beta: Vec<f64>,
    phase: Vec<f64>,
}

/// Default modulation depth of the density: weak enough that the
/// discretization error of the reversal identities is far below `1e-6`
/// at 256 bins.
pub const DEFAULT_EPS: f64 = 1e-3;

impl SampleSpec {
    pub fn draw<R: Rng>(graph: Arc<Graph>, period: f64, eps: f64, rng: &mut R) -> Self {
        let n = graph.n_states();
        let m = graph.n_edges();
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let b = (0..n).map(|_| u(0.5, 1.5)).collect();
        let a = (0..n).map(|_| u(-1.0, 1.0)).collect();
        let c = (0..n).map(|_| u(-1.0, 1.0)).collect();
        let s = (0..m).map(|_| u(0.3, 2.0)).collect();
        let beta = (0..m).map(|_| u(0.0, 0.8)).collect();
        let phase = (0..m).map(|_| u(0.0, 2.0 * PI)).collect();
        Self { graph, period, eps, b, a, c, s, beta, phase }
    }

    pub fn density(&self, grid: TimeGrid) -> PeriodicDensity {
        let w = 2.0 * PI / self.period;
        let n = self.graph.n_states();
        let mut mu = PeriodicDensity::from_fn(grid, n, |y, k| {
            let t = grid.midpoint(k);
            self.b[y] * (self.eps * (self.a[y] * (w * t).sin() + self.c[y] * (w * t).cos())).exp()
        });
        mu.normalize();
        mu
    }

    /// Tabulates on `grid`; the flow satisfies the discrete continuity
    /// equation up to round-off.
    pub fn tabulate(&self, grid: TimeGrid) -> Result<(PeriodicDensity, PeriodicFlow)> {
        if (grid.period() - self.period).abs() > 1e-12 * self.period {
            return Err(Error::Shape("grid period differs from the sample period".into()));
        }
        let mu = self.density(grid);
        let w = 2.0 * PI / self.period;
        let graph = self.graph.clone();
        let mut q = PeriodicFlow::from_fn(graph.clone(), grid, |e, k| {
            self.s[e] * (1.0 + self.beta[e] * (w * grid.midpoint(k) + self.phase[e]).sin())
        });
        let tree = spanning_tree(&graph)?;
        let inv_dt = 1.0 / grid.dt();
        let n = graph.n_states();
        for k in 0..grid.bins() {
            let next = grid.next(k);
            let target: Vec<f64> = (0..n)
                .map(|y| -(mu.get(y, next) - mu.get(y, k)) * inv_dt - q.divergence(y, k))
                .collect();
            let mut carry = vec![0.0; n];
            for &(y, parent) in tree.iter().rev() {
                let c = target[y] + carry[y];
                carry[parent] += c;
                let (e, v) = if c >= 0.0 {
                    (graph.edge_id(y, parent).expect("two-way pair"), c)
                } else {
                    (graph.edge_id(parent, y).expect("two-way pair"), -c)
                };
                q.set(e, k, q.get(e, k) + v);
            }
        }
        Ok((mu, q))
    }

    pub fn tabulate_current(&self, grid: TimeGrid) -> Result<(PeriodicDensity, PeriodicCurrent)> {
        let (mu, q) = self.tabulate(grid)?;
        Ok((mu, current_from_flow(&q)))
    }
}

/// BFS tree over two-way pairs from state 0, as `(child, parent)` in BFS
/// order (so reversed order visits leaves first).
fn spanning_tree(graph: &Graph) -> Result<Vec<(usize, usize)>> {
    let n = graph.n_states();
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut order = Vec::with_capacity(n.saturating_sub(1));
    let mut queue = VecDeque::from([0]);
    while let Some(y) = queue.pop_front() {
        for z in 0..n {
            if !seen[z] && graph.edge_id(y, z).is_some() && graph.edge_id(z, y).is_some() {
                seen[z] = true;
                order.push((z, y));
                queue.push_back(z);
            }
        }
    }
    if seen.iter().any(|&s| !s) {
        return Err(Error::InvalidGraph("two-way pairs do not connect all states".into()));
    }
    Ok(order)
}
