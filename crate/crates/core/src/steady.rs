//! Oscillatory steady state, accompanying distribution and the two-state
//! closed form.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{PeriodicDensity, PeriodicFlow};
use crate::linalg::{expm_uniformized, left_null_vector, stationary_of_stochastic};
use crate::model::RateProtocol;

/// Per-bin transition matrices `P_k = exp(dt L_k)` and their product.
#[derive(Clone, Debug)]
pub struct Propagator {
    pub factors: Vec<DMatrix<f64>>,
    /// `P_0 P_1 ... P_{M-1}` (row-vector convention).
    pub monodromy: DMatrix<f64>,
}

impl Propagator {
    /// `p_{s,t}` between the bin boundaries `s = t_a` and `t = t_b`, `a <= b`.
    pub fn between(&self, a: usize, b: usize) -> DMatrix<f64> {
        let n = self.monodromy.nrows();
        let mut out = DMatrix::identity(n, n);
        for f in &self.factors[a..b] {
            out = &out * f;
        }
        out
    }
}

pub fn propagator(p: &RateProtocol) -> Propagator {
    let dt = p.grid().dt();
    let factors: Vec<DMatrix<f64>> =
        (0..p.grid().bins()).into_par_iter().map(|k| expm_uniformized(&p.generator(k), dt)).collect();
    let n = p.n_states();
    let mut monodromy = DMatrix::identity(n, n);
    for f in &factors {
        monodromy = &monodromy * f;
    }
    Propagator { factors, monodromy }
}

/// `pi_t` at bin midpoints, its flow `Q^pi = pi r`, and the law at the bin
/// boundaries.
#[derive(Clone, Debug)]
pub struct SteadyState {
    pub pi: PeriodicDensity,
    pub q_pi: PeriodicFlow,
    /// `boundary[k]` is `pi` at time `k T0 / M`.
    pub boundary: Vec<Vec<f64>>,
}

impl SteadyState {
    pub fn pi0(&self) -> &[f64] {
        &self.boundary[0]
    }
}

fn row_times(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|j| (0..n).map(|i| v[i] * m[(i, j)]).sum()).collect()
}

/// `Q_t(y, z) = mu_t(y) r(y, z; t)`.
pub fn flow_of_density(p: &RateProtocol, mu: &PeriodicDensity) -> PeriodicFlow {
    let graph = p.graph_arc().clone();
    PeriodicFlow::from_fn(graph.clone(), p.grid(), |e, k| mu.get(graph.edge(e).0, k) * p.rate(e, k))
}

pub fn oscillatory_state(p: &RateProtocol) -> Result<SteadyState> {
    let prop = propagator(p);
    let grid = p.grid();
    let n = p.n_states();
    let mut pi0 = stationary_of_stochastic(&prop.monodromy)?;
    if pi0.iter().any(|&v| !(v > -1e-12)) {
        return Err(Error::Numerical("monodromy has no positive stationary vector".into()));
    }
    pi0.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = pi0.iter().sum();
    pi0.iter_mut().for_each(|v| *v /= s);

    let mut boundary = Vec::with_capacity(grid.bins() + 1);
    boundary.push(pi0);
    for k in 0..grid.bins() {
        let next = row_times(&boundary[k], &prop.factors[k]);
        boundary.push(next);
    }
    boundary.pop();
    let half: Vec<DMatrix<f64>> =
        (0..grid.bins()).into_par_iter().map(|k| expm_uniformized(&p.generator(k), 0.5 * grid.dt())).collect();
    let mut values = Vec::with_capacity(n * grid.bins());
    for k in 0..grid.bins() {
        values.extend(row_times(&boundary[k], &half[k]));
    }
    let pi = PeriodicDensity::new(grid, n, values)?;
    let q_pi = flow_of_density(p, &pi);
    Ok(SteadyState { pi, q_pi, boundary })
}

/// Closed-form two-state `pi_t` at bin midpoints, with
/// `Gamma_t = int_0^t [r_s(0,1) + r_s(1,0)] ds` piecewise linear.
pub fn two_state_pi(p: &RateProtocol) -> Result<PeriodicDensity> {
    if p.n_states() != 2 {
        return Err(Error::NotTwoState(p.n_states()));
    }
    let grid = p.grid();
    let m = grid.bins();
    let dt = grid.dt();
    let r01: Vec<f64> = (0..m).map(|k| p.rate_between(0, 1, k)).collect();
    let r10: Vec<f64> = (0..m).map(|k| p.rate_between(1, 0, k)).collect();
    let g: Vec<f64> = r01.iter().zip(&r10).map(|(a, b)| a + b).collect();
    if g.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter("two-state closed form needs r(0,1) + r(1,0) > 0".into()));
    }
    let mut gamma = vec![0.0; m + 1];
    for k in 0..m {
        gamma[k + 1] = gamma[k] + g[k] * dt;
    }
    let total = gamma[m];
    let denom = -(-total).exp_m1();

    // int_a^b r e^{Gamma_s - c} ds over a piece of bin j
    let piece = |r: f64, j: usize, ga: f64, gb: f64, c: f64| r / g[j] * ((gb - c).exp() - (ga - c).exp());

    let mut values = Vec::with_capacity(2 * m);
    for k in 0..m {
        let gt = gamma[k] + 0.5 * dt * g[k];
        let mut inner = [0.0f64; 2];
        // [0, t]: exponent Gamma_s - Gamma_t <= 0
        for j in 0..k {
            inner[0] += piece(r10[j], j, gamma[j], gamma[j + 1], gt);
            inner[1] += piece(r01[j], j, gamma[j], gamma[j + 1], gt);
        }
        inner[0] += piece(r10[k], k, gamma[k], gt, gt);
        inner[1] += piece(r01[k], k, gamma[k], gt, gt);
        // [t, T0]: exponent Gamma_s - Gamma_t - Gamma_T0 <= 0
        let c = gt + total;
        inner[0] += piece(r10[k], k, gt, gamma[k + 1], c);
        inner[1] += piece(r01[k], k, gt, gamma[k + 1], c);
        for j in (k + 1)..m {
            inner[0] += piece(r10[j], j, gamma[j], gamma[j + 1], c);
            inner[1] += piece(r01[j], j, gamma[j], gamma[j + 1], c);
        }
        values.push(inner[0] / denom);
        values.push(inner[1] / denom);
    }
    PeriodicDensity::new(grid, 2, values)
}

/// Invariant law of the frozen generator on each bin.
pub fn accompanying_distribution(p: &RateProtocol) -> Result<PeriodicDensity> {
    let grid = p.grid();
    let n = p.n_states();
    let bins: Vec<Result<Vec<f64>>> =
        (0..grid.bins()).into_par_iter().map(|k| left_null_vector(&p.generator(k))).collect();
    let mut values = Vec::with_capacity(n * grid.bins());
    for (k, w) in bins.into_iter().enumerate() {
        let w = w?;
        for (y, &v) in w.iter().enumerate() {
            if !(v > 0.0) {
                return Err(Error::Numerical(format!(
                    "accompanying distribution is not positive at state {y}, bin {k}: {v}"
                )));
            }
        }
        values.extend(w);
    }
    PeriodicDensity::new(grid, n, values)
}

/// Bin averages `(1/dt) int_bin pi_t dt`, by composite Simpson on `2 * sub`
/// panels.
pub fn bin_averaged_pi(p: &RateProtocol, steady: &SteadyState, sub: usize) -> Result<PeriodicDensity> {
    let grid = p.grid();
    let n = p.n_states();
    let panels = 2 * sub.max(1);
    let h = grid.dt() / panels as f64;
    let mut values = Vec::with_capacity(n * grid.bins());
    for k in 0..grid.bins() {
        let step = expm_uniformized(&p.generator(k), h);
        let mut v = steady.boundary[k].clone();
        let mut acc = vec![0.0; n];
        for i in 0..=panels {
            let w = if i == 0 || i == panels {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            for y in 0..n {
                acc[y] += w * v[y];
            }
            if i < panels {
                v = row_times(&v, &step);
            }
        }
        values.extend(acc.iter().map(|a| a / (3.0 * panels as f64)));
    }
    PeriodicDensity::new(grid, n, values)
}
