//! Contraction to time-averaged measure and flow, two-state closed forms and
//! the scaled cumulant generating function.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{continuity_residual, PeriodicDensity, PeriodicFlow};
use crate::ldp::{phi_unchecked, InfinityReason, RateValue};
use crate::linalg::{expm_uniformized, perron_root};
use crate::model::{Graph, RateProtocol};
use crate::steady::oscillatory_state;

/// Optimizer settings for [`contract`].
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionSettings {
    /// Cap on the total number of inner iterations.
    pub max_iterations: usize,
    pub constraint_tol: f64,
    pub objective_tol: f64,
    pub rho_initial: f64,
    pub rho_max: f64,
    /// Lower bound on every `mu` and `Q` entry during the iteration.
    pub floor: f64,
}

impl Default for ContractionSettings {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            constraint_tol: 1e-8,
            objective_tol: 1e-10,
            rho_initial: 10.0,
            rho_max: 1e8,
            floor: 1e-10,
        }
    }
}

/// `inf (1/T0) int I_t dt` over periodic `(mu, Q)` with the given time
/// averages. Either target may be left free.
#[derive(Clone, Debug)]
pub struct ContractionProblem {
    pub protocol: RateProtocol,
    pub bar_mu: Option<Vec<f64>>,
    pub bar_q: Option<Vec<f64>>,
    pub settings: ContractionSettings,
}

#[derive(Clone, Debug)]
pub struct ContractionResult {
    /// Objective at the returned point (entries floored).
    pub value: RateValue,
    /// Objective with entries at the floor replaced by zero.
    pub value_unfloored: f64,
    pub mu: PeriodicDensity,
    pub q: PeriodicFlow,
    /// Max-norm of all equality constraints (continuity scaled by `dt`).
    pub constraint_residual: f64,
    /// `max |d_t mu + div Q|` at the returned point.
    pub continuity_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub outer_iterations: usize,
}

struct Layout {
    n: usize,
    m: usize,
    bins: usize,
    edges: Vec<(usize, usize)>,
}

impl Layout {
    fn mu(&self, k: usize, y: usize) -> usize {
        k * self.n + y
    }

    fn q(&self, k: usize, e: usize) -> usize {
        self.bins * self.n + k * self.m + e
    }

    fn len(&self) -> usize {
        self.bins * (self.n + self.m)
    }
}

struct Objective<'a> {
    lay: Layout,
    rates: &'a RateProtocol,
    dt: f64,
    bar_mu: Option<&'a [f64]>,
    bar_q: Option<&'a [f64]>,
    n_constraints: usize,
}

impl Objective<'_> {
    fn base(&self, x: &[f64]) -> f64 {
        let l = &self.lay;
        let mut acc = 0.0;
        for k in 0..l.bins {
            for (e, &(y, _)) in l.edges.iter().enumerate() {
                acc += phi_unchecked(x[l.q(k, e)], x[l.mu(k, y)] * self.rates.rate(e, k));
            }
        }
        acc / l.bins as f64
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        let l = &self.lay;
        let mut i = 0;
        for k in 0..l.bins {
            let next = (k + 1) % l.bins;
            let start = i;
            for y in 0..l.n {
                c[i] = x[l.mu(next, y)] - x[l.mu(k, y)];
                i += 1;
            }
            for (e, &(y, z)) in l.edges.iter().enumerate() {
                let v = self.dt * x[l.q(k, e)];
                c[start + y] += v;
                c[start + z] -= v;
            }
        }
        if let Some(target) = self.bar_mu {
            for (y, t) in target.iter().enumerate() {
                c[i] = (0..l.bins).map(|k| x[l.mu(k, y)]).sum::<f64>() / l.bins as f64 - t;
                i += 1;
            }
        }
        if let Some(target) = self.bar_q {
            for (e, t) in target.iter().enumerate() {
                c[i] = (0..l.bins).map(|k| x[l.q(k, e)]).sum::<f64>() / l.bins as f64 - t;
                i += 1;
            }
        }
        debug_assert_eq!(i, self.n_constraints);
    }

    /// Augmented Lagrangian value and gradient.
    fn eval(&self, x: &[f64], lambda: &[f64], rho: f64, c: &mut [f64], g: &mut [f64]) -> f64 {
        let l = &self.lay;
        let inv_m = 1.0 / l.bins as f64;
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut value = 0.0;
        for k in 0..l.bins {
            for (e, &(y, _)) in l.edges.iter().enumerate() {
                let r = self.rates.rate(e, k);
                let (qi, mi) = (l.q(k, e), l.mu(k, y));
                let (q, mu) = (x[qi], x[mi]);
                let p = mu * r;
                value += phi_unchecked(q, p);
                g[qi] += inv_m * (q / p).ln();
                g[mi] += inv_m * (r - q / mu);
            }
        }
        value *= inv_m;
        self.constraints(x, c);
        let mut i = 0;
        for k in 0..l.bins {
            let next = (k + 1) % l.bins;
            for y in 0..l.n {
                let v = lambda[i + y] + rho * c[i + y];
                g[l.mu(next, y)] += v;
                g[l.mu(k, y)] -= v;
            }
            for (e, &(y, z)) in l.edges.iter().enumerate() {
                let v = lambda[i + y] + rho * c[i + y] - lambda[i + z] - rho * c[i + z];
                g[l.q(k, e)] += self.dt * v;
            }
            i += l.n;
        }
        if self.bar_mu.is_some() {
            for y in 0..l.n {
                let v = (lambda[i] + rho * c[i]) * inv_m;
                for k in 0..l.bins {
                    g[l.mu(k, y)] += v;
                }
                i += 1;
            }
        }
        if self.bar_q.is_some() {
            for e in 0..l.m {
                let v = (lambda[i] + rho * c[i]) * inv_m;
                for k in 0..l.bins {
                    g[l.q(k, e)] += v;
                }
                i += 1;
            }
        }
        let pen: f64 = lambda.iter().zip(c.iter()).map(|(a, b)| a * b + 0.5 * rho * b * b).sum();
        value + pen
    }
}

/// Euclidean projection of `v` onto `{x >= floor, sum x = 1}`.
fn project_simplex(v: &mut [f64], floor: f64) {
    let n = v.len();
    let budget = 1.0 - floor * n as f64;
    let mut u: Vec<f64> = v.iter().map(|x| x - floor).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - budget) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = floor + (*x - floor - theta).max(0.0);
    }
}

fn project(x: &mut [f64], lay: &Layout, floor: f64) {
    for k in 0..lay.bins {
        project_simplex(&mut x[k * lay.n..(k + 1) * lay.n], floor);
    }
    for v in &mut x[lay.bins * lay.n..] {
        *v = v.max(floor);
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Projection onto `{x >= floor, sum x = 1}` in the metric `sum d_i (x_i - v_i)^2`:
/// `x_i = max(floor, v_i - theta / d_i)` with `theta` chosen for unit mass.
fn project_simplex_metric(v: &mut [f64], d: &[f64], floor: f64) {
    let mass = |theta: f64| v.iter().zip(d).map(|(x, w)| (x - theta / w).max(floor)).sum::<f64>();
    // bracket theta: mass is nonincreasing in theta
    let mut lo = v.iter().zip(d).map(|(x, w)| (x - 1.0) * w).fold(f64::INFINITY, f64::min);
    let mut hi = v.iter().zip(d).map(|(x, w)| (x - floor) * w).fold(f64::NEG_INFINITY, f64::max);
    if mass(hi) > 1.0 {
        // cannot happen for n * floor < 1; fall back to the plain projection
        project_simplex(v, floor);
        return;
    }
    // on the active pieces mass is linear in theta, so refine by secant steps
    // after bisection has isolated the right piece
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        let free: Vec<usize> = (0..v.len()).filter(|&i| v[i] - lo / d[i] > floor && v[i] - hi / d[i] > floor).collect();
        let all_same = (0..v.len()).all(|i| (v[i] - lo / d[i] > floor) == (v[i] - hi / d[i] > floor));
        if all_same && !free.is_empty() {
            // exact solve on this piece
            let fixed = (v.len() - free.len()) as f64 * floor;
            let sv: f64 = free.iter().map(|&i| v[i]).sum();
            let sw: f64 = free.iter().map(|&i| 1.0 / d[i]).sum();
            let theta = (sv + fixed - 1.0) / sw;
            for (x, w) in v.iter_mut().zip(d) {
                *x = (*x - theta / w).max(floor);
            }
            return;
        }
    }
    let theta = 0.5 * (lo + hi);
    for (x, w) in v.iter_mut().zip(d) {
        *x = (*x - theta / w).max(floor);
    }
}

fn project_metric(x: &mut [f64], d: &[f64], lay: &Layout, floor: f64) {
    for k in 0..lay.bins {
        let r = k * lay.n..(k + 1) * lay.n;
        project_simplex_metric(&mut x[r.clone()], &d[r], floor);
    }
    for v in &mut x[lay.bins * lay.n..] {
        *v = v.max(floor);
    }
}

impl Objective<'_> {
    /// Diagonal of the Hessian of the augmented Lagrangian.
    fn hessian_diagonal(&self, x: &[f64], rho: f64, out: &mut [f64]) {
        let l = &self.lay;
        let inv_m = 1.0 / l.bins as f64;
        let mean_mu = if self.bar_mu.is_some() { rho * inv_m * inv_m } else { 0.0 };
        let mean_q = if self.bar_q.is_some() { rho * inv_m * inv_m } else { 0.0 };
        for k in 0..l.bins {
            for y in 0..l.n {
                out[l.mu(k, y)] = 2.0 * rho + mean_mu;
            }
        }
        for k in 0..l.bins {
            for (e, &(y, _)) in l.edges.iter().enumerate() {
                let (qi, mi) = (l.q(k, e), l.mu(k, y));
                out[qi] = inv_m / x[qi] + 2.0 * rho * self.dt * self.dt + mean_q;
                out[mi] += inv_m * x[qi] / (x[mi] * x[mi]);
            }
        }
    }
}

/// Spectral projected gradient in a diagonal Hessian metric, with a
/// nonmonotone line search. Returns the number of iterations used and
/// whether the projected-gradient test passed.
#[allow(clippy::too_many_arguments)]
fn spg(
    obj: &Objective<'_>,
    x: &mut Vec<f64>,
    lambda: &[f64],
    rho: f64,
    floor: f64,
    tol: f64,
    max_iter: usize,
) -> (usize, bool) {
    let len = x.len();
    let mut c = vec![0.0; obj.n_constraints];
    let mut g = vec![0.0; len];
    let mut f = obj.eval(x, lambda, rho, &mut c, &mut g);
    let mut history: VecDeque<f64> = VecDeque::from([f]);
    let mut sigma = 1.0;
    let mut diag = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut d = vec![0.0; len];
    let mut c_new = vec![0.0; obj.n_constraints];
    let mut g_new = vec![0.0; len];
    for it in 0..max_iter {
        // stationarity: || P(x - g) - x ||
        for i in 0..len {
            trial[i] = x[i] - g[i];
        }
        project(&mut trial, &obj.lay, floor);
        let pg = (0..len).map(|i| (trial[i] - x[i]).abs()).fold(0.0, f64::max);
        if pg <= tol {
            return (it, true);
        }
        obj.hessian_diagonal(x, rho, &mut diag);
        for i in 0..len {
            trial[i] = x[i] - sigma * g[i] / diag[i];
        }
        project_metric(&mut trial, &diag, &obj.lay, floor);
        for i in 0..len {
            d[i] = trial[i] - x[i];
        }
        let gd: f64 = (0..len).map(|i| g[i] * d[i]).sum();
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = 1.0;
        let f_new = loop {
            for i in 0..len {
                trial[i] = x[i] + alpha * d[i];
            }
            let v = obj.eval(&trial, lambda, rho, &mut c_new, &mut g_new);
            // slack for rounding once the predicted decrease is below it
            if v.is_finite() && v <= f_ref + 1e-4 * alpha * gd + 1e-15 * f_ref.abs() {
                break v;
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return (it, false);
            }
        };
        let mut sds = 0.0;
        let mut sy = 0.0;
        for i in 0..len {
            let s = trial[i] - x[i];
            let y = g_new[i] - g[i];
            sds += s * s * diag[i];
            sy += s * y;
        }
        std::mem::swap(x, &mut trial);
        std::mem::swap(&mut g, &mut g_new);
        std::mem::swap(&mut c, &mut c_new);
        f = f_new;
        sigma = if sy > 0.0 { (sds / sy).clamp(1e-10, 1e10) } else { 1.0 };
        history.push_back(f);
        if history.len() > 10 {
            history.pop_front();
        }
    }
    (max_iter, false)
}

const INNER_CAP: usize = 20_000;
const INNER_TOL_MIN: f64 = 1e-9;

pub fn contract(problem: &ContractionProblem) -> Result<ContractionResult> {
    let p = &problem.protocol;
    let graph = p.graph_arc().clone();
    let grid = p.grid();
    let n = graph.n_states();
    let m = graph.n_edges();
    let set = &problem.settings;
    if let Some(bm) = &problem.bar_mu {
        if bm.len() != n || bm.iter().any(|&v| !(v >= 0.0)) || (bm.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter("target mean density must be a probability vector".into()));
        }
    }
    let steady = oscillatory_state(p)?;
    if let Some(bq) = &problem.bar_q {
        if bq.len() != m || bq.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("target mean flow must be nonnegative on every edge".into()));
        }
        let scale = bq.iter().fold(1.0f64, |a, &b| a.max(b));
        for y in 0..n {
            let div: f64 = graph
                .edges()
                .iter()
                .enumerate()
                .map(|(e, &(a, b))| if a == y { bq[e] } else if b == y { -bq[e] } else { 0.0 })
                .sum();
            if div.abs() > 1e-9 * scale {
                return Ok(infinite_result(p, &steady.pi, &steady.q_pi, InfinityReason::DivergentTarget { state: y, divergence: div }));
            }
        }
        if let Some(bm) = &problem.bar_mu {
            for (e, &(y, _)) in graph.edges().iter().enumerate() {
                if bm[y] == 0.0 && bq[e] > 0.0 {
                    return Ok(infinite_result(p, &steady.pi, &steady.q_pi, InfinityReason::ZeroReference { q: bq[e] }));
                }
            }
        }
    }

    let lay = Layout { n, m, bins: grid.bins(), edges: graph.edges().to_vec() };
    let n_constraints =
        grid.bins() * n + problem.bar_mu.as_ref().map_or(0, |_| n) + problem.bar_q.as_ref().map_or(0, |_| m);
    let obj = Objective {
        lay,
        rates: p,
        dt: grid.dt(),
        bar_mu: problem.bar_mu.as_deref(),
        bar_q: problem.bar_q.as_deref(),
        n_constraints,
    };

    // start from the steady state, rescaled toward the targets
    let mut x = vec![0.0; obj.lay.len()];
    let pi_bar = steady.pi.time_average();
    let qpi_bar = steady.q_pi.time_average();
    for k in 0..grid.bins() {
        for y in 0..n {
            let s = problem.bar_mu.as_ref().map_or(1.0, |bm| bm[y] / pi_bar[y]);
            x[obj.lay.mu(k, y)] = steady.pi.get(y, k) * s;
        }
        for e in 0..m {
            let s = problem.bar_q.as_ref().map_or(1.0, |bq| bq[e] / qpi_bar[e]);
            x[obj.lay.q(k, e)] = steady.q_pi.get(e, k) * s;
        }
    }
    project(&mut x, &obj.lay, set.floor);

    let mut lambda = vec![0.0; n_constraints];
    let mut c = vec![0.0; n_constraints];
    let mut rho = set.rho_initial;
    let mut inner_tol = 1e-3;
    let mut total = 0usize;
    let mut outer = 0usize;
    let mut prev_norm = f64::INFINITY;
    let mut prev_obj = f64::INFINITY;
    let mut converged = false;
    while total < set.max_iterations {
        outer += 1;
        let budget = (set.max_iterations - total).min(INNER_CAP);
        let (used, _) = spg(&obj, &mut x, &lambda, rho, set.floor, inner_tol, budget);
        total += used;
        obj.constraints(&x, &mut c);
        let norm = max_abs(&c);
        let value = obj.base(&x);
        if norm < set.constraint_tol && (value - prev_obj).abs() < set.objective_tol && inner_tol <= INNER_TOL_MIN {
            converged = true;
            break;
        }
        for (l, ci) in lambda.iter_mut().zip(&c) {
            *l += rho * ci;
        }
        if norm > 0.25 * prev_norm {
            rho = (rho * 10.0).min(set.rho_max);
        }
        prev_norm = norm;
        prev_obj = value;
        inner_tol = (inner_tol * 0.1).max(INNER_TOL_MIN);
        if outer > 500 {
            break;
        }
    }

    obj.constraints(&x, &mut c);
    let constraint_residual = max_abs(&c);
    let value = obj.base(&x);
    let mut unfloored = 0.0;
    for k in 0..grid.bins() {
        for (e, &(y, _)) in graph.edges().iter().enumerate() {
            let snap = |v: f64| if v <= set.floor { 0.0 } else { v };
            let q = snap(x[obj.lay.q(k, e)]);
            let mu = snap(x[obj.lay.mu(k, y)]);
            unfloored += phi_unchecked(q, mu * p.rate(e, k));
        }
    }
    unfloored /= grid.bins() as f64;
    let mu = PeriodicDensity::new(grid, n, x[..grid.bins() * n].to_vec())?;
    let q = PeriodicFlow::new(graph, grid, x[grid.bins() * n..].to_vec())?;
    let continuity = continuity_residual(&mu, &q);
    Ok(ContractionResult {
        value: RateValue::Finite(value),
        value_unfloored: unfloored,
        mu,
        q,
        constraint_residual,
        continuity_residual: continuity,
        converged,
        iterations: total,
        outer_iterations: outer,
    })
}

fn infinite_result(p: &RateProtocol, mu: &PeriodicDensity, q: &PeriodicFlow, reason: InfinityReason) -> ContractionResult {
    ContractionResult {
        value: RateValue::Infinite(reason),
        value_unfloored: f64::INFINITY,
        mu: mu.clone(),
        q: q.clone(),
        constraint_residual: 0.0,
        continuity_residual: continuity_residual(mu, q),
        converged: true,
        iterations: 0,
        outer_iterations: 0,
    }
    .with_protocol_check(p)
}

impl ContractionResult {
    fn with_protocol_check(self, p: &RateProtocol) -> Self {
        debug_assert_eq!(self.mu.grid(), p.grid());
        self
    }
}

/// Period average of the common rate of a two-state protocol with
/// `r(0,1) = r(1,0)` on every bin.
pub fn symmetric_mean_rate(p: &RateProtocol) -> Result<f64> {
    if p.n_states() != 2 {
        return Err(Error::NotTwoState(p.n_states()));
    }
    for k in 0..p.grid().bins() {
        if p.rate_between(0, 1, k) != p.rate_between(1, 0, k) {
            return Err(Error::AsymmetricRates(k));
        }
    }
    Ok((0..p.grid().bins()).map(|k| p.rate_between(0, 1, k)).sum::<f64>() / p.grid().bins() as f64)
}

/// Closed form `2Q log(2Q / r) - 2Q + r` and its minimizer.
#[derive(Clone, Debug)]
pub struct TwoStateFlowRate {
    pub value: f64,
    pub r_bar: f64,
    /// `mu_t = 1/2`.
    pub mu: PeriodicDensity,
    /// `Q_t = r_t Q / r_bar` on both edges.
    pub q: PeriodicFlow,
}

pub fn flow_rate_closed_form(bar_q: f64, r_bar: f64) -> f64 {
    if bar_q == 0.0 {
        r_bar
    } else {
        2.0 * bar_q * (2.0 * bar_q / r_bar).ln() - 2.0 * bar_q + r_bar
    }
}

pub fn two_state_flow_rate(p: &RateProtocol, bar_q: f64) -> Result<TwoStateFlowRate> {
    let r_bar = symmetric_mean_rate(p)?;
    if !(bar_q >= 0.0) {
        return Err(Error::InvalidParameter(format!("mean flow must be nonnegative, got {bar_q}")));
    }
    let grid = p.grid();
    let mu = PeriodicDensity::constant(grid, &[0.5, 0.5]);
    let q = PeriodicFlow::from_fn(p.graph_arc().clone(), grid, |e, k| p.rate(e, k) * bar_q / r_bar);
    Ok(TwoStateFlowRate { value: flow_rate_closed_form(bar_q, r_bar), r_bar, mu, q })
}

/// `Q log(Q^2 / (mu(0) mu(1) r^2)) - 2Q + r` for the homogeneous two-state
/// chain with rate `r` both ways.
pub fn homogenized_rate(bar_mu: [f64; 2], bar_q: f64, r_bar: f64) -> f64 {
    if bar_q == 0.0 {
        return r_bar;
    }
    let prod = bar_mu[0] * bar_mu[1];
    if prod <= 0.0 {
        return f64::INFINITY;
    }
    bar_q * (bar_q * bar_q / (prod * r_bar * r_bar)).ln() - 2.0 * bar_q + r_bar
}

/// Golden-section minimum of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = f(b);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// `inf_{mu} I^r(mu, Q)` by golden section over `mu(0)`.
pub fn homogenized_infimum(bar_q: f64, r_bar: f64) -> (f64, f64) {
    golden_section_min(|a| homogenized_rate([a, 1.0 - a], bar_q, r_bar), 1e-9, 1.0 - 1e-9, 1e-10)
}

#[derive(Clone, Debug)]
pub struct BasketRow {
    pub bar_mu0: f64,
    pub bar_q: f64,
    /// Contracted value of the time-dependent chain.
    pub contracted: f64,
    /// Homogenized value.
    pub homogenized: f64,
    pub converged: bool,
}

impl BasketRow {
    pub fn holds(&self, tol: f64) -> bool {
        self.contracted <= self.homogenized + tol
    }

    pub fn strict(&self, tol: f64) -> bool {
        self.contracted < self.homogenized - tol
    }
}

/// Compares the contracted functional with the homogenized one on each
/// `(mu(0), Q)` target.
pub fn basket_check(p: &RateProtocol, samples: &[(f64, f64)], settings: &ContractionSettings) -> Result<Vec<BasketRow>> {
    let r_bar = symmetric_mean_rate(p)?;
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|&(a, bq)| {
            let res = contract(&ContractionProblem {
                protocol: p.clone(),
                bar_mu: Some(vec![a, 1.0 - a]),
                bar_q: Some(vec![bq, bq]),
                settings: settings.clone(),
            })?;
            Ok(BasketRow {
                bar_mu0: a,
                bar_q: bq,
                contracted: res.value.value(),
                homogenized: homogenized_rate([a, 1.0 - a], bq, r_bar),
                converged: res.converged,
            })
        })
        .collect()
}

/// Per-period SCGF: `log` of the Perron root of
/// `prod_k exp(dt L^F_k)`, where `L^F` has off-diagonal `r e^F` and the
/// original diagonal. `tilt[k * n_edges + e]`.
pub fn scgf(p: &RateProtocol, tilt: &[f64]) -> Result<f64> {
    let graph = p.graph();
    let m = graph.n_edges();
    let grid = p.grid();
    if tilt.len() != m * grid.bins() {
        return Err(Error::Shape(format!("tilt needs {} entries, got {}", m * grid.bins(), tilt.len())));
    }
    let n = graph.n_states();
    let mut mono = DMatrix::identity(n, n);
    for k in 0..grid.bins() {
        let mut l = p.generator(k);
        for (e, &(y, z)) in graph.edges().iter().enumerate() {
            l[(y, z)] = p.rate(e, k) * tilt[k * m + e].exp();
        }
        mono = &mono * expm_uniformized(&l, grid.dt());
    }
    Ok(perron_root(&mono)?.ln())
}

/// `sup_s { s x - f(s) }` for a convex `f`, by golden section on `[lo, hi]`.
pub fn legendre_transform(f: impl Fn(f64) -> f64, x: f64, lo: f64, hi: f64) -> (f64, f64) {
    let (s, v) = golden_section_min(|s| f(s) - s * x, lo, hi, 1e-10);
    (s, -v)
}

/// Graph shared by two-state protocols, for tests and callers that build
/// targets by hand.
pub fn two_state_graph() -> Arc<Graph> {
    Arc::new(Graph::two_state())
}
