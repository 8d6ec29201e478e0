//! Level 2.5 rate functionals on the grid.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::{
    lambda_a_membership, lambda_membership, Divergence, MembershipViolation, PeriodicCurrent, PeriodicDensity,
    PeriodicFlow, Tolerances,
};
use crate::model::{RateProtocol, TimeGrid};

/// Values below this are treated as exact zeros before branching in `Phi`.
pub const TOL_ZERO: f64 = 1e-12;
/// Clamp for the analytic test function.
pub const F_MAX: f64 = 40.0;

/// Why a rate functional is `+inf`.
#[derive(Clone, Debug, PartialEq)]
pub enum InfinityReason {
    NotInLambda(Vec<MembershipViolation>),
    NotInLambdaA(Vec<MembershipViolation>),
    /// `Phi(q, 0)` with `q > 0`.
    ZeroReference { q: f64 },
    /// Target mean flow is not divergence free.
    DivergentTarget { state: usize, divergence: f64 },
}

impl fmt::Display for InfinityReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotInLambda(v) | Self::NotInLambdaA(v) => {
                let set = if matches!(self, Self::NotInLambda(_)) { "Lambda" } else { "Lambda_a" };
                write!(f, "not in {set}: ")?;
                for (i, x) in v.iter().take(3).enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    write!(f, "{x}")?;
                }
                if v.len() > 3 {
                    write!(f, "; and {} more", v.len() - 3)?;
                }
                Ok(())
            }
            Self::ZeroReference { q } => write!(f, "positive flow {q} against a zero reference rate"),
            Self::DivergentTarget { state, divergence } => {
                write!(f, "target flow has divergence {divergence} at state {state}")
            }
        }
    }
}

/// Extended nonnegative real.
#[derive(Clone, Debug, PartialEq)]
pub enum RateValue {
    Finite(f64),
    Infinite(InfinityReason),
}

impl RateValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, RateValue::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            RateValue::Finite(v) => Some(*v),
            RateValue::Infinite(_) => None,
        }
    }

    /// As an `f64`, with `+inf` for the infinite case.
    pub fn value(&self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }

    pub fn reason(&self) -> Option<&InfinityReason> {
        match self {
            RateValue::Finite(_) => None,
            RateValue::Infinite(r) => Some(r),
        }
    }
}

impl fmt::Display for RateValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateValue::Finite(v) => write!(f, "{v:.16e}"),
            RateValue::Infinite(r) => write!(f, "inf ({r})"),
        }
    }
}

fn snap(x: f64) -> f64 {
    if x < TOL_ZERO {
        0.0
    } else {
        x
    }
}

/// `Phi(q, p) = q log(q/p) - (q - p)`, `Phi(0, p) = p`, `Phi(q > 0, 0) = +inf`.
pub fn phi_fn(q: f64, p: f64) -> RateValue {
    let (q, p) = (snap(q), snap(p));
    if q == 0.0 {
        RateValue::Finite(p)
    } else if p == 0.0 {
        RateValue::Infinite(InfinityReason::ZeroReference { q })
    } else {
        RateValue::Finite(phi_unchecked(q, p))
    }
}

/// `Phi` without snapping; returns `f64::INFINITY` for `q > 0 = p`.
pub fn phi_unchecked(q: f64, p: f64) -> f64 {
    if q == 0.0 {
        p
    } else if p == 0.0 {
        f64::INFINITY
    } else {
        // max(0, .) guards the last ulp near q = p
        (q * (q / p).ln() - (q - p)).max(0.0)
    }
}

fn asinh(x: f64) -> f64 {
    x.signum() * (x.abs() + (x * x + 1.0).sqrt()).ln()
}

/// `Psi(u, ubar, a)`; reduces to `Phi(|u|, |ubar|)` when `a = 0`.
pub fn psi_fn(u: f64, ubar: f64, a: f64) -> RateValue {
    if a == 0.0 {
        return phi_fn(u.abs(), ubar.abs());
    }
    let v = u * (asinh(u / a) - asinh(ubar / a)) - ((a * a + u * u).sqrt() - (a * a + ubar * ubar).sqrt());
    RateValue::Finite(v.max(0.0))
}

/// `I_t` on bin `k`: `sum_e Phi(Q(y,z), mu(y) r(y,z))`.
fn bin_rate(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol, k: usize) -> RateValue {
    let mut acc = 0.0;
    for (e, &(y, _)) in p.graph().edges().iter().enumerate() {
        match phi_fn(q.get(e, k), mu.get(y, k) * p.rate(e, k)) {
            RateValue::Finite(v) => acc += v,
            inf => return inf,
        }
    }
    RateValue::Finite(acc)
}

/// `sum_k dt I_t(mu_k, Q_k)` without the membership test.
pub fn rate_integral(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol) -> RateValue {
    let grid = p.grid();
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        match bin_rate(mu, q, p, k) {
            RateValue::Finite(v) => acc += v,
            inf => return inf,
        }
    }
    RateValue::Finite(acc * grid.dt())
}

fn check_shapes(mu: &PeriodicDensity, grid: TimeGrid, p: &RateProtocol) -> Result<()> {
    if mu.grid() != p.grid() || grid != p.grid() || mu.n_states() != p.n_states() {
        return Err(Error::Shape("inputs and protocol use different grids".into()));
    }
    Ok(())
}

/// `I(mu, Q)`: `+inf` outside `Lambda`, otherwise the bin sum of `I_t`.
pub fn rate_i(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol) -> Result<RateValue> {
    rate_i_with(mu, q, p, &Tolerances::default())
}

pub fn rate_i_with(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol, tol: &Tolerances) -> Result<RateValue> {
    check_shapes(mu, q.grid(), p)?;
    let v = lambda_membership(mu, q, tol);
    if !v.is_empty() {
        return Ok(RateValue::Infinite(InfinityReason::NotInLambda(v)));
    }
    Ok(rate_integral(mu, q, p))
}

/// `Q^{J,mu}(y,z) = (J + sqrt(J^2 + 4 mu(y) mu(z) r(y,z) r(z,y))) / 2`.
pub fn q_from_current(mu: &PeriodicDensity, j: &PeriodicCurrent, p: &RateProtocol) -> PeriodicFlow {
    let graph = p.graph_arc().clone();
    PeriodicFlow::from_fn(graph.clone(), p.grid(), |e, k| {
        let (y, z) = graph.edge(e);
        let jv = j.get(y, z, k);
        let c = 4.0 * mu.get(y, k) * mu.get(z, k) * p.rate(e, k) * p.rate_between(z, y, k);
        let root = (jv * jv + c).sqrt();
        if jv >= 0.0 {
            0.5 * (jv + root)
        } else if c == 0.0 {
            0.0
        } else {
            0.5 * c / (root - jv)
        }
    })
}

/// Both evaluations of `I_hat(mu, J)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateIHat {
    /// `I(mu, Q^{J,mu})`; this is the reported value.
    pub phi_form: RateValue,
    /// `1/2 sum_{E_s} int Psi(J, J^mu, a^mu)`.
    pub psi_form: RateValue,
    pub difference: f64,
}

impl RateIHat {
    pub fn value(&self) -> &RateValue {
        &self.phi_form
    }
}

/// The `Psi` form without the membership test.
pub fn rate_i_hat_psi(mu: &PeriodicDensity, j: &PeriodicCurrent, p: &RateProtocol) -> RateValue {
    let graph = p.graph();
    let grid = p.grid();
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        let mut bin = 0.0;
        for (y, z) in graph.sym_edges() {
            let ryz = p.rate_between(y, z, k);
            let rzy = p.rate_between(z, y, k);
            let jmu = mu.get(y, k) * ryz - mu.get(z, k) * rzy;
            let a = 2.0 * (mu.get(y, k) * mu.get(z, k) * ryz * rzy).sqrt();
            match psi_fn(j.get(y, z, k), jmu, a) {
                RateValue::Finite(v) => bin += v,
                inf => return inf,
            }
        }
        acc += 0.5 * bin;
    }
    RateValue::Finite(acc * grid.dt())
}

pub fn rate_i_hat(mu: &PeriodicDensity, j: &PeriodicCurrent, p: &RateProtocol) -> Result<RateIHat> {
    rate_i_hat_with(mu, j, p, &Tolerances::default())
}

pub fn rate_i_hat_with(
    mu: &PeriodicDensity,
    j: &PeriodicCurrent,
    p: &RateProtocol,
    tol: &Tolerances,
) -> Result<RateIHat> {
    check_shapes(mu, j.grid(), p)?;
    let v = lambda_a_membership(mu, j, tol);
    if !v.is_empty() {
        let inf = RateValue::Infinite(InfinityReason::NotInLambdaA(v));
        return Ok(RateIHat { phi_form: inf.clone(), psi_form: inf, difference: 0.0 });
    }
    let phi_form = rate_integral(mu, &q_from_current(mu, j, p), p);
    let psi_form = rate_i_hat_psi(mu, j, p);
    let difference = match (&phi_form, &psi_form) {
        (RateValue::Finite(a), RateValue::Finite(b)) => (a - b).abs(),
        (RateValue::Infinite(_), RateValue::Infinite(_)) => 0.0,
        _ => f64::INFINITY,
    };
    Ok(RateIHat { phi_form, psi_form, difference })
}

/// Brute-force minimal flow: on each pair and bin, minimizes
/// `Phi(j+ + s, mu(y) r(y,z)) + Phi(j- + s, mu(z) r(z,y))` over `s >= 0`
/// by bisection on the (monotone) derivative.
pub fn minimal_flow_oracle(mu: &PeriodicDensity, j: &PeriodicCurrent, p: &RateProtocol) -> PeriodicFlow {
    let graph = p.graph_arc().clone();
    let grid = p.grid();
    let mut q = PeriodicFlow::zeros(graph.clone(), grid);
    for k in 0..grid.bins() {
        for &(y, z) in graph.pairs() {
            let jv = j.get(y, z, k);
            let (jp, jm) = (jv.max(0.0), (-jv).max(0.0));
            let (fwd, bwd) = (graph.edge_id(y, z), graph.edge_id(z, y));
            let s = match (fwd, bwd) {
                (Some(e), Some(f)) => {
                    let a = mu.get(y, k) * p.rate(e, k);
                    let b = mu.get(z, k) * p.rate(f, k);
                    minimize_excess(jp, jm, a, b)
                }
                _ => 0.0,
            };
            if let Some(e) = fwd {
                q.set(e, k, jp + s);
            }
            if let Some(f) = bwd {
                q.set(f, k, jm + s);
            }
        }
    }
    q
}

fn minimize_excess(jp: f64, jm: f64, a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    let slope = |s: f64| ((jp + s) / a).ln() + ((jm + s) / b).ln();
    if slope(0.0) >= 0.0 {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = a.max(b) + jp + jm + 1.0;
    while slope(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Test functions `phi[k * n + y]` and `F[k * n_edges + e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunctionPair {
    pub phi: Vec<f64>,
    pub f: Vec<f64>,
}

impl TestFunctionPair {
    pub fn zeros(p: &RateProtocol) -> Self {
        let bins = p.grid().bins();
        Self { phi: vec![0.0; bins * p.n_states()], f: vec![0.0; bins * p.graph().n_edges()] }
    }

    /// Entries uniform in `[-phi_scale, phi_scale]` and `[-f_scale, f_scale]`.
    pub fn random<R: Rng>(p: &RateProtocol, rng: &mut R, phi_scale: f64, f_scale: f64) -> Self {
        let mut tf = Self::zeros(p);
        tf.phi.iter_mut().for_each(|v| *v = rng.random_range(-phi_scale..=phi_scale));
        tf.f.iter_mut().for_each(|v| *v = rng.random_range(-f_scale..=f_scale));
        tf
    }

    /// `F = clamp(log(Q / (mu r)), +-F_MAX)`, `phi = 0`.
    pub fn analytic(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol) -> Self {
        let mut tf = Self::zeros(p);
        let m = p.graph().n_edges();
        for k in 0..p.grid().bins() {
            for (e, &(y, _)) in p.graph().edges().iter().enumerate() {
                let qv = q.get(e, k);
                let pv = mu.get(y, k) * p.rate(e, k);
                let v = if qv <= 0.0 {
                    -F_MAX
                } else if pv <= 0.0 {
                    F_MAX
                } else {
                    (qv / pv).ln().clamp(-F_MAX, F_MAX)
                };
                tf.f[k * m + e] = v;
            }
        }
        tf
    }
}

/// `I_{phi,F}(mu, Q) = -mu(d_t phi) + div Q(phi) + Q(F) - mu(r^F - r)`.
///
/// `d_t phi` is the periodic backward difference, the adjoint of the
/// forward difference in the continuity equation.
pub fn tilted_rate(mu: &PeriodicDensity, q: &PeriodicFlow, tf: &TestFunctionPair, p: &RateProtocol) -> f64 {
    let grid = p.grid();
    let n = p.n_states();
    let m = p.graph().n_edges();
    let dt = grid.dt();
    let mut time_part = 0.0;
    let mut rest = 0.0;
    for k in 0..grid.bins() {
        let prev = grid.prev(k);
        for y in 0..n {
            let phi = tf.phi[k * n + y];
            time_part -= mu.get(y, k) * (phi - tf.phi[prev * n + y]);
            rest += q.divergence(y, k) * phi;
        }
        for (e, &(y, _)) in p.graph().edges().iter().enumerate() {
            let f = tf.f[k * m + e];
            rest += q.get(e, k) * f - mu.get(y, k) * p.rate(e, k) * f.exp_m1();
        }
    }
    time_part + rest * dt
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalBound {
    /// Value at the analytic test function.
    pub analytic: f64,
    /// Best of the random trials.
    pub best_trial: f64,
    /// `max(analytic, best_trial)`.
    pub value: f64,
}

pub fn variational_lower_bound<R: Rng>(
    mu: &PeriodicDensity,
    q: &PeriodicFlow,
    p: &RateProtocol,
    trials: usize,
    rng: &mut R,
) -> VariationalBound {
    let analytic = tilted_rate(mu, q, &TestFunctionPair::analytic(mu, q, p), p);
    let mut best_trial = f64::NEG_INFINITY;
    for _ in 0..trials {
        let tf = TestFunctionPair::random(p, rng, 1.0, 2.0);
        best_trial = best_trial.max(tilted_rate(mu, q, &tf, p));
    }
    VariationalBound { analytic, best_trial, value: analytic.max(best_trial) }
}

/// `(theta mu)_k = mu_{M-1-k}`, `(theta Q)_k(y,z) = Q_{M-1-k}(z,y)`.
pub fn theta_reverse(mu: &PeriodicDensity, q: &PeriodicFlow) -> Result<(PeriodicDensity, PeriodicFlow)> {
    let graph = q.graph_arc().clone();
    graph.require_symmetric()?;
    let grid = mu.grid();
    let n = mu.n_states();
    let mu2 = PeriodicDensity::from_fn(grid, n, |y, k| mu.get(y, grid.reflect(k)));
    let q2 = PeriodicFlow::from_fn(graph.clone(), q.grid(), |e, k| {
        let (y, z) = graph.edge(e);
        q.get_between(z, y, grid.reflect(k))
    });
    Ok((mu2, q2))
}

/// `(theta J)_k(y,z) = -J_{M-1-k}(y,z)`.
pub fn theta_reverse_current(mu: &PeriodicDensity, j: &PeriodicCurrent) -> (PeriodicDensity, PeriodicCurrent) {
    let grid = mu.grid();
    let n = mu.n_states();
    let mu2 = PeriodicDensity::from_fn(grid, n, |y, k| mu.get(y, grid.reflect(k)));
    let mut j2 = PeriodicCurrent::zeros(j.graph_arc().clone(), j.grid());
    for k in 0..grid.bins() {
        for pair in 0..j.graph().n_pairs() {
            j2.set_pair_value(pair, k, -j.pair_value(pair, grid.reflect(k)));
        }
    }
    (mu2, j2)
}
