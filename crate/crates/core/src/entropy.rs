//! Entropy-flow functionals and the level 2.5 duality checks.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::grid::{current_from_flow, PeriodicCurrent, PeriodicDensity, PeriodicFlow, Tolerances};
use crate::grid::{lambda_a_membership, lambda_membership};
use crate::ldp::{rate_i_hat_with, rate_i_with, theta_reverse, theta_reverse_current, RateValue};
use crate::model::{dual_reversed_protocol, reversed_protocol, RateProtocol};
use crate::steady::accompanying_distribution;

/// `S_naive(mu, Q) = sum_e int Q log(r(y,z;s) / r(z,y;T0-s)) - sum_y int mu [r(y;s) - r(y;T0-s)]`.
pub fn s_naive(mu: &PeriodicDensity, q: &PeriodicFlow, p: &RateProtocol) -> Result<f64> {
    p.graph().require_symmetric()?;
    let grid = p.grid();
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        let j = grid.reflect(k);
        let mut bin = 0.0;
        for (e, &(y, z)) in p.graph().edges().iter().enumerate() {
            bin += q.get(e, k) * (p.rate(e, k) / p.rate_between(z, y, j)).ln();
        }
        for y in 0..p.n_states() {
            bin -= mu.get(y, k) * (p.exit_rate(y, k) - p.exit_rate(y, j));
        }
        acc += bin;
    }
    Ok(acc * grid.dt())
}

/// `S_tot(Q) = sum_e int Q log(r(y,z) / r(z,y))`.
pub fn s_tot(q: &PeriodicFlow, p: &RateProtocol) -> Result<f64> {
    p.graph().require_symmetric()?;
    let grid = p.grid();
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        for (e, &(y, z)) in p.graph().edges().iter().enumerate() {
            acc += q.get(e, k) * (p.rate(e, k) / p.rate_between(z, y, k)).ln();
        }
    }
    Ok(acc * grid.dt())
}

/// Current form `1/2 sum_{(y,z) in E} int J log(r(y,z) / r(z,y))`.
pub fn s_tot_current(j: &PeriodicCurrent, p: &RateProtocol) -> Result<f64> {
    p.graph().require_symmetric()?;
    let grid = p.grid();
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        for (e, &(y, z)) in p.graph().edges().iter().enumerate() {
            acc += 0.5 * j.get(y, z, k) * (p.rate(e, k) / p.rate_between(z, y, k)).ln();
        }
    }
    Ok(acc * grid.dt())
}

/// `S_ex(mu) = -sum_y int mu d_s log w_s`, with `w` the accompanying
/// distribution of `p`.
pub fn s_ex(mu: &PeriodicDensity, p: &RateProtocol) -> Result<f64> {
    let w = accompanying_distribution(p)?;
    s_ex_with(mu, &w)
}

/// `S_ex` for a given positive `w`. The time derivative of `log w` is the
/// periodic backward difference, so on bin `k` it pairs
/// `log w_k - log w_{k-1}` with `mu_k`.
pub fn s_ex_with(mu: &PeriodicDensity, w: &PeriodicDensity) -> Result<f64> {
    let grid = w.grid();
    if mu.grid() != grid || mu.n_states() != w.n_states() {
        return Err(Error::Shape("density and weight grids differ".into()));
    }
    let mut acc = 0.0;
    for k in 0..grid.bins() {
        let prev = grid.prev(k);
        for y in 0..w.n_states() {
            let (a, b) = (w.get(y, k), w.get(y, prev));
            if !(a > 0.0 && b > 0.0) {
                return Err(Error::NonPositiveWeight { state: y, bin: if a > 0.0 { prev } else { k }, value: a.min(b) });
            }
            acc -= mu.get(y, k) * (a / b).ln();
        }
    }
    Ok(acc)
}

/// Bins `k` where a declared breakpoint sits at the left edge, so that the
/// difference `log w_k - log w_{k-1}` straddles a jump of the protocol.
pub fn s_ex_unreliable_bins(p: &RateProtocol) -> Vec<usize> {
    let grid = p.grid();
    let mut out: Vec<usize> = p
        .breakpoints()
        .iter()
        .map(|&b| ((b / grid.dt()).round() as usize) % grid.bins())
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// The five duality relations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Uva1,
    Uva2,
    Uva3,
    Luci1,
    Luci2,
}

impl Relation {
    pub const ALL: [Relation; 5] = [Relation::Uva1, Relation::Uva2, Relation::Uva3, Relation::Luci1, Relation::Luci2];

    pub fn name(&self) -> &'static str {
        match self {
            Relation::Uva1 => "uva1",
            Relation::Uva2 => "uva2",
            Relation::Uva3 => "uva3",
            Relation::Luci1 => "luci1",
            Relation::Luci2 => "luci2",
        }
    }

    /// Relations on measure-current pairs.
    pub fn uses_current(&self) -> bool {
        matches!(self, Relation::Luci1 | Relation::Luci2)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown relation {s:?} (expected uva1|uva2|uva3|luci1|luci2)")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcReport {
    pub relation: Relation,
    /// Functional of the reversed pair under the reference protocol.
    pub lhs: f64,
    /// Forward functional plus the entropy term.
    pub rhs: f64,
    pub residual: f64,
    /// The forward functional alone.
    pub forward: f64,
    /// The entropy term alone.
    pub entropy: f64,
    pub bins: usize,
}

/// Input of a duality check: a measure-flow pair or a measure-current pair.
#[derive(Clone, Copy, Debug)]
pub enum GcInput<'a> {
    Flow(&'a PeriodicDensity, &'a PeriodicFlow),
    Current(&'a PeriodicDensity, &'a PeriodicCurrent),
}

fn finite(v: RateValue, what: &str) -> Result<f64> {
    match v {
        RateValue::Finite(x) => Ok(x),
        RateValue::Infinite(r) => Err(Error::NotAdmissible(format!("{what} is infinite: {r}"))),
    }
}

/// Evaluates both sides of `relation` independently: the left side from
/// scratch on the reversed pair and the transformed protocol, the right side
/// as the forward functional plus the entropy functional.
pub fn gc_check(relation: Relation, input: GcInput<'_>, p: &RateProtocol) -> Result<GcReport> {
    gc_check_with(relation, input, p, &Tolerances::default())
}

pub fn gc_check_with(relation: Relation, input: GcInput<'_>, p: &RateProtocol, tol: &Tolerances) -> Result<GcReport> {
    p.graph().require_symmetric()?;
    let reference = match relation {
        Relation::Uva1 => p.clone(),
        Relation::Uva2 | Relation::Luci1 => reversed_protocol(p),
        Relation::Uva3 | Relation::Luci2 => dual_reversed_protocol(p, &accompanying_distribution(p)?)?,
    };
    let (lhs, forward, entropy) = match (relation.uses_current(), input) {
        (false, GcInput::Flow(mu, q)) => {
            let v = lambda_membership(mu, q, tol);
            if !v.is_empty() {
                return Err(Error::NotAdmissible(format!("pair is not in Lambda: {}", v[0])));
            }
            let (tmu, tq) = theta_reverse(mu, q)?;
            let lhs = finite(rate_i_with(&tmu, &tq, &reference, tol)?, "reversed functional")?;
            let forward = finite(rate_i_with(mu, q, p, tol)?, "forward functional")?;
            let entropy = match relation {
                Relation::Uva1 => s_naive(mu, q, p)?,
                Relation::Uva2 => s_tot(q, p)?,
                _ => s_ex(mu, p)?,
            };
            (lhs, forward, entropy)
        }
        (true, GcInput::Current(mu, j)) => {
            let v = lambda_a_membership(mu, j, tol);
            if !v.is_empty() {
                return Err(Error::NotAdmissible(format!("pair is not in Lambda_a: {}", v[0])));
            }
            let (tmu, tj) = theta_reverse_current(mu, j);
            let lhs = finite(rate_i_hat_with(&tmu, &tj, &reference, tol)?.phi_form, "reversed functional")?;
            let forward = finite(rate_i_hat_with(mu, j, p, tol)?.phi_form, "forward functional")?;
            let entropy = match relation {
                Relation::Luci1 => s_tot_current(j, p)?,
                _ => s_ex(mu, p)?,
            };
            (lhs, forward, entropy)
        }
        (true, GcInput::Flow(mu, q)) => {
            let j = current_from_flow(q);
            return gc_check_with(relation, GcInput::Current(mu, &j), p, tol);
        }
        (false, GcInput::Current(..)) => {
            return Err(Error::InvalidParameter(format!("{relation} needs a measure-flow pair")));
        }
    };
    let rhs = forward + entropy;
    Ok(GcReport { relation, lhs, rhs, residual: (lhs - rhs).abs(), forward, entropy, bins: p.grid().bins() })
}
