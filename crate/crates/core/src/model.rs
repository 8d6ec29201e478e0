//! State graphs and tabulated time-periodic rate protocols.
//!
//! Rates are piecewise constant on `M` uniform bins of the period `[0, T0)`.
//! Every closed-form protocol is sampled at bin midpoints, so integrals over
//! a period become plain bin sums downstream. Reflection `t -> T0 - t` maps
//! bin `k` to bin `M - 1 - k`, which is an exact involution on the tables.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PeriodicDensity;

/// Directed graph `(V, E)` without self-loops, plus its symmetrization `E_s`.
///
/// `E_s` is stored as a list of unordered pairs `(y, z)` with `y < z`; the
/// orientation `y -> z` is the reference direction for stored currents.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    labels: Vec<String>,
    edges: Vec<(usize, usize)>,
    edge_index: Vec<Option<usize>>,
    pairs: Vec<(usize, usize)>,
    pair_index: Vec<Option<usize>>,
    out_edges: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(labels: Vec<String>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidGraph("graph has no states".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::InvalidGraph(format!("duplicate state label {a:?}")));
            }
        }
        let mut edge_index = vec![None; n * n];
        let mut out_edges = vec![Vec::new(); n];
        for (e, &(y, z)) in edges.iter().enumerate() {
            if y >= n || z >= n {
                return Err(Error::InvalidGraph(format!("edge ({y}, {z}) refers to a missing state")));
            }
            if y == z {
                return Err(Error::InvalidGraph(format!("self-loop at state {y}")));
            }
            if edge_index[y * n + z].is_some() {
                return Err(Error::InvalidGraph(format!("duplicate edge ({y}, {z})")));
            }
            edge_index[y * n + z] = Some(e);
            out_edges[y].push(e);
        }
        let mut pairs = Vec::new();
        let mut pair_index = vec![None; n * n];
        for y in 0..n {
            for z in (y + 1)..n {
                if edge_index[y * n + z].is_some() || edge_index[z * n + y].is_some() {
                    pair_index[y * n + z] = Some(pairs.len());
                    pair_index[z * n + y] = Some(pairs.len());
                    pairs.push((y, z));
                }
            }
        }
        Ok(Self { labels, edges, edge_index, pairs, pair_index, out_edges })
    }

    /// Graph with states labelled `"0"`, `"1"`, ...
    pub fn with_states(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        Self::new((0..n).map(|i| i.to_string()).collect(), edges)
    }

    /// The complete graph on two states.
    pub fn two_state() -> Self {
        Self::with_states(2, vec![(0, 1), (1, 0)]).expect("two-state graph")
    }

    pub fn n_states(&self) -> usize {
        self.labels.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, y: usize) -> &str {
        &self.labels[y]
    }

    pub fn state_id(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, e: usize) -> (usize, usize) {
        self.edges[e]
    }

    pub fn edge_id(&self, y: usize, z: usize) -> Option<usize> {
        self.edge_index[y * self.n_states() + z]
    }

    pub fn out_edges(&self, y: usize) -> &[usize] {
        &self.out_edges[y]
    }

    /// Unordered pairs of `E_s`, each as `(y, z)` with `y < z`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Index of the unordered pair `{y, z}` in `E_s` and the orientation sign
    /// (`+1.0` if `y < z`).
    pub fn pair_id(&self, y: usize, z: usize) -> Option<(usize, f64)> {
        self.pair_index[y * self.n_states() + z].map(|p| (p, if y < z { 1.0 } else { -1.0 }))
    }

    /// `E_s` as ordered pairs, both orientations.
    pub fn sym_edges(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().flat_map(|&(y, z)| [(y, z), (z, y)]).collect()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(y, z)| self.edge_id(z, y).is_some())
    }

    pub fn require_symmetric(&self) -> Result<()> {
        match self.edges.iter().find(|&&(y, z)| self.edge_id(z, y).is_none()) {
            Some(&(y, z)) => Err(Error::NotSymmetric(y, z)),
            None => Ok(()),
        }
    }

    fn reachable(&self, start: usize, forward: bool) -> Vec<bool> {
        let n = self.n_states();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(y) = queue.pop_front() {
            for &(a, b) in &self.edges {
                let (from, to) = if forward { (a, b) } else { (b, a) };
                if from == y && !seen[to] {
                    seen[to] = true;
                    queue.push_back(to);
                }
            }
        }
        seen
    }

    /// Forward and backward BFS from state 0.
    pub fn is_strongly_connected(&self) -> bool {
        self.reachable(0, true).iter().all(|&s| s) && self.reachable(0, false).iter().all(|&s| s)
    }

    /// Returns some `(y, z)` such that `z` cannot be reached from `y`.
    pub fn unreachable_pair(&self) -> Option<(usize, usize)> {
        if let Some(z) = self.reachable(0, true).iter().position(|&s| !s) {
            return Some((0, z));
        }
        self.reachable(0, false).iter().position(|&s| !s).map(|y| (y, 0))
    }
}

/// Uniform binning of one period `[0, period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    period: f64,
    bins: usize,
}

impl TimeGrid {
    pub fn new(period: f64, bins: usize) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::InvalidParameter(format!("period must be positive, got {period}")));
        }
        if bins == 0 {
            return Err(Error::InvalidParameter("number of bins must be positive".into()));
        }
        Ok(Self { period, bins })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn dt(&self) -> f64 {
        self.period / self.bins as f64
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt()
    }

    pub fn left(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Bin containing `t mod period`; a time exactly on an edge goes right.
    pub fn bin_of(&self, t: f64) -> usize {
        let s = t.rem_euclid(self.period);
        ((s / self.dt()).floor() as usize).min(self.bins - 1)
    }

    /// Bin index under `t -> period - t`.
    pub fn reflect(&self, k: usize) -> usize {
        self.bins - 1 - k
    }

    pub fn next(&self, k: usize) -> usize {
        (k + 1) % self.bins
    }

    pub fn prev(&self, k: usize) -> usize {
        (k + self.bins - 1) % self.bins
    }
}

/// `T0`-periodic jump rates `r(y, z; t)`, constant on each bin.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProtocol {
    graph: Arc<Graph>,
    grid: TimeGrid,
    /// Bin-major table: `rates[k * n_edges + e]`.
    rates: Vec<f64>,
    breakpoints: Vec<f64>,
}

impl RateProtocol {
    /// Wraps a rate table without checking the standing assumptions; use
    /// [`validate_protocol`] for that.
    pub fn new(graph: Arc<Graph>, grid: TimeGrid, rates: Vec<f64>, breakpoints: Vec<f64>) -> Result<Self> {
        let expected = grid.bins() * graph.n_edges();
        if rates.len() != expected {
            return Err(Error::Shape(format!("rate table has {} entries, expected {expected}", rates.len())));
        }
        Ok(Self { graph, grid, rates, breakpoints })
    }

    /// Tabulates `rate(edge, t)` at bin midpoints.
    pub fn from_fn(graph: Arc<Graph>, grid: TimeGrid, rate: impl Fn(usize, f64) -> f64) -> Self {
        let m = graph.n_edges();
        let mut rates = Vec::with_capacity(grid.bins() * m);
        for k in 0..grid.bins() {
            let t = grid.midpoint(k);
            rates.extend((0..m).map(|e| rate(e, t)));
        }
        Self { graph, grid, rates, breakpoints: Vec::new() }
    }

    pub fn with_breakpoints(mut self, breakpoints: Vec<f64>) -> Self {
        self.breakpoints = breakpoints;
        self
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

    pub fn n_states(&self) -> usize {
        self.graph.n_states()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn table(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, e: usize, k: usize) -> f64 {
        self.rates[k * self.graph.n_edges() + e]
    }

    pub fn bin_rates(&self, k: usize) -> &[f64] {
        let m = self.graph.n_edges();
        &self.rates[k * m..(k + 1) * m]
    }

    /// `r(y, z; t)` on bin `k`, zero when `(y, z)` is not an edge.
    pub fn rate_between(&self, y: usize, z: usize, k: usize) -> f64 {
        self.graph.edge_id(y, z).map_or(0.0, |e| self.rate(e, k))
    }

    /// Total exit rate `r(y; t)` on bin `k`.
    pub fn exit_rate(&self, y: usize, k: usize) -> f64 {
        self.graph.out_edges(y).iter().map(|&e| self.rate(e, k)).sum()
    }

    /// Envelope `sup_t r(y, z; t)` of one edge.
    pub fn max_rate(&self, e: usize) -> f64 {
        (0..self.grid.bins()).map(|k| self.rate(e, k)).fold(0.0, f64::max)
    }

    /// Period average of one edge's rate.
    pub fn mean_rate(&self, e: usize) -> f64 {
        (0..self.grid.bins()).map(|k| self.rate(e, k)).sum::<f64>() / self.grid.bins() as f64
    }

    /// Frozen generator on bin `k`, row convention (rows sum to zero).
    pub fn generator(&self, k: usize) -> DMatrix<f64> {
        let n = self.n_states();
        let mut l = DMatrix::zeros(n, n);
        for (e, &(y, z)) in self.graph.edges().iter().enumerate() {
            let r = self.rate(e, k);
            l[(y, z)] += r;
            l[(y, y)] -= r;
        }
        l
    }

    /// Splits every bin into `factor` equal sub-bins.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidParameter("refinement factor must be positive".into()));
        }
        let grid = TimeGrid::new(self.grid.period(), self.grid.bins() * factor)?;
        let m = self.graph.n_edges();
        let mut rates = Vec::with_capacity(self.rates.len() * factor);
        for k in 0..self.grid.bins() {
            for _ in 0..factor {
                rates.extend_from_slice(&self.rates[k * m..(k + 1) * m]);
            }
        }
        Ok(Self { graph: self.graph.clone(), grid, rates, breakpoints: self.breakpoints.clone() })
    }

    /// True when `r(y, z; t) = r(z, y; t)` on every bin.
    pub fn is_rate_symmetric(&self) -> bool {
        self.graph.edges().iter().enumerate().all(|(e, &(y, z))| match self.graph.edge_id(z, y) {
            Some(f) => (0..self.grid.bins()).all(|k| self.rate(e, k) == self.rate(f, k)),
            None => false,
        })
    }
}

/// A violated standing assumption on a protocol.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    /// A rate on an edge of `E` vanishes (or is negative) somewhere.
    NonPositiveRate { edge: (usize, usize), bin: usize, rate: f64 },
    /// A rate is not finite.
    UnboundedRate { edge: (usize, usize), bin: usize },
    /// No directed path from `from` to `to`.
    NotStronglyConnected { from: usize, to: usize },
    /// A declared discontinuity is not on a bin boundary.
    MisalignedBreakpoint { time: f64 },
}

impl Violation {
    /// Which standing assumption is broken.
    pub fn assumption(&self) -> &'static str {
        match self {
            Violation::NonPositiveRate { .. } => "A1/A3",
            Violation::UnboundedRate { .. } => "A3",
            Violation::NotStronglyConnected { .. } => "A2",
            Violation::MisalignedBreakpoint { .. } => "A4",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveRate { edge, bin, rate } => {
                write!(f, "[{}] rate of edge {edge:?} is {rate} in bin {bin}", self.assumption())
            }
            Violation::UnboundedRate { edge, bin } => {
                write!(f, "[{}] rate of edge {edge:?} is not finite in bin {bin}", self.assumption())
            }
            Violation::NotStronglyConnected { from, to } => {
                write!(f, "[{}] state {to} is not reachable from state {from}", self.assumption())
            }
            Violation::MisalignedBreakpoint { time } => {
                write!(f, "[{}] breakpoint {time} is not a bin boundary", self.assumption())
            }
        }
    }
}

/// Lists every violated assumption; an empty list means the protocol is valid.
pub fn validate_protocol(p: &RateProtocol) -> Vec<Violation> {
    let mut out = Vec::new();
    let grid = p.grid();
    for k in 0..grid.bins() {
        for (e, &edge) in p.graph().edges().iter().enumerate() {
            let r = p.rate(e, k);
            if !r.is_finite() {
                if r.is_nan() || r < 0.0 {
                    out.push(Violation::NonPositiveRate { edge, bin: k, rate: r });
                } else {
                    out.push(Violation::UnboundedRate { edge, bin: k });
                }
            } else if r <= 0.0 {
                out.push(Violation::NonPositiveRate { edge, bin: k, rate: r });
            }
        }
    }
    if let Some((from, to)) = p.graph().unreachable_pair() {
        out.push(Violation::NotStronglyConnected { from, to });
    }
    let dt = grid.dt();
    for &b in p.breakpoints() {
        let s = b / dt;
        if !(b >= 0.0 && b < grid.period()) || (s - s.round()).abs() > 1e-9 * s.abs().max(1.0) {
            out.push(Violation::MisalignedBreakpoint { time: b });
        }
    }
    out
}

/// The two-state example protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExampleModel {
    /// Quantum dot with level modulation `x_t = x_offset + x_amplitude sin(2 pi t / T0)`:
    /// `r(0,1) = gamma / (1 + e^{x_t})`, `r(1,0) = gamma e^{x_t} / (1 + e^{x_t})`.
    QuantumDot {
        gamma: f64,
        #[serde(default)]
        x_offset: f64,
        x_amplitude: f64,
    },
    /// Defect center: `r(0,1) = a0 (1 + gamma sin(2 pi t / T0))`, `r(1,0) = b0`.
    DefectCenter { a0: f64, gamma: f64, b0: f64 },
    /// Stochastic resonance: `r(0,1) = e^{-k cos(2 pi t / T0)}`, `r(1,0) = e^{k cos(2 pi t / T0)}`.
    StochasticResonance { k: f64 },
    /// Equal rates `r(0,1) = r(1,0) = e^{-k cos(2 pi t / T0)}`.
    SymmetricResonance { k: f64 },
    /// Piecewise constant: `r(0,1) = e^{-h_t}`, `r(1,0) = e^{h_t}`, with
    /// `h_t = h0 - a` on `[0, alpha T0)` and `h0 + a` afterwards.
    Piecewise { h0: f64, a: f64, alpha: f64 },
}

/// A tabulated example plus the switching fraction actually used by the
/// piecewise model after snapping `alpha T0` to a bin boundary.
#[derive(Clone, Debug)]
pub struct Example {
    pub protocol: RateProtocol,
    pub adjusted_alpha: Option<f64>,
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite, got {v}")))
    }
}

pub fn build_example(model: &ExampleModel, period: f64, bins: usize) -> Result<Example> {
    let grid = TimeGrid::new(period, bins)?;
    let graph = Arc::new(Graph::two_state());
    let omega = 2.0 * PI / period;
    let mut adjusted_alpha = None;
    let protocol = match *model {
        ExampleModel::QuantumDot { gamma, x_offset, x_amplitude } => {
            finite("x_offset", x_offset)?;
            finite("x_amplitude", x_amplitude)?;
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
            }
            RateProtocol::from_fn(graph, grid, |e, t| {
                let x = x_offset + x_amplitude * (omega * t).sin();
                // logistic split, written to stay finite for large |x|
                let up = gamma / (1.0 + x.exp());
                let down = gamma / (1.0 + (-x).exp());
                if e == 0 {
                    up
                } else {
                    down
                }
            })
        }
        ExampleModel::DefectCenter { a0, gamma, b0 } => {
            if !(a0.is_finite() && a0 > 0.0 && b0.is_finite() && b0 > 0.0) {
                return Err(Error::InvalidParameter(format!("a0 and b0 must be positive, got {a0}, {b0}")));
            }
            if !(gamma.is_finite() && gamma.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "|gamma| must be below 1 to keep r(0,1) positive, got {gamma}"
                )));
            }
            RateProtocol::from_fn(graph, grid, |e, t| {
                if e == 0 {
                    a0 * (1.0 + gamma * (omega * t).sin())
                } else {
                    b0
                }
            })
        }
        ExampleModel::StochasticResonance { k } => {
            finite("k", k)?;
            RateProtocol::from_fn(graph, grid, |e, t| {
                let c = k * (omega * t).cos();
                if e == 0 {
                    (-c).exp()
                } else {
                    c.exp()
                }
            })
        }
        ExampleModel::SymmetricResonance { k } => {
            finite("k", k)?;
            RateProtocol::from_fn(graph, grid, |_, t| (-k * (omega * t).cos()).exp())
        }
        ExampleModel::Piecewise { h0, a, alpha } => {
            finite("h0", h0)?;
            finite("a", a)?;
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {alpha}")));
            }
            if bins < 2 {
                return Err(Error::InvalidParameter("piecewise protocol needs at least 2 bins".into()));
            }
            let switch = ((alpha * bins as f64).round() as usize).clamp(1, bins - 1);
            let alpha_used = switch as f64 / bins as f64;
            adjusted_alpha = Some(alpha_used);
            let m = 2;
            let mut rates = Vec::with_capacity(bins * m);
            for k in 0..bins {
                let h = if k < switch { h0 - a } else { h0 + a };
                rates.push((-h).exp());
                rates.push(h.exp());
            }
            RateProtocol::new(graph, grid, rates, vec![0.0, alpha_used * period])?
        }
    };
    if let Some(v) = validate_protocol(&protocol).first() {
        return Err(Error::InvalidParameter(format!("generated protocol is invalid: {v}")));
    }
    Ok(Example { protocol, adjusted_alpha })
}

/// `r^R(y, z; t) = r(y, z; T0 - t)`.
pub fn reversed_protocol(p: &RateProtocol) -> RateProtocol {
    let grid = p.grid();
    let m = p.graph().n_edges();
    let mut rates = Vec::with_capacity(p.rates.len());
    for k in 0..grid.bins() {
        let j = grid.reflect(k);
        rates.extend_from_slice(&p.rates[j * m..(j + 1) * m]);
    }
    let mut breakpoints: Vec<f64> = p
        .breakpoints
        .iter()
        .map(|&b| if b == 0.0 { 0.0 } else { grid.period() - b })
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    RateProtocol { graph: p.graph.clone(), grid, rates, breakpoints }
}

/// `r^DR(y, z; t) = w_{T0-t}(z) r(z, y; T0 - t) / w_{T0-t}(y)`.
pub fn dual_reversed_protocol(p: &RateProtocol, w: &PeriodicDensity) -> Result<RateProtocol> {
    p.graph().require_symmetric()?;
    let grid = p.grid();
    if w.grid() != grid || w.n_states() != p.n_states() {
        return Err(Error::Shape("weight grid does not match the protocol".into()));
    }
    for k in 0..grid.bins() {
        for y in 0..p.n_states() {
            let v = w.get(y, k);
            if !(v > 0.0) {
                return Err(Error::NonPositiveWeight { state: y, bin: k, value: v });
            }
        }
    }
    let graph = p.graph();
    let mut rates = Vec::with_capacity(p.rates.len());
    for k in 0..grid.bins() {
        let j = grid.reflect(k);
        for &(y, z) in graph.edges() {
            rates.push(w.get(z, j) * p.rate_between(z, y, j) / w.get(y, j));
        }
    }
    let mut breakpoints: Vec<f64> = p
        .breakpoints
        .iter()
        .map(|&b| if b == 0.0 { 0.0 } else { grid.period() - b })
        .collect();
    breakpoints.sort_by(f64::total_cmp);
    Ok(RateProtocol { graph: p.graph.clone(), grid, rates, breakpoints })
}
