//! Path sampling by thinning and the empirical quantities of a path.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded with `seed_from_u64`.
//! Replica `i` of a batch uses the master seed with stream `i`, so replicas
//! are independent and each one can be regenerated on its own.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{current_from_flow, PeriodicCurrent, PeriodicDensity, PeriodicFlow};
use crate::model::{Graph, RateProtocol, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub initial_state: usize,
    pub events: Vec<Event>,
    pub n_periods: usize,
    pub period: f64,
    pub seed: u64,
    pub stream: u64,
}

impl Path {
    pub fn final_state(&self) -> usize {
        self.events.last().map_or(self.initial_state, |e| e.to)
    }

    pub fn horizon(&self) -> f64 {
        self.n_periods as f64 * self.period
    }

    /// Checks ordering, chaining and that every jump is an edge.
    pub fn validate(&self, graph: &Graph) -> Result<()> {
        let mut state = self.initial_state;
        let mut last = 0.0;
        for (i, ev) in self.events.iter().enumerate() {
            if ev.from != state {
                return Err(Error::InvalidParameter(format!("event {i} does not start at the current state")));
            }
            if !(ev.time > last || (i == 0 && ev.time >= 0.0)) || ev.time > self.horizon() {
                return Err(Error::InvalidParameter(format!("event {i} is out of order")));
            }
            if graph.edge_id(ev.from, ev.to).is_none() {
                return Err(Error::InvalidParameter(format!("event {i} is not along an edge")));
            }
            state = ev.to;
            last = ev.time;
        }
        Ok(())
    }
}

/// Proposal and acceptance counts of the thinning sampler, `[k * n_edges + e]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThinningStats {
    pub proposals: Vec<u64>,
    pub accepted: Vec<u64>,
}

/// Index of the bin containing `t` on the unrolled grid of `total` bins.
/// A time exactly on a bin edge belongs to the bin on its right.
fn global_bin(t: f64, dt: f64, total: usize) -> usize {
    ((t / dt).floor().max(0.0) as usize).min(total - 1)
}

/// Generator of replica `stream` under `seed`.
pub fn replica_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_path(p: &RateProtocol, x0: usize, n: usize, seed: u64) -> Result<Path> {
    Ok(sample_path_stream(p, x0, n, seed, 0)?.0)
}

/// Thinning with per-edge envelopes `lambda(y,z) = max_t r(y,z;t)`.
pub fn sample_path_stream(p: &RateProtocol, x0: usize, n: usize, seed: u64, stream: u64) -> Result<(Path, ThinningStats)> {
    let graph = p.graph();
    if x0 >= graph.n_states() {
        return Err(Error::InvalidParameter(format!("initial state {x0} does not exist")));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("number of periods must be at least 1".into()));
    }
    let grid = p.grid();
    let m = graph.n_edges();
    let total_bins = n * grid.bins();
    let horizon = n as f64 * grid.period();
    let dt = grid.dt();
    let envelope: Vec<f64> = (0..m).map(|e| p.max_rate(e)).collect();
    let pickers: Vec<Option<(f64, WeightedIndex<f64>)>> = (0..graph.n_states())
        .map(|y| {
            let w: Vec<f64> = graph.out_edges(y).iter().map(|&e| envelope[e]).collect();
            let total: f64 = w.iter().sum();
            if total > 0.0 {
                WeightedIndex::new(&w).ok().map(|d| (total, d))
            } else {
                None
            }
        })
        .collect();

    let mut rng = replica_rng(seed, stream);
    let mut stats = ThinningStats { proposals: vec![0; m * grid.bins()], accepted: vec![0; m * grid.bins()] };
    let mut events = Vec::new();
    let mut state = x0;
    let mut t = 0.0;
    while let Some((lambda, picker)) = &pickers[state] {
        let wait: f64 = Exp1.sample(&mut rng);
        t += wait / lambda;
        if t >= horizon {
            break;
        }
        let e = graph.out_edges(state)[picker.sample(&mut rng)];
        let k = global_bin(t, dt, total_bins) % grid.bins();
        stats.proposals[k * m + e] += 1;
        let u: f64 = rng.random();
        if u * envelope[e] < p.rate(e, k) {
            stats.accepted[k * m + e] += 1;
            let to = graph.edge(e).1;
            events.push(Event { time: t, from: state, to });
            state = to;
        }
    }
    let path = Path { initial_state: x0, events, n_periods: n, period: grid.period(), seed, stream };
    Ok((path, stats))
}

/// Binned empirical measure, flow and current of a path.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalTriple {
    pub mu: PeriodicDensity,
    pub q: PeriodicFlow,
    pub j: PeriodicCurrent,
    /// `nu[y, k]`: fraction of periods in which the path sits at `y` just
    /// before the left edge of bin `k`.
    pub nu: PeriodicDensity,
    pub bar_mu: Vec<f64>,
    pub bar_q: Vec<f64>,
    pub bar_j: Vec<f64>,
    pub n_jumps: usize,
    pub n_periods: usize,
}

/// Walks the path segment by segment on the unrolled grid. Occupation times
/// are exact, jumps are counted in the bin of their time.
pub fn accumulate(path: &Path, graph: &Arc<Graph>, grid: TimeGrid) -> Result<EmpiricalTriple> {
    if (path.period - grid.period()).abs() > 1e-12 * grid.period() {
        return Err(Error::Shape("path and grid have different periods".into()));
    }
    let n = graph.n_states();
    let m = graph.n_edges();
    let bins = grid.bins();
    let dt = grid.dt();
    let total_bins = path.n_periods * bins;
    let horizon = path.horizon();

    let mut occ = vec![0.0; n * bins];
    let mut counts = vec![0u64; m * bins];
    let mut crossings = vec![0u64; n * bins];

    // Occupation of [a, b) in state x, with gb = global bin of a.
    let mut add_segment = |x: usize, a: f64, b: f64, ga: usize, gb: usize| {
        for g in ga..=gb {
            let lo = if g == ga { a } else { g as f64 * dt };
            let hi = if g == gb { b } else { (g + 1) as f64 * dt };
            if hi > lo {
                occ[(g % bins) * n + x] += hi - lo;
            }
        }
    };
    let count_crossings = |x: usize, ga: usize, gb: usize, crossings: &mut Vec<u64>| {
        // crossings g in (ga, gb] see x just before the edge
        for g in (ga + 1)..=gb {
            crossings[(g % bins) * n + x] += 1;
        }
    };

    let mut state = path.initial_state;
    let mut t = 0.0;
    let mut g = 0usize;
    for ev in &path.events {
        let ge = global_bin(ev.time, dt, total_bins);
        add_segment(state, t, ev.time, g, ge);
        count_crossings(state, g, ge, &mut crossings);
        let e = graph
            .edge_id(ev.from, ev.to)
            .ok_or_else(|| Error::InvalidParameter(format!("jump {} -> {} is not an edge", ev.from, ev.to)))?;
        counts[(ge % bins) * m + e] += 1;
        state = ev.to;
        t = ev.time;
        g = ge;
    }
    add_segment(state, t, horizon, g, total_bins - 1);
    count_crossings(state, g, total_bins, &mut crossings);

    let scale = 1.0 / (path.n_periods as f64 * dt);
    let mut mu = PeriodicDensity::new(grid, n, occ.iter().map(|v| v * scale).collect())?;
    mu.normalize();
    let q = PeriodicFlow::new(graph.clone(), grid, counts.iter().map(|&c| c as f64 * scale).collect())?;
    let nu = PeriodicDensity::new(grid, n, crossings.iter().map(|&c| c as f64 / path.n_periods as f64).collect())?;
    let j = current_from_flow(&q);
    Ok(EmpiricalTriple {
        bar_mu: mu.time_average(),
        bar_q: q.time_average(),
        bar_j: j.time_average(),
        mu,
        q,
        j,
        nu,
        n_jumps: path.events.len(),
        n_periods: path.n_periods,
    })
}

/// Residual of the binned conservation identity for the grid test function
/// `f[k * n + y]`:
/// `sum_k nu_k (f_k - f_{k-1}) - dt sum_k div q_k (f_k) - (f_0(X_end) - f_0(X_0)) / n`.
pub fn conservation_residual(tr: &EmpiricalTriple, path: &Path, f: &[f64]) -> f64 {
    use crate::grid::Divergence;
    let grid = tr.mu.grid();
    let n = tr.mu.n_states();
    let mut lhs = 0.0;
    for k in 0..grid.bins() {
        let prev = grid.prev(k);
        for y in 0..n {
            lhs += tr.nu.get(y, k) * (f[k * n + y] - f[prev * n + y]);
            lhs -= grid.dt() * tr.q.divergence(y, k) * f[k * n + y];
        }
    }
    let boundary = (f[path.final_state()] - f[path.initial_state]) / tr.n_periods as f64;
    lhs - boundary
}

/// Per-period entropy flows of a path, boundary terms excluded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EntropyFlows {
    pub naive: f64,
    pub tot: f64,
    pub ex: f64,
}

pub fn path_entropy_flows(path: &Path, p: &RateProtocol, w: &PeriodicDensity) -> Result<EntropyFlows> {
    let graph = p.graph();
    graph.require_symmetric()?;
    let grid = p.grid();
    if w.grid() != grid || w.n_states() != graph.n_states() {
        return Err(Error::Shape("weight grid does not match the protocol".into()));
    }
    if let Some((i, &v)) = w.values().iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonPositiveWeight { state: i % w.n_states(), bin: i / w.n_states(), value: v });
    }
    let bins = grid.bins();
    let dt = grid.dt();
    let total_bins = path.n_periods * bins;
    let mut naive = 0.0;
    let mut tot = 0.0;
    let mut ex = 0.0;
    let mut integral = 0.0;
    let mut segment = |x: usize, a: f64, b: f64, ga: usize, gb: usize| {
        for g in ga..=gb {
            let lo = if g == ga { a } else { g as f64 * dt };
            let hi = if g == gb { b } else { (g + 1) as f64 * dt };
            if hi > lo {
                let k = g % bins;
                integral += (hi - lo) * (p.exit_rate(x, k) - p.exit_rate(x, grid.reflect(k)));
            }
        }
    };
    let mut state = path.initial_state;
    let mut t = 0.0;
    let mut g = 0;
    for ev in &path.events {
        let ge = global_bin(ev.time, dt, total_bins);
        segment(state, t, ev.time, g, ge);
        let k = ge % bins;
        let (y, z) = (ev.from, ev.to);
        let r = p.rate_between(y, z, k);
        naive += (r / p.rate_between(z, y, grid.reflect(k))).ln();
        tot += (r / p.rate_between(z, y, k)).ln();
        ex += (w.get(z, k) / w.get(y, k)).ln();
        state = z;
        t = ev.time;
        g = ge;
    }
    segment(state, t, path.horizon(), g, total_bins - 1);
    let n = path.n_periods as f64;
    Ok(EntropyFlows { naive: (naive - integral) / n, tot: tot / n, ex: ex / n })
}

/// `replicas` independent paths, replica `i` on stream `i`; results are in
/// replica order regardless of scheduling.
pub fn sample_replicas(p: &RateProtocol, x0: usize, n: usize, seed: u64, replicas: usize) -> Result<Vec<Path>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|i| sample_path_stream(p, x0, n, seed, i).map(|(path, _)| path))
        .collect()
}

/// Accumulates a batch of paths in parallel.
pub fn accumulate_replicas(paths: &[Path], graph: &Arc<Graph>, grid: TimeGrid) -> Result<Vec<EmpiricalTriple>> {
    paths.par_iter().map(|path| accumulate(path, graph, grid)).collect()
}

/// Entrywise mean of several densities and flows.
pub fn average_triples(triples: &[EmpiricalTriple]) -> Result<(PeriodicDensity, PeriodicFlow)> {
    let first = triples.first().ok_or_else(|| Error::InvalidParameter("no replicas to average".into()))?;
    let count = triples.len() as f64;
    let mut mu = vec![0.0; first.mu.values().len()];
    let mut q = vec![0.0; first.q.values().len()];
    for tr in triples {
        mu.iter_mut().zip(tr.mu.values()).for_each(|(a, b)| *a += b / count);
        q.iter_mut().zip(tr.q.values()).for_each(|(a, b)| *a += b / count);
    }
    Ok((
        PeriodicDensity::new(first.mu.grid(), first.mu.n_states(), mu)?,
        PeriodicFlow::new(first.q.graph_arc().clone(), first.q.grid(), q)?,
    ))
}
