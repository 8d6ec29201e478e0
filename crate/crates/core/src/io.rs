//! CSV tables of grid quantities.
//!
//! Every file starts with `#` comment lines (a free-form header), then a
//! column row, then one row per entry:
//!
//! * density: `state,bin,value`
//! * flow: `edge,bin,value` with `edge` written `from->to`
//! * current: `edge,bin,value` over pairs `from < to`
//!
//! Values use `{:.16e}`, i.e. 17 significant digits, so a write/read round
//! trip is exact.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{PeriodicCurrent, PeriodicDensity, PeriodicFlow};
use crate::model::{Graph, TimeGrid};

/// `# key=value` lines written at the top of each file.
#[derive(Clone, Debug, Default)]
pub struct Header {
    entries: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn edge_name(graph: &Graph, y: usize, z: usize) -> String {
    format!("{}->{}", graph.label(y), graph.label(z))
}

pub fn write_density(header: &Header, mu: &PeriodicDensity, graph: &Graph) -> String {
    let mut out = header.render();
    out.push_str("state,bin,value\n");
    for k in 0..mu.grid().bins() {
        for y in 0..mu.n_states() {
            let _ = writeln!(out, "{},{k},{}", graph.label(y), fmt_f64(mu.get(y, k)));
        }
    }
    out
}

pub fn write_flow(header: &Header, q: &PeriodicFlow) -> String {
    let mut out = header.render();
    out.push_str("edge,bin,value\n");
    let g = q.graph();
    for k in 0..q.grid().bins() {
        for (e, &(y, z)) in g.edges().iter().enumerate() {
            let _ = writeln!(out, "{},{k},{}", edge_name(g, y, z), fmt_f64(q.get(e, k)));
        }
    }
    out
}

pub fn write_current(header: &Header, j: &PeriodicCurrent) -> String {
    let mut out = header.render();
    out.push_str("edge,bin,value\n");
    let g = j.graph();
    for k in 0..j.grid().bins() {
        for (p, &(y, z)) in g.pairs().iter().enumerate() {
            let _ = writeln!(out, "{},{k},{}", edge_name(g, y, z), fmt_f64(j.pair_value(p, k)));
        }
    }
    out
}

/// Data rows as `(key, bin, value)`, skipping comments, blank lines and the
/// column row.
fn rows(text: &str, columns: &str) -> Result<Vec<(usize, String, usize, f64)>> {
    let mut out = Vec::new();
    let mut seen_columns = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let line_no = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_columns {
            if line != columns {
                return Err(Error::Parse { line: line_no, message: format!("expected column row `{columns}`") });
            }
            seen_columns = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse { line: line_no, message: "expected three fields".into() });
        }
        let bin = parts[1]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad bin `{}`", parts[1]) })?;
        let value = parts[2]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad value `{}`", parts[2]) })?;
        out.push((line_no, parts[0].to_string(), bin, value));
    }
    if !seen_columns {
        return Err(Error::Parse { line: 0, message: "no column row".into() });
    }
    Ok(out)
}

fn fill(len: usize, entries: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Vec<f64>> {
    let mut values = vec![f64::NAN; len];
    for (line, idx, v) in entries {
        if !values[idx].is_nan() {
            return Err(Error::Parse { line, message: "duplicate entry".into() });
        }
        values[idx] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Parse { line: 0, message: "table is incomplete".into() });
    }
    Ok(values)
}

fn check_bin(line: usize, bin: usize, grid: TimeGrid) -> Result<()> {
    if bin >= grid.bins() {
        return Err(Error::Parse { line, message: format!("bin {bin} outside 0..{}", grid.bins()) });
    }
    Ok(())
}

fn parse_edge(line: usize, graph: &Graph, name: &str) -> Result<(usize, usize)> {
    let (a, b) = name
        .split_once("->")
        .ok_or_else(|| Error::Parse { line, message: format!("edge `{name}` is not `from->to`") })?;
    let y = graph.state_id(a).ok_or_else(|| Error::Parse { line, message: format!("unknown state `{a}`") })?;
    let z = graph.state_id(b).ok_or_else(|| Error::Parse { line, message: format!("unknown state `{b}`") })?;
    Ok((y, z))
}

pub fn read_density(text: &str, graph: &Graph, grid: TimeGrid) -> Result<PeriodicDensity> {
    let n = graph.n_states();
    let mut entries = Vec::new();
    for (line, key, bin, v) in rows(text, "state,bin,value")? {
        check_bin(line, bin, grid)?;
        let y = graph.state_id(&key).ok_or_else(|| Error::Parse { line, message: format!("unknown state `{key}`") })?;
        entries.push((line, bin * n + y, v));
    }
    PeriodicDensity::new(grid, n, fill(n * grid.bins(), entries)?)
}

pub fn read_flow(text: &str, graph: Arc<Graph>, grid: TimeGrid) -> Result<PeriodicFlow> {
    let m = graph.n_edges();
    let mut entries = Vec::new();
    for (line, key, bin, v) in rows(text, "edge,bin,value")? {
        check_bin(line, bin, grid)?;
        let (y, z) = parse_edge(line, &graph, &key)?;
        let e = graph.edge_id(y, z).ok_or_else(|| Error::Parse { line, message: format!("`{key}` is not an edge") })?;
        entries.push((line, bin * m + e, v));
    }
    let values = fill(m * grid.bins(), entries)?;
    PeriodicFlow::new(graph, grid, values)
}

pub fn read_current(text: &str, graph: Arc<Graph>, grid: TimeGrid) -> Result<PeriodicCurrent> {
    let np = graph.n_pairs();
    let mut entries = Vec::new();
    for (line, key, bin, v) in rows(text, "edge,bin,value")? {
        check_bin(line, bin, grid)?;
        let (y, z) = parse_edge(line, &graph, &key)?;
        let (p, sign) = graph.pair_id(y, z).ok_or_else(|| Error::Parse { line, message: format!("`{key}` is not a pair") })?;
        entries.push((line, bin * np + p, sign * v));
    }
    let values = fill(np * grid.bins(), entries)?;
    PeriodicCurrent::new(graph, grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::current_from_flow;
    use crate::sample::SampleSpec;
    use crate::simulate::replica_rng;

    fn sample() -> (Arc<Graph>, TimeGrid, PeriodicDensity, PeriodicFlow) {
        let g = Arc::new(
            Graph::new(
                vec!["a".into(), "b".into(), "c".into()],
                vec![(0, 1), (1, 0), (1, 2), (2, 1), (2, 0), (0, 2)],
            )
            .unwrap(),
        );
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let spec = SampleSpec::draw(g.clone(), 1.0, 0.5, &mut replica_rng(3, 1));
        let (mu, q) = spec.tabulate(grid).unwrap();
        (g, grid, mu, q)
    }

    #[test]
    fn round_trips_are_exact() {
        let (g, grid, mu, q) = sample();
        let h = Header::new().with("seed", 3).with("bins", 5);
        let text = write_density(&h, &mu, &g);
        assert!(text.starts_with("# seed=3\n# bins=5\nstate,bin,value\n"));
        assert_eq!(read_density(&text, &g, grid).unwrap(), mu);
        assert_eq!(read_flow(&write_flow(&h, &q), g.clone(), grid).unwrap(), q);
        let j = current_from_flow(&q);
        assert_eq!(read_current(&write_current(&h, &j), g, grid).unwrap(), j);
    }

    #[test]
    fn reversed_pair_name_flips_sign() {
        let (g, grid, _, q) = sample();
        let j = current_from_flow(&q);
        let text = write_current(&Header::new(), &j).replace("a->b", "b->a");
        let flipped = text
            .lines()
            .map(|l| {
                if l.starts_with("b->a") {
                    let (head, v) = l.rsplit_once(',').unwrap();
                    format!("{head},{}", fmt_f64(-v.parse::<f64>().unwrap()))
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(read_current(&flipped, g, grid).unwrap(), j);
    }

    #[test]
    fn malformed_tables() {
        let (g, grid, mu, _) = sample();
        let text = write_density(&Header::new(), &mu, &g);
        let mut lines: Vec<&str> = text.lines().collect();
        lines.pop();
        assert!(read_density(&lines.join("\n"), &g, grid).is_err());
        assert!(read_density("state,bin,value\nz,0,1.0\n", &g, grid).is_err());
        assert!(read_density("state,bin,value\na,9,1.0\n", &g, grid).is_err());
        assert!(matches!(read_density("x,y\n", &g, grid), Err(Error::Parse { line: 1, .. })));
    }
}
