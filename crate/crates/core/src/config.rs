//! TOML model files.
//!
//! ```toml
//! period = 1.0
//! bins = 64
//!
//! [graph]              # optional for `example`; defaults to states 0 and 1
//! states = ["a", "b", "c"]
//! edges = [["a", "b"], ["b", "a"], ["b", "c"], ["c", "b"]]
//!
//! # exactly one of the following three sections
//! [example]
//! model = "defect_center"
//! a0 = 1.0
//! gamma = 0.5
//! b0 = 2.0
//!
//! [sinusoid]           # r_e(t) = base_e (1 + amplitude_e sin(2 pi t / T0 + phase_e))
//! base = [1.0, 2.0, 1.0, 0.5]
//! amplitude = [0.5, 0.0, 0.3, 0.3]
//! phase = [0.0, 0.0, 1.0, 2.0]
//!
//! [table]              # one row of `bins` rates per edge
//! rates = [[1.0, 2.0], [0.5, 0.5]]
//! breakpoints = [0.0, 0.5]
//! ```

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{build_example, ExampleModel, Graph, RateProtocol, TimeGrid};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub period: f64,
    pub bins: usize,
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub example: Option<ExampleModel>,
    #[serde(default)]
    pub sinusoid: Option<SinusoidConfig>,
    #[serde(default)]
    pub table: Option<TableConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub states: Vec<String>,
    pub edges: Vec<(String, String)>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidConfig {
    pub base: Vec<f64>,
    pub amplitude: Vec<f64>,
    #[serde(default)]
    pub phase: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub rates: Vec<Vec<f64>>,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
}

impl GraphConfig {
    pub fn build(&self) -> Result<Graph> {
        let id = |s: &str| {
            self.states
                .iter()
                .position(|l| l == s)
                .ok_or_else(|| Error::Config(format!("edge endpoint `{s}` is not a declared state")))
        };
        let edges = self.edges.iter().map(|(a, b)| Ok((id(a)?, id(b)?))).collect::<Result<Vec<_>>>()?;
        Graph::new(self.states.clone(), edges)
    }
}

impl ModelConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Tabulated protocol. `bins` overrides the file value; a table can only
    /// be refined by an integer factor.
    pub fn protocol(&self, bins: Option<usize>) -> Result<RateProtocol> {
        let bins = bins.unwrap_or(self.bins);
        let sources = [self.example.is_some(), self.sinusoid.is_some(), self.table.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Config("exactly one of [example], [sinusoid], [table] is required".into()));
        }
        if let Some(model) = &self.example {
            if self.graph.is_some() {
                return Err(Error::Config("[example] models fix their own two-state graph".into()));
            }
            return Ok(build_example(model, self.period, bins)?.protocol);
        }
        let graph = Arc::new(
            self.graph.as_ref().ok_or_else(|| Error::Config("[graph] is required for this rate source".into()))?.build()?,
        );
        let m = graph.n_edges();
        if let Some(s) = &self.sinusoid {
            let phase = s.phase.clone().unwrap_or_else(|| vec![0.0; m]);
            if s.base.len() != m || s.amplitude.len() != m || phase.len() != m {
                return Err(Error::Config(format!("[sinusoid] vectors need one entry per edge ({m})")));
            }
            let grid = TimeGrid::new(self.period, bins)?;
            let w = 2.0 * PI / self.period;
            return Ok(RateProtocol::from_fn(graph, grid, |e, t| s.base[e] * (1.0 + s.amplitude[e] * (w * t + phase[e]).sin())));
        }
        let table = self.table.as_ref().expect("one source present");
        if table.rates.len() != m {
            return Err(Error::Config(format!("[table] needs one row per edge ({m}), got {}", table.rates.len())));
        }
        let native = table.rates.first().map_or(0, Vec::len);
        if table.rates.iter().any(|r| r.len() != native) || native != self.bins {
            return Err(Error::Config(format!("[table] rows must have `bins` = {} entries", self.bins)));
        }
        if bins % native != 0 {
            return Err(Error::Config(format!("a {native}-bin table cannot be resampled to {bins} bins")));
        }
        let grid = TimeGrid::new(self.period, native)?;
        let values = (0..native).flat_map(|k| table.rates.iter().map(move |row| row[k])).collect();
        RateProtocol::new(graph, grid, values, table.breakpoints.clone())?.refine(bins / native)
    }
}
