use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// The operation needs every edge to come with its reverse (E = E_s).
    #[error("edge set is not symmetric: ({0}, {1}) has no reverse edge")]
    NotSymmetric(usize, usize),
    #[error("weight must be strictly positive, got {value} at state {state}, bin {bin}")]
    NonPositiveWeight { state: usize, bin: usize, value: f64 },
    #[error("expected a two-state model, got {0} states")]
    NotTwoState(usize),
    #[error("protocol is not symmetric: r(0,1) != r(1,0) in bin {0}")]
    AsymmetricRates(usize),
    #[error("pair is not admissible: {0}")]
    NotAdmissible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
