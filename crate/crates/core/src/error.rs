use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("state of {particles} particles on {sites} sites needs {sites}^{particles} amplitudes, above the cap of {cap}")]
    CapExceeded {
        sites: usize,
        particles: usize,
        cap: usize,
    },

    #[error("state has zero norm: {0}")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("energy density requires a Hamiltonian spec")]
    MissingHamiltonian,

    #[error("wavenumber {k} is not commensurate with a ring of length {length}")]
    IncommensurateMode { k: f64, length: f64 },

    #[error("pair potential is {value} at distance {distance}, beyond its declared range {range}")]
    PotentialRange {
        distance: usize,
        value: f64,
        range: usize,
    },

    #[error("eigenvalue {eigenvalue} lies within {tolerance:e} of bin edge {edge}; move the edge")]
    EigenvalueOnEdge {
        eigenvalue: f64,
        edge: f64,
        tolerance: f64,
    },

    #[error("invalid bin edges: {0}")]
    InvalidBins(String),

    #[error("invalid history: {0}")]
    InvalidHistory(String),

    #[error("negative probability {value} for history {history}")]
    NegativeProbability { history: String, value: f64 },

    #[error("invalid correlation model: {0}")]
    InvalidModel(String),

    #[error("mean density over the window is zero")]
    ZeroMeanDensity,

    #[error("pair sampler rejected {rate:.4} of proposals")]
    RejectionRate { rate: f64 },

    #[error("scaling fit: {0}")]
    Fit(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
