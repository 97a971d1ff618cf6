use thiserror::Error;

use crate::spectral::Parity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a {expected:?} series, got {found:?}")]
    ParityMismatch { expected: Parity, found: Parity },

    #[error("wavenumber {0} is odd; only even wavenumbers are representable")]
    OddMode(usize),

    #[error("non-finite integrand value at node {node}")]
    NonFinite { node: usize },

    #[error(
        "curve is (nearly) self-intersecting: |z(θ)-z(η)|² = {distance_sq:e} at node {node}, η node {eta_node}"
    )]
    Geometry {
        node: usize,
        eta_node: usize,
        distance_sq: f64,
    },

    #[error("radius 1+r is not positive at node {node} (value {radius:e})")]
    NonPositiveRadius { node: usize, radius: f64 },

    #[error("perturbing unknown {unknown} leaves the admissible set: {source}")]
    InadmissiblePerturbation {
        unknown: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown integral identity `{0}`")]
    UnknownIdentity(String),

    #[error("finite-difference step {0:e} underflows")]
    StepUnderflow(f64),

    #[error("|b - 2| = {offset} exceeds the local-theory trust radius {radius}")]
    OutsideTrustRegion { offset: f64, radius: f64 },

    #[error("branch has {found} points, at least {needed} are required")]
    BranchTooShort { found: usize, needed: usize },

    #[error("first continuation step failed ({reason}); try a smaller offset from b = 2 or a smaller step")]
    FirstStepFailed { reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record {path}: {reason}")]
    Record { path: String, reason: String },
}
