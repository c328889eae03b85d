use thiserror::Error;

use crate::ModeId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix for mode {mode} is rank deficient (sigma_min/sigma_max = {ratio:.3e})")]
    RankDeficient { mode: ModeId, ratio: f64 },

    #[error("matrix for mode {mode} must be square, got {rows}x{cols}")]
    NotSquare { mode: ModeId, rows: usize, cols: usize },

    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },

    #[error("discrete Lyapunov equation has no unique solution: spectral radius {rho:.6} >= 1")]
    LyapunovUnstable { rho: f64 },

    #[error("matrix is not positive definite (minimum eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("no Lyapunov certificate found for marginally stable mode {mode}: {reason}")]
    NoMarginalCertificate { mode: ModeId, reason: String },

    #[error("vertex set must be nonempty")]
    EmptyVertexSet,

    #[error("duplicate vertex {vertex} in vertex set")]
    DuplicateVertex { vertex: ModeId },

    #[error("edge ({from}, {to}) references an undeclared vertex")]
    DanglingEdge { from: ModeId, to: ModeId },

    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: ModeId, to: ModeId },

    #[error("transition ({from}, {to}) at step {t} is not an admissible edge")]
    InvalidTransition { t: usize, from: ModeId, to: ModeId },

    #[error("walk must contain at least one vertex")]
    EmptyWalk,

    #[error("operation requires a closed walk")]
    WalkNotClosed,

    #[error("signal prefix of length {requested} requested but only {available} values are defined")]
    PrefixTooShort { requested: usize, available: usize },

    #[error("asymptotic verdicts need a circuit-generated (periodic) signal; got a finite prefix")]
    NotPeriodic,

    #[error("no gain mu recorded for edge ({from}, {to})")]
    MissingGain { from: ModeId, to: ModeId },

    #[error("no lambda recorded for mode {mode}")]
    MissingLambda { mode: ModeId },

    #[error("no stability class recorded for mode {mode}")]
    MissingClass { mode: ModeId },

    #[error("mode {mode} is not part of the system")]
    UnknownMode { mode: ModeId },

    #[error("graph has {count} edges; this operation supports at most {max}")]
    TooManyEdges { count: usize, max: usize },

    #[error("feasibility problem is infeasible: {reason}")]
    Infeasible { reason: String },

    #[error("synthesis undecided: {reason}")]
    Undecided { reason: String },

    #[error("LP support decomposed into {count} components; no single component satisfies the ratio condition (component ratios: {ratios:?})")]
    SupportDecomposed { count: usize, ratios: Vec<f64> },

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("state norm {norm:.3e} exceeded the divergence guard at step {t}")]
    Divergence { t: usize, norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}
