//! Stability certificates and stabilizing switching-signal synthesis for
//! discrete-time switched linear systems `x(t+1) = A_{sigma(t)} x(t)`.
//!
//! The pipeline: classify each subsystem and equip it with a Lyapunov-like
//! pair `(P_i, lambda_i)`, bound mode transitions with gains `mu_kl`,
//! represent admissible switches as a directed graph, search for a circuit
//! whose weighted log-gain ratio is below one via an incidence-matrix
//! feasibility LP, extract the circuit with Hierholzer's algorithm, and
//! validate the resulting periodic signal by simulation.

pub mod error;
pub mod graph;
pub mod io;
pub(crate) mod linalg;
pub mod lyap;
pub mod sim;
pub mod simplex;
pub mod stability;
pub mod synth;

pub use error::{Error, Result};

/// Mode index into the family of subsystems.
pub type ModeId = usize;
