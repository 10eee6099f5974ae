//! A workbench for conflict-free replicated data types.
//!
//! Every datatype is available under up to four replication approaches:
//! operation-based ([`opbased`]), pure operation-based over a partially
//! ordered log ([`purelog`]), state-based ([`statebased`]) and delta-state
//! ([`delta`]). The [`sim`] module runs them over a deterministic simulated
//! network, and [`runner`] drives it from line-oriented scenario files.

pub mod causal;
pub mod lattice;
pub mod model;
pub mod opbased;
pub mod purelog;
pub mod statebased;
pub mod delta;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod sim;
