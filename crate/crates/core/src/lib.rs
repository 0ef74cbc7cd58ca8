//! Distributed evolutionary solver for dense linear systems `Ax = b`.
//!
//! Every individual carries a candidate vector and its own relaxation factor.
//! Mutation is one Jacobi successive-relaxation sweep, and relaxation factors
//! adapt over time from pairwise fitness comparisons. The generation loop runs
//! in one process, on an in-process virtual cluster, or on a TCP master/slave
//! cluster, and all three produce bit-identical trajectories for equal seeds
//! and slave counts.

pub mod cluster;
pub mod engine;
pub mod evolution;
pub mod json;
pub mod metrics;
pub mod problem;
pub mod rng;
pub mod wire;

pub use engine::{run_solver, SolveResult, Topology};
pub use evolution::{EvoParams, Individual, Population, SelectionMethod};
pub use problem::{Family, LinearSystem, ProblemSpec};
pub use rng::RngStream;
