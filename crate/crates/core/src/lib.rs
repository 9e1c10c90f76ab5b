//! Extreme first-passage statistics of `N` independent discrete-time random
//! walkers on hierarchical graphs.
//!
//! The crate is split along the computation pipeline:
//!
//! * [`graph`]: model geometries (comet graph with a finite head and a
//!   ballistic tail, the one-node leaky loop, the Bethe lattice).
//! * [`fpt`]: exact single-walker first-passage laws, plus a brute-force
//!   enumeration oracle for tiny instances.
//! * [`evt`]: exact and asymptotic statistics of `T_N = min(τ_1, …, τ_N)`
//!   and the entropic function `F(k)`.
//! * [`mc`]: seeded, reproducible Monte Carlo of the min-of-N process.
//! * [`diagnostics`]: the `F(k; d)` invariance test separating
//!   injection-limited from bulk-limited geometries.

pub mod diagnostics;
pub mod error;
pub mod evt;
pub mod fpt;
pub mod graph;
pub mod mc;
pub mod numeric;

pub use error::{Error, Result};
pub use evt::{EntropicProfile, ExtremeQuery};
pub use fpt::FptDistribution;
pub use graph::{BetheSpec, CometSpec, HeadGraph, LeakyLoopSpec, Model, ModelConfig};
