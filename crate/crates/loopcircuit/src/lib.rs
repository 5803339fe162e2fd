//! Loop-model simulator for measurement-only Majorana circuits.
//!
//! World lines of Majorana modes are tracked as a pairing over boundary
//! nodes; every parity check is an O(1) loop surgery, and circuits of depth
//! `t` compose as transfer matrices in O(N). On top of this engine sit the
//! observables (entanglement, spanning and loop statistics), closed-form
//! reference formulas, finite-size scaling fits and the campaign harness.

pub mod error;
pub mod fss;
pub mod harness;
pub mod histogram;
pub mod lattice;
pub mod loopstate;
pub mod observables;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use histogram::LoopHistogram;
pub use lattice::{Color, Geometry, LatticeSpec};
pub use loopstate::{CircuitBlock, Closure, ClosurePolicy, PairingState};
pub use observables::SurfaceRecord;
