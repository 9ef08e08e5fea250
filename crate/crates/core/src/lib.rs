//! Finite-dimensional twisted power partial isometries.
//!
//! The crate builds concrete operator tuples (truncated shifts, diagonal
//! twists, tensor models), verifies the twisted commutation relations,
//! computes Halmos–Wallen decompositions with explicit intertwiners, and
//! decomposes whole tuples into multiindexed leaves.

pub mod hw;
pub mod linalg;
pub mod operators;
pub mod twisted;

pub use hw::{hw_decompose, HWDecomposition, HwError};
pub use linalg::{ComplexMatrix, Subspace, Tolerance};
pub use operators::{ModelSpec, SlotKind, TwistedTuple};
