//! Reverse-mode differentiation over the tensor operation set.
//!
//! The tape is eager: forward values are computed as nodes are recorded, so
//! the same graph construction serves plain execution (never call backward)
//! and gradient computation. The finite-difference checker re-runs the same
//! construction at perturbed points, which keeps the numeric oracle
//! independent of the backward rules it validates.

mod gradcheck;
pub(crate) mod tape;

pub use gradcheck::{finite_diff_check, GradientReport, LeafCheck};
pub use tape::{Gradients, Tape, VarId};
