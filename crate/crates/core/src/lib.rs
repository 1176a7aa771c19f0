//! Region-based non-local attention operators for space-time feature
//! tensors.
//!
//! The crate provides the dense tensor primitives, the region aggregation
//! and pairwise-similarity machinery, full NL/RNL/SE/chain attention blocks
//! with reverse-mode gradients and a finite-difference checker, naive
//! position-pair reference oracles, and an analytic shape/FLOP/parameter
//! model for the backbone architecture.

pub mod aggregation;
pub mod archcost;
pub mod autodiff;
pub mod blocks;
pub mod element;
pub mod error;
pub mod io;
pub mod reference;
pub mod rng;
pub mod similarity;
pub mod tensor;

pub use element::{Dtype, Element};
pub use error::{Error, Result};
pub use tensor::{FeatureClip, Tensor};
