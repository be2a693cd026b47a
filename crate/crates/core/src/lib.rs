//! Target-guided dynamic mixup for cross-domain few-shot learning.
//!
//! A desk-scale numerical engine: episodic few-shot classification over a
//! source domain, a scarce auxiliary target domain, and a mixed intermediate
//! domain whose mix ratio is produced online by a small ratio network trained
//! through a bi-level (hypergradient) procedure.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;

pub(crate) mod rng;

pub use autodiff::{Graph, NodeId, ParamSet, Tensor};
pub use error::{Error, Result};
