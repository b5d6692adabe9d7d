//! Capital gains taxation with limited use of losses on finite scenario trees.
//!
//! The engine tracks exact lot bases: each share sold is matched to the lot
//! it was bought in. Taxes are α times the running maximum of accumulated
//! realized gains, so losses only offset earlier or later gains and never
//! produce a refund.

pub mod cone;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod lp;
pub mod optimizer;
pub mod par;
pub mod polytope;
pub mod repro;
pub mod sampling;
pub mod strategy;
pub mod transforms;
pub mod tree;
pub mod utility;

pub use error::{Error, Result};
