//! Erasure-robust sparse designs, hard sparse-regression instances and
//! experiments on the preconditioned Lasso.

#[cfg(test)]
#[macro_use]
mod testutil;

pub mod design;
pub mod erasure;
pub mod error;
pub mod harness;
pub mod instance;
pub mod lasso;
pub mod numerics;
pub mod partial;
pub mod seeds;

pub use error::{Error, Result};
