//! Multiple-instance survival modelling without the standard library.
//!
//! The crate holds the numerical side of the project: the attention /
//! state-space MIL network with its reverse-mode gradients, the discrete-time
//! survival head, the cross-validated training loop, interpretability maps,
//! classical survival statistics and the feature/gene network pipeline.
//! Everything is a pure function of its inputs (and of explicit seeds); file
//! formats and the command line live in the `tdam` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod bag;
pub mod error;
pub mod explain;
pub mod linalg;
pub mod model;
pub mod netlink;
pub mod real;
pub mod rng;
pub mod special;
pub mod survival;
pub mod survstats;
pub mod trainer;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use real::Real;
