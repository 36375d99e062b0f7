//! Graph embedding for distribution-valued data.
//!
//! Each training sample is a probability distribution. Samples are mapped
//! into an RKHS through their kernel mean embeddings and a graph-preserving
//! projection is found by a generalized eigenproblem. Classical linear and
//! kernel graph embedding are provided as baselines, together with
//! Rademacher-complexity calculators and a k-NN evaluation harness.

pub mod bounds;
pub mod cli;
pub mod dataio;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gevp;
pub mod graphs;
pub mod kernels;
pub mod linalg;
pub mod rng;
pub mod uncertainty;

pub use error::{Error, Result};
