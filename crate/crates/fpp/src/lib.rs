//! Maximal streams in first-passage percolation on Z^d/n: exact max-flow,
//! stream decomposition and mixing, a dyadic distance between vector
//! measures, and Monte Carlo estimates of the rate function and flow constant.

pub mod cli;
pub mod continuous;
pub mod environment;
pub mod error;
pub mod estimate;
pub mod lattice;
pub mod maxflow;
pub mod measure;
pub mod reconnect;
pub mod scalar;
pub mod stream;

pub use error::{FppError, Result};
pub use scalar::{Rational, Scalar, Q};
