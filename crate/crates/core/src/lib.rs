//! Numerical toolkit for L2-regularized fully-connected networks.
//!
//! The crate evaluates the regularized loss in three equivalent
//! parameterizations: weights ([`network`]), per-layer hidden
//! representations ([`reform_z`]) and covariance pairs ([`reform_k`]).
//! Around those it provides completely positive matrices built from
//! triangle-free graphs ([`cprank`]), a neuron-merging compressor for
//! scalar shallow ReLU networks ([`compress1d`]) and the experiment
//! harness behind the `l2reps` command line tool ([`experiments`]).

pub mod compress1d;
pub mod cprank;
mod error;
pub mod experiments;
pub mod linalg;
pub mod network;
pub mod reform_k;
pub mod reform_z;
pub mod seeds;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use network::{Activation, Cost, ForwardTrace, NetworkParams, OptimizerConfig};
