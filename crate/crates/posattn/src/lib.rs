//! Training dynamics of one-layer transformers with position-only softmax
//! attention learning bilinear teacher models `f*(X) = sigma(V* X S*)`.
//!
//! The crate has three layers:
//! - closed-form Gaussian expectation calculus ([`expectations`]) with Monte
//!   Carlo oracles,
//! - the reduced scalar dynamics `(C1, C2, C3, p)` of population gradient
//!   descent ([`dynamics`]),
//! - empirical mini-batch training of the matrix-valued student
//!   ([`trainer`]) with out-of-distribution and adversarial evaluation.
//!
//! [`teachers`] constructs the task families (CNN pooling, GCN on a regular
//! graph, sparse token selection, group-sparse linear prediction),
//! [`attention`] the student forward pass, [`analysis`] the slope/structure
//! metrics, and [`io`] deterministic CSV/PGM artifacts.

pub mod analysis;
pub mod attention;
pub mod core;
pub mod dynamics;
pub mod error;
pub mod expectations;
pub mod io;
pub mod stream;
pub mod teachers;
pub mod trainer;

pub use crate::core::{ActivationKind, EncodingScheme, PositionalEncoding, RealMatrix};
pub use crate::error::{Error, Result};
