//! Leverage score sparsified (LESS) sketching for least squares.
//!
//! The pipeline: stream the rows of `(A, b)` once, estimate each row's
//! leverage from a preconditioner, sample that row's column of a sparse
//! sketching matrix, and accumulate `(SA, Sb)`. Solving the small sketched
//! problem gives a nearly unbiased estimate of the least squares solution,
//! and averaging independent estimates across machines drives the error
//! down to that small bias.
//!
//! Modules, bottom up:
//! - [`matrix`]: dense types, Householder QR, exact least squares, PCG.
//! - [`leverage`]: exact and single-pass approximate leverage scores.
//! - [`less`]: LESS sampling and the streaming sketch accumulator.
//! - [`solver`]: sketched estimators, γ-corrected inverse covariance, averaging.
//! - [`distributed`]: simulated multi-machine two-pass protocol with cost ledgers.
//! - [`verify`]: Monte Carlo checks of the bias and concentration properties.
//! - [`synth`]: seeded synthetic least squares problems.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributed;
pub mod error;
pub mod less;
pub mod leverage;
pub mod matrix;
pub mod rng;
pub mod solver;
pub mod synth;
pub mod verify;

pub use error::{LessError, Result};
pub use less::{LessConfig, SketchAccumulator, SketchColumn, SketchMode};
pub use leverage::{LeverageScores, Preconditioner};
pub use matrix::{DenseMatrix, DenseVector, QrFactors};
pub use solver::{EstimateBundle, GammaInverse};
