//! ANOVA simultaneous component analysis (ASCA) for calendar-structured
//! time series.
//!
//! The pipeline goes: raw `(timestamp, series, value)` records are folded
//! into a labeled multiway tensor whose modes are calendar scales
//! ([`tensor`]), the tensor is unfolded into an observation-by-variable
//! table, cleaned ([`preprocess`]), factored into per-effect matrices by
//! least squares on a sum-coded design ([`design`], [`factorization`]),
//! effect significance is assessed by permutation ([`inference`]), and each
//! effect matrix is explored through its principal components ([`sca`])
//! and residual diagnostics ([`diagnostics`]).
//!
//! With the `parallel` feature (on by default) the permutation loop runs
//! on rayon; without it the same loop runs sequentially. Results are
//! identical either way: the permutations are pre-generated from the seed
//! and evaluated independently.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod factorization;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod preprocess;
pub mod sca;
pub mod tensor;

pub use error::AscaError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, AscaError>;
