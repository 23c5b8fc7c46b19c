//! Lower smooth target maps (affine flows, leaky-ReLU flows, neural-ODE flow
//! maps) into finite sequences of *words* drawn from a fixed vocabulary of
//! elementary flow maps, and measure the sup-norm error of the compiled
//! sequence on a compact box.
//!
//! The pipeline has the familiar shape of a lowering compiler:
//!
//! ```text
//! neural ODE field ──euler_split──▶ single-coordinate steps
//!                  ──decompose_step──▶ flows in H1 ∪ H2 (affine / leaky)
//!                  ──split + Lie / exact factorization──▶ elementary flows
//!                  ──Kronecker p − q·√2──▶ words at times 1 and √2
//! ```
//!
//! with an explicit error budget threaded through every stage and an
//! independent Runge-Kutta oracle used to validate all closed forms.
//!
//! Everything numeric is generic over the scalar type through [`num::Scalar`]
//! (`f32` or `f64`); concrete `f64` aliases are exported at the crate root.

// `!(x > 0)` guards reject NaN along with nonpositive values; the positive
// comparison is the condition being asserted.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod check;
pub mod compile;
pub mod error;
pub mod flows;
pub mod harness;
pub mod kron;
pub mod linalg;
pub mod num;
pub mod split;
pub mod target;
pub mod vocab;

pub use error::{Error, Result};
pub use vocab::{Basis, Sentence, Sign, Tau, Word};

/// Affine flow over `f64`, the scalar type used by the CLI.
pub type AffineFlow64 = flows::AffineFlow<f64>;
/// Leaky-ReLU flow over `f64`.
pub type LeakyFlow64 = flows::LeakyFlow<f64>;
/// Flow (affine or leaky) over `f64`.
pub type Flow64 = flows::Flow<f64>;
/// Dense matrix over `f64`.
pub type Mat64 = linalg::Mat<f64>;
/// Compact box domain over `f64`.
pub type BoxDomain64 = harness::BoxDomain<f64>;
/// Evaluation target over `f64`.
pub type TargetMap64 = harness::TargetMap<f64>;
/// Piecewise-constant-in-time one-hidden-layer field over `f64`.
pub type NeuralOdeField64 = compile::NeuralOdeField<f64>;
