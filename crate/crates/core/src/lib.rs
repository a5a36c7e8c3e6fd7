//! Inverse-consistent-by-construction image registration.
//!
//! Registration networks output an element of a Lie algebra `g(A, B)` that
//! flips sign when the inputs are swapped, and the transform is `exp(g)`.
//! Multi-step models chain such steps with a square-root sandwich that keeps
//! the composite exactly inverse consistent.

pub mod autodiff;
pub mod data;
mod error;
pub mod io;
pub mod lie;
pub mod losses;
pub mod nets;
pub mod train;

pub use error::{Error, Result};
