//! Synchronized linear shape-deformation spaces.
//!
//! A shape `x` (a point cloud with `n` points, flattened point-major into a
//! `3n` vector) is deformed by a latent vector `v` through its own dictionary
//! `A_x`:
//!
//! ```text
//!     x ⊕ v = A_x v + x
//! ```
//!
//! A jointly trained encoder `E` and dictionary predictor `F` make latent
//! differences `E(y) - E(x)` mean the same deformation on every shape, so an
//! edit recovered on one shape transfers to another. The crate also covers
//! part-box editing handles and the projection of user edits onto the learned
//! space, a circular-trajectory variant, procedural shape families with exact
//! correspondences, and the evaluation metrics.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and the
//! HTTP service live in the `lindeform` companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod deform;
mod error;
pub mod eval;
pub mod geometry;
pub mod handles;
pub mod linalg;
pub mod nets;
pub mod nonlinear;
pub(crate) mod rng;
pub mod training;

pub use error::{Error, Result};
