//! Near-field codebook design and multiuser precoding for discrete-phase
//! extremely large reconfigurable intelligent surfaces (XL-RIS).
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`]: spherical-wavefront main-path channels from 3D geometry.
//! - [`projections`]: nearest-point maps onto discrete and continuous
//!   unit-modulus sets.
//! - [`solvers`]: power-constrained least squares and the increasing-penalty
//!   dual decomposition (IPDD) loop for discrete-phase quadratic problems.
//! - [`codebook`]: sampling grids, desired beam patterns, joint (JOCC) and
//!   separate (SOCC) codeword construction, and codebook persistence.
//! - [`training`]: hierarchical and exhaustive beam training.
//! - [`im`]: desired-gain-matrix interference management with fairness
//!   adaptation.
//! - [`benchmarks`]: rate evaluation and the WMMSE sum-rate baseline.
//! - [`hybrid`]: analog/digital factorization of full-digital precoders.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarks;
pub mod codebook;
pub mod error;
pub mod geometry;
pub mod hybrid;
pub mod im;
pub mod linalg;
pub mod projections;
pub mod solvers;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Dense complex column vector.
pub type CVector = nalgebra::DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
