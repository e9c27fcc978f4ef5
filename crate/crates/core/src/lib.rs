//! Core of the GLD-Net monaural speech enhancer.
//!
//! Everything in this crate is pure computation over owned buffers: a small
//! dense tensor library with reverse-mode differentiation, STFT analysis and
//! synthesis, the global-local dependency (GLD) attention block, the
//! three-branch encoder/decoder network, mixture construction, objective
//! metrics and the optimization step. It needs `alloc` but not `std`; file
//! formats, the training loop driver and the command line live in the
//! `gldnet` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod gld;
pub mod metrics;
pub mod network;
pub mod rng;
pub mod scalar;
pub mod signal;
pub mod tensorcore;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensorcore::{Graph, Tensor, Var};
