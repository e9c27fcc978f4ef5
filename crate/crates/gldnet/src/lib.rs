//! File formats, the training driver and the command line around
//! [`gldnet_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod fit;
pub mod gradsuite;
pub mod wav;

pub use error::{Error, Result};
