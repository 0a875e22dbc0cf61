//! Standard-library companion to `neurograph-core`: JSON network documents,
//! graph exports, checkpoints, dataset directories, a rayon executor and the
//! `neurograph` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod export;
pub mod network;
pub mod parallel;

pub use error::{Error, Result};
pub use neurograph_core;
