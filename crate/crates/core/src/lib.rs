//! Graph metanetworks over feedforward neural networks.
//!
//! Input networks are described by an [`arch::ArchSpec`] plus a
//! [`arch::ParamStore`]. From there the crate lowers a network to either a
//! per-activation [`compute_graph::CompGraph`] (with weight-sharing classes)
//! or a compact [`param_graph::ParamGraph`] that carries exactly one edge per
//! learnable parameter. Neural DAG automorphisms of computation graphs are
//! enumerated and checked in [`automorphism`], and [`gnn`] implements the
//! message-passing metanetwork together with exact constructive models
//! (forward-pass simulation, StatNN, NP-NFN). Training lives in [`train`],
//! desk-scale datasets and metrics in [`tasks`].
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! thread pools live in the `neurograph` companion crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod arch;
pub mod automorphism;
pub mod compute_graph;
pub mod exec;
pub mod gnn;
pub mod param_graph;
pub mod tasks;
pub mod tensor;
pub mod train;

mod math;
pub mod rng;

pub use arch::{Activation, ArchError, ArchSpec, LayerSpec, NormKind, ParamId, ParamName, ParamStore};
pub use tensor::Tensor;
