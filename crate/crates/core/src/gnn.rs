//! Message-passing metanetwork over parameter and computation graphs.
//!
//! Graphs are first lowered to a [`GraphInput`]: dense raw node and edge
//! feature rows plus connectivity. A [`GnnModel`] embeds those rows, runs
//! message-passing layers that update node, edge and (optionally) global
//! features, then reads out. Every aggregation is a sum, so any neural
//! automorphism of the input graph commutes with the model.

use thiserror::Error;

use crate::arch::{Activation, ArchError};
use crate::compute_graph::CompGraphError;
use crate::param_graph::ParamGraphError;

mod construct;
mod embed;
mod mat;
mod mlp;
mod model;

#[cfg(test)]
mod tests;

pub use construct::{
    build_forward_sim_gnn, build_npnfn_gnn, build_statnn_gnn, global_output, mlp_weights, npnfn_linear, per_edge_to_mlp, simulate_forward, statistic, statnn_oracle,
    statnn_oracle_with, NpNfnCoeffs, Statistic, STATNN_STATISTICS, SUM_DECOMPOSABLE,
};
pub use embed::{
    embed_comp_graph, embed_param_graph, lift_to_undirected, GraphInput, EDGE_DIR, EDGE_FEATURES, EDGE_HAS_POS, EDGE_LAYER, EDGE_POS, EDGE_TYPE, EDGE_VALUE,
    LAYER_SLOTS, NODE_ACT, NODE_FEATURES, NODE_INDEX, NODE_LAYER, NODE_TAG, NODE_VALUE,
};
pub use mat::Mat;
pub use mlp::{Act, Dense, Mlp};
pub use model::{
    all_edge_outputs, check_equivariance, forward_metanet, run_layers, Dims, GnnConfig, GnnForm, GnnLayer, GnnModel, GraphState, MetanetOutput, Readout, ReadoutKind,
    WeightClass,
};
pub(crate) use mlp::MlpCache;
pub(crate) use model::ModelCache;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnnError {
    #[error("{context}: expected width {expected}, got {got}")]
    DimMismatch { context: &'static str, expected: usize, got: usize },
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("activation {0:?} cannot be simulated with ReLU message passing")]
    UnsupportedNonlinearity(Activation),
    #[error("not a plain MLP: {0}")]
    NotAnMlp(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Graph(#[from] CompGraphError),
    #[error(transparent)]
    ParamGraph(#[from] ParamGraphError),
}
