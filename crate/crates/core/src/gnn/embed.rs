//! Raw node and edge features shared by both graph kinds.
//!
//! Integer codes are one-hot encoded (clamped to a fixed number of slots so
//! the width never depends on graph size); real values pass through. Every
//! channel except the edge value is invariant under neural DAG
//! automorphisms, which is what makes the metanet equivariant.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::mat::Mat;
use crate::arch::{Activation, ParamId, ParamName};
use crate::automorphism::{NeuralAutomorphism, SearchEdge, SearchGraph};
use crate::compute_graph::{CompGraph, NodeKind};
use crate::param_graph::{Direction, EdgeType, NodeType, ParamGraph};

pub const TAG_SLOTS: usize = 9;
pub const INDEX_SLOTS: usize = 8;
pub const LAYER_SLOTS: usize = 12;
pub const ACT_SLOTS: usize = 3;
pub const POS_SLOTS: usize = 3;

pub const NODE_VALUE: usize = 0;
pub const NODE_TAG: usize = NODE_VALUE + 1;
pub const NODE_INDEX: usize = NODE_TAG + TAG_SLOTS;
pub const NODE_LAYER: usize = NODE_INDEX + INDEX_SLOTS;
pub const NODE_ACT: usize = NODE_LAYER + LAYER_SLOTS;
pub const NODE_FEATURES: usize = NODE_ACT + ACT_SLOTS;

pub const EDGE_VALUE: usize = 0;
pub const EDGE_TYPE: usize = EDGE_VALUE + 1;
pub const EDGE_DIR: usize = EDGE_TYPE + EdgeType::COUNT;
pub const EDGE_LAYER: usize = EDGE_DIR + 2;
pub const EDGE_POS: usize = EDGE_LAYER + LAYER_SLOTS;
pub const EDGE_HAS_POS: usize = EDGE_POS + POS_SLOTS;
pub const EDGE_FEATURES: usize = EDGE_HAS_POS + 1;

const HIDDEN_TAG: usize = 0;
const BIAS_TAG: usize = 1;
const INPUT_TAG: usize = 6;
const OUTPUT_TAG: usize = 7;

fn slot(x: usize, slots: usize) -> usize {
    x.min(slots - 1)
}

/// Graph ready for the metanet: raw features plus connectivity. Edge `e`
/// runs from `src[e]` to `dst[e]`; messages flow along that direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub nodes: Mat,
    pub edges: Mat,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Tied edges share a class; used only for automorphism search.
    pub share_class: Vec<usize>,
    pub edge_param: Vec<Option<ParamId>>,
    pub input_nodes: Vec<usize>,
    pub output_nodes: Vec<usize>,
}

fn node_row(tag: usize, index: usize, layer: usize, act: Option<Activation>) -> [f64; NODE_FEATURES] {
    let mut row = [0.0; NODE_FEATURES];
    row[NODE_TAG + tag] = 1.0;
    row[NODE_INDEX + slot(index, INDEX_SLOTS)] = 1.0;
    row[NODE_LAYER + slot(layer, LAYER_SLOTS)] = 1.0;
    if let Some(a) = act {
        let k = match a {
            Activation::Relu => 0,
            Activation::Sine => 1,
            Activation::Identity => 2,
        };
        row[NODE_ACT + k] = 1.0;
    }
    row
}

fn edge_row(value: f64, etype: EdgeType, dir: Direction, layer: usize, position: Option<&[i64]>) -> [f64; EDGE_FEATURES] {
    let mut row = [0.0; EDGE_FEATURES];
    row[EDGE_VALUE] = value;
    row[EDGE_TYPE + etype.code()] = 1.0;
    row[EDGE_DIR + usize::from(dir == Direction::Backward)] = 1.0;
    row[EDGE_LAYER + slot(layer, LAYER_SLOTS)] = 1.0;
    if let Some(pos) = position {
        for (k, &p) in pos.iter().take(POS_SLOTS).enumerate() {
            row[EDGE_POS + k] = p as f64;
        }
        row[EDGE_HAS_POS] = 1.0;
    }
    row
}

fn ordered_by_index(pairs: &mut [(usize, usize)]) -> Vec<usize> {
    pairs.sort_unstable();
    pairs.iter().map(|&(_, id)| id).collect()
}

/// Features of a parameter graph (directed or already undirected).
pub fn embed_param_graph(g: &ParamGraph) -> GraphInput {
    let mut nodes = Mat::zeros(g.nodes.len(), NODE_FEATURES);
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    for (i, n) in g.nodes.iter().enumerate() {
        nodes.row_mut(i).copy_from_slice(&node_row(n.node_type.tag(), n.node_type.index(), n.layer, None));
        match n.node_type {
            NodeType::Input(k) => inputs.push((k, i)),
            NodeType::Output(k) => outputs.push((k, i)),
            _ => {}
        }
    }
    let mut edges = Mat::zeros(g.edges.len(), EDGE_FEATURES);
    for (i, e) in g.edges.iter().enumerate() {
        let f = &e.feature;
        edges
            .row_mut(i)
            .copy_from_slice(&edge_row(f.value, f.edge_type, f.direction, f.layer, f.position.as_deref()));
    }
    GraphInput {
        nodes,
        edges,
        src: g.edges.iter().map(|e| e.src).collect(),
        dst: g.edges.iter().map(|e| e.dst).collect(),
        // Every parameter has its own edge, so no two edges are tied.
        share_class: (0..g.edges.len()).collect(),
        edge_param: g.edges.iter().map(|e| e.param).collect(),
        input_nodes: ordered_by_index(&mut inputs),
        output_nodes: ordered_by_index(&mut outputs),
    }
}

/// Features of a computation graph. Edges are directed forward.
pub fn embed_comp_graph(g: &CompGraph) -> GraphInput {
    let mut nodes = Mat::zeros(g.nodes.len(), NODE_FEATURES);
    let mut bias_ordinal = 0;
    for (i, n) in g.nodes.iter().enumerate() {
        let (tag, index, layer) = match n.kind {
            NodeKind::Input(k) => (INPUT_TAG, k, n.layer_number),
            NodeKind::Output(k) => (OUTPUT_TAG, k, n.layer_number),
            NodeKind::Bias(_) => {
                bias_ordinal += 1;
                (BIAS_TAG, 0, bias_ordinal)
            }
            NodeKind::Hidden => (HIDDEN_TAG, 0, n.layer_number),
        };
        nodes.row_mut(i).copy_from_slice(&node_row(tag, index, layer, Some(n.activation)));
    }
    let mut edges = Mat::zeros(g.edges.len(), EDGE_FEATURES);
    for (i, e) in g.edges.iter().enumerate() {
        let etype = match e.param {
            None => EdgeType::Residual,
            Some(p) if p.name == ParamName::Bias => EdgeType::Bias,
            Some(_) => EdgeType::Weight,
        };
        let layer = g.nodes[e.dst].layer_number;
        edges.row_mut(i).copy_from_slice(&edge_row(e.weight, etype, Direction::Forward, layer, None));
    }
    GraphInput {
        nodes,
        edges,
        src: g.edges.iter().map(|e| e.src).collect(),
        dst: g.edges.iter().map(|e| e.dst).collect(),
        share_class: g.edges.iter().map(|e| e.share_class).collect(),
        edge_param: g.edges.iter().map(|e| e.param).collect(),
        input_nodes: g.input_nodes().to_vec(),
        output_nodes: g.output_nodes().to_vec(),
    }
}

impl GraphInput {
    pub fn num_nodes(&self) -> usize {
        self.nodes.rows()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.rows()
    }

    /// Parameter-bound edges ordered by parameter (canonical flat order),
    /// ties broken by edge index.
    pub fn param_edges(&self) -> Vec<usize> {
        let mut ids: Vec<(ParamId, usize)> = self.edge_param.iter().enumerate().filter_map(|(e, p)| p.map(|p| (p, e))).collect();
        ids.sort_unstable();
        ids.into_iter().map(|(_, e)| e).collect()
    }

    /// Appends a backward copy of every forward edge, so messages flow both
    /// ways. Copies carry no parameter binding.
    pub fn undirected(&self) -> Self {
        let m = self.num_edges();
        let mut edges = Mat::zeros(2 * m, EDGE_FEATURES);
        edges.data_mut()[..m * EDGE_FEATURES].copy_from_slice(self.edges.data());
        for e in 0..m {
            let row = edges.row_mut(m + e);
            row.copy_from_slice(self.edges.row(e));
            row[EDGE_DIR] = 0.0;
            row[EDGE_DIR + 1] = 1.0;
        }
        let mut out = self.clone();
        out.edges = edges;
        out.src.extend_from_slice(&self.dst);
        out.dst.extend_from_slice(&self.src);
        out.share_class.extend_from_within(..m);
        out.edge_param.extend(core::iter::repeat_n(None, m));
        out
    }

    /// Seeds the value channel of the input nodes.
    pub fn with_input_values(&self, x: &[f64]) -> Self {
        let mut out = self.clone();
        for (&n, &v) in self.input_nodes.iter().zip(x) {
            out.nodes.set(n, NODE_VALUE, v);
        }
        out
    }

    /// `phi . g`: node rows move with the node permutation, edge rows with
    /// the edge permutation. Connectivity is unchanged, which is exactly
    /// what an automorphism guarantees.
    pub fn permuted(&self, a: &NeuralAutomorphism) -> Self {
        let mut out = self.clone();
        out.nodes = self.nodes.scatter_rows(&a.node_perm);
        out.edges = self.edges.scatter_rows(&a.edge_perm);
        out
    }

    /// Labelled view for automorphism search: node labels are the full raw
    /// feature rows, edge tags every channel except the value.
    pub fn search_graph(&self) -> SearchGraph {
        let mut labels: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let node_labels = (0..self.num_nodes())
            .map(|i| {
                let key: Vec<u64> = self.nodes.row(i).iter().map(|x| x.to_bits()).collect();
                let next = labels.len();
                *labels.entry(key).or_insert(next)
            })
            .collect();
        let fixed = (0..self.num_nodes())
            .map(|i| {
                let row = self.nodes.row(i);
                // Hidden, channel and attention-head nodes may move.
                !(row[NODE_TAG] == 1.0 || row[NODE_TAG + 5] == 1.0 || row[NODE_TAG + 8] == 1.0)
            })
            .collect();
        let mut tags: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
        let edges = (0..self.num_edges())
            .map(|e| {
                let key: Vec<u64> = self.edges.row(e)[EDGE_VALUE + 1..].iter().map(|x| x.to_bits()).collect();
                let next = tags.len();
                SearchEdge {
                    src: self.src[e],
                    dst: self.dst[e],
                    tag: *tags.entry(key).or_insert(next),
                    class: self.share_class[e],
                }
            })
            .collect();
        SearchGraph::new(node_labels, fixed, edges)
    }
}

/// Automorphism of a directed graph lifted to its [`GraphInput::undirected`]
/// form: backward copies follow their forward edges.
pub fn lift_to_undirected(a: &NeuralAutomorphism) -> NeuralAutomorphism {
    let m = a.edge_perm.len();
    let mut edge_perm = a.edge_perm.clone();
    edge_perm.extend(a.edge_perm.iter().map(|&f| f + m));
    NeuralAutomorphism {
        node_perm: a.node_perm.clone(),
        edge_perm,
    }
}

