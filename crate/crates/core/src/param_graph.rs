//! Parameter multigraphs: one edge per learnable scalar.
//!
//! Neurons are channels: a convolution or attention layer gets one node per
//! channel no matter how many positions it is applied at, and a shared weight
//! appears exactly once. Each layer family contributes a small subgraph; the
//! subgraphs are stitched along their frontier nodes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use thiserror::Error;

use crate::arch::shape::infer_layer;
use crate::arch::{output_shape, ArchError, ArchSpec, LayerSpec, ParamId, ParamLayout, ParamName, ParamStore};
use crate::tensor::unravel;

/// Number of distinct node-type tags; codes are `tag + TAGS * index`.
pub const NODE_TAGS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeType {
    Hidden,
    Bias,
    NormMean(usize),
    NormVar(usize),
    GridCoord,
    Channel,
    Input(usize),
    Output(usize),
    AttentionHead(usize),
}

impl NodeType {
    pub fn tag(self) -> usize {
        match self {
            NodeType::Hidden => 0,
            NodeType::Bias => 1,
            NodeType::NormMean(_) => 2,
            NodeType::NormVar(_) => 3,
            NodeType::GridCoord => 4,
            NodeType::Channel => 5,
            NodeType::Input(_) => 6,
            NodeType::Output(_) => 7,
            NodeType::AttentionHead(_) => 8,
        }
    }

    pub fn index(self) -> usize {
        match self {
            NodeType::NormMean(i) | NodeType::NormVar(i) | NodeType::Input(i) | NodeType::Output(i) | NodeType::AttentionHead(i) => i,
            _ => 0,
        }
    }

    pub fn code(self) -> usize {
        self.tag() + NODE_TAGS * self.index()
    }

    pub fn from_code(code: usize) -> Option<Self> {
        let (tag, i) = (code % NODE_TAGS, code / NODE_TAGS);
        let no_index = |t: NodeType| (i == 0).then_some(t);
        match tag {
            0 => no_index(NodeType::Hidden),
            1 => no_index(NodeType::Bias),
            2 => Some(NodeType::NormMean(i)),
            3 => Some(NodeType::NormVar(i)),
            4 => no_index(NodeType::GridCoord),
            5 => no_index(NodeType::Channel),
            6 => Some(NodeType::Input(i)),
            7 => Some(NodeType::Output(i)),
            8 => Some(NodeType::AttentionHead(i)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeFeature {
    /// Parametric depth: inputs are 0, the `l`-th parametric layer is `l`.
    pub layer: usize,
    pub node_type: NodeType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeType {
    Weight,
    Bias,
    Residual,
    NormGamma,
    NormBeta,
    Grid,
}

impl EdgeType {
    pub const COUNT: usize = 6;

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Some(match code {
            0 => EdgeType::Weight,
            1 => EdgeType::Bias,
            2 => EdgeType::Residual,
            3 => EdgeType::NormGamma,
            4 => EdgeType::NormBeta,
            5 => EdgeType::Grid,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeature {
    pub value: f64,
    pub layer: usize,
    pub edge_type: EdgeType,
    pub direction: Direction,
    /// Kernel offset, basis index or grid cell, as raw integers.
    pub position: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEdge {
    pub src: usize,
    pub dst: usize,
    pub feature: EdgeFeature,
    pub param: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGraph {
    pub nodes: Vec<NodeFeature>,
    pub edges: Vec<ParamEdge>,
    /// Width of the graph-level feature carried alongside; 0 when unused.
    pub global_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamGraphError {
    #[error("layer {layer_index} ({layer}): {reason}")]
    UnsupportedLayer {
        layer_index: usize,
        layer: &'static str,
        reason: &'static str,
    },
    #[error("no edge is bound to parameter {0}")]
    MissingBinding(ParamId),
    #[error("parameter {0} is bound to more than one edge")]
    DuplicateBinding(ParamId),
    #[error("parameter {0} does not belong to the architecture")]
    UnknownBinding(ParamId),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("edge {edge} references node {node} which does not exist")]
    DanglingEdge { edge: usize, node: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

/// Stitching state between consecutive layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    /// One node per channel of the current activation.
    pub nodes: Vec<usize>,
    /// Shape of the activation tensor at this point.
    pub shape: Vec<usize>,
    /// Spatial shape folded away by a preceding `Flatten`, if more than one
    /// position was folded.
    pub flat_spatial: Option<Vec<usize>>,
    pub depth: usize,
}

struct Builder<'a> {
    params: Option<&'a ParamStore>,
    g: ParamGraph,
}

impl Builder<'_> {
    fn node(&mut self, layer: usize, node_type: NodeType) -> usize {
        self.g.nodes.push(NodeFeature { layer, node_type });
        self.g.nodes.len() - 1
    }

    fn edge(&mut self, src: usize, dst: usize, layer: usize, edge_type: EdgeType, position: Option<Vec<i64>>, param: Option<ParamId>) {
        let value = match (param, self.params) {
            (Some(id), Some(p)) => p.value(&id).expect("parameter store checked against the architecture"),
            (Some(_), None) => 0.0,
            (None, _) => 1.0,
        };
        self.g.edges.push(ParamEdge {
            src,
            dst,
            feature: EdgeFeature {
                value,
                layer,
                edge_type,
                direction: Direction::Forward,
                position,
            },
            param,
        });
    }

    fn layers(&mut self, layers: &[LayerSpec], first: usize, mut f: Frontier) -> Result<Frontier, ParamGraphError> {
        let mut li = first;
        for layer in layers {
            f = self.layer(layer, li, f)?;
            li += layer.subtree_len();
        }
        Ok(f)
    }

    fn layer(&mut self, layer: &LayerSpec, li: usize, f: Frontier) -> Result<Frontier, ParamGraphError> {
        let unsupported = |reason| ParamGraphError::UnsupportedLayer {
            layer_index: li,
            layer: layer.kind_name(),
            reason,
        };
        let mut scratch = li;
        let out_shape = infer_layer(layer, &mut scratch, f.shape.clone())?;
        let d = f.depth + 1;
        let pos = |v: &[usize]| Some(v.iter().map(|&x| x as i64).collect::<Vec<i64>>());
        match layer {
            LayerSpec::Linear {
                in_dim,
                out_dim,
                has_bias,
            } => {
                let outs: Vec<usize> = (0..*out_dim).map(|_| self.node(d, NodeType::Hidden)).collect();
                let c = f.nodes.len();
                for (o, &dst) in outs.iter().enumerate() {
                    for i in 0..*in_dim {
                        let id = ParamId::new(li, ParamName::Weight, o * in_dim + i);
                        let (src, position) = match &f.flat_spatial {
                            Some(sp) => (f.nodes[i % c], pos(&unravel(i / c, sp))),
                            None => (f.nodes[i], None),
                        };
                        self.edge(src, dst, d, EdgeType::Weight, position, Some(id));
                    }
                }
                if *has_bias {
                    let b = self.node(d, NodeType::Bias);
                    for (o, &dst) in outs.iter().enumerate() {
                        self.edge(b, dst, d, EdgeType::Bias, None, Some(ParamId::new(li, ParamName::Bias, o)));
                    }
                }
                Ok(Frontier {
                    nodes: outs,
                    shape: out_shape,
                    flat_spatial: None,
                    depth: d,
                })
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_shape,
                has_bias,
                ..
            } => {
                let n_k: usize = kernel_shape.iter().product();
                let outs: Vec<usize> = (0..*out_channels).map(|_| self.node(d, NodeType::Hidden)).collect();
                for (co, &dst) in outs.iter().enumerate() {
                    for ci in 0..*in_channels {
                        for k in 0..n_k {
                            let id = ParamId::new(li, ParamName::Weight, (co * in_channels + ci) * n_k + k);
                            self.edge(f.nodes[ci], dst, d, EdgeType::Weight, pos(&unravel(k, kernel_shape)), Some(id));
                        }
                    }
                }
                if *has_bias {
                    let b = self.node(d, NodeType::Bias);
                    for (co, &dst) in outs.iter().enumerate() {
                        self.edge(b, dst, d, EdgeType::Bias, None, Some(ParamId::new(li, ParamName::Bias, co)));
                    }
                }
                Ok(Frontier {
                    nodes: outs,
                    shape: out_shape,
                    flat_spatial: None,
                    depth: d,
                })
            }
            LayerSpec::DeepSetsLinear {
                in_channels,
                out_channels,
                ..
            } => {
                let outs: Vec<usize> = (0..*out_channels).map(|_| self.node(d, NodeType::Hidden)).collect();
                for basis in 0..2 {
                    for (o, &dst) in outs.iter().enumerate() {
                        for i in 0..*in_channels {
                            let id = ParamId::new(li, ParamName::Weight, (basis * out_channels + o) * in_channels + i);
                            self.edge(f.nodes[i], dst, d, EdgeType::Weight, Some(vec![basis as i64]), Some(id));
                        }
                    }
                }
                Ok(Frontier {
                    nodes: outs,
                    shape: out_shape,
                    flat_spatial: None,
                    depth: d,
                })
            }
            LayerSpec::MultiHeadAttention {
                model_dim,
                head_dim,
                has_bias,
                ..
            } => {
                let dm = *model_dim;
                // Query, key and value columns, tagged with their head.
                let middle: Vec<usize> = (0..3 * dm)
                    .map(|m| self.node(d, NodeType::AttentionHead((m % dm) / head_dim)))
                    .collect();
                for r in 0..3 {
                    for c in 0..dm {
                        for i in 0..dm {
                            let id = ParamId::new(li, ParamName::Weight, (r * dm + c) * dm + i);
                            self.edge(f.nodes[i], middle[r * dm + c], d, EdgeType::Weight, Some(vec![r as i64]), Some(id));
                        }
                    }
                }
                if *has_bias {
                    let b = self.node(d, NodeType::Bias);
                    for r in 0..3 {
                        for c in 0..dm {
                            let id = ParamId::new(li, ParamName::Bias, r * dm + c);
                            self.edge(b, middle[r * dm + c], d, EdgeType::Bias, Some(vec![r as i64]), Some(id));
                        }
                    }
                }
                let outs: Vec<usize> = (0..dm).map(|_| self.node(d + 1, NodeType::Hidden)).collect();
                for (o, &dst) in outs.iter().enumerate() {
                    for c in 0..dm {
                        let id = ParamId::new(li, ParamName::Weight, (3 * dm + o) * dm + c);
                        self.edge(middle[2 * dm + c], dst, d + 1, EdgeType::Weight, Some(vec![3]), Some(id));
                    }
                }
                if *has_bias {
                    let b = self.node(d + 1, NodeType::Bias);
                    for (o, &dst) in outs.iter().enumerate() {
                        let id = ParamId::new(li, ParamName::Bias, 3 * dm + o);
                        self.edge(b, dst, d + 1, EdgeType::Bias, Some(vec![3]), Some(id));
                    }
                }
                Ok(Frontier {
                    nodes: outs,
                    shape: out_shape,
                    flat_spatial: None,
                    depth: d + 1,
                })
            }
            LayerSpec::Norm { kind, num_features } => {
                if f.flat_spatial.is_some() {
                    return Err(unsupported("normalization over a flattened multi-position activation"));
                }
                let code = kind.code();
                let mean = self.node(d, NodeType::NormMean(code));
                let var = self.node(d, NodeType::NormVar(code));
                for c in 0..*num_features {
                    self.edge(var, f.nodes[c], d, EdgeType::NormGamma, None, Some(ParamId::new(li, ParamName::Gamma, c)));
                }
                for c in 0..*num_features {
                    self.edge(mean, f.nodes[c], d, EdgeType::NormBeta, None, Some(ParamId::new(li, ParamName::Beta, c)));
                }
                Ok(Frontier { depth: d, ..f })
            }
            LayerSpec::SpatialGrid {
                grid_shape, channels, ..
            } => {
                if f.flat_spatial.is_some() {
                    return Err(unsupported("grid lookup on a flattened multi-position activation"));
                }
                let cells: usize = grid_shape.iter().product();
                let chans: Vec<usize> = (0..*channels).map(|_| self.node(d, NodeType::Channel)).collect();
                for cell in 0..cells {
                    let node = self.node(d, NodeType::GridCoord);
                    let at = pos(&unravel(cell, grid_shape));
                    for (ch, &dst) in chans.iter().enumerate() {
                        let id = ParamId::new(li, ParamName::Grid, cell * channels + ch);
                        self.edge(node, dst, d, EdgeType::Grid, at.clone(), Some(id));
                    }
                }
                let mut nodes = chans;
                nodes.extend_from_slice(&f.nodes);
                Ok(Frontier {
                    nodes,
                    shape: out_shape,
                    flat_spatial: None,
                    depth: d,
                })
            }
            LayerSpec::Residual { inner } => {
                if f.flat_spatial.is_some() {
                    return Err(unsupported("residual around a flattened multi-position activation"));
                }
                let exit = self.layers(inner, li + 1, f.clone())?;
                if exit.flat_spatial.is_some() || exit.nodes.len() != f.nodes.len() {
                    return Err(unsupported("residual branch changes the channel layout"));
                }
                for (&a, &b) in f.nodes.iter().zip(&exit.nodes) {
                    if a != b {
                        self.edge(a, b, f.depth, EdgeType::Residual, None, None);
                    }
                }
                Ok(exit)
            }
            LayerSpec::Activation { .. } => Ok(f),
            LayerSpec::Flatten => {
                let rank = f.shape.len();
                let mut spatial: Vec<usize> = f.flat_spatial.clone().unwrap_or_default();
                if rank >= 2 {
                    if spatial.is_empty() {
                        spatial = f.shape[..rank - 1].to_vec();
                    } else {
                        return Err(unsupported("nested flatten of a flattened activation"));
                    }
                }
                let folded = spatial.iter().product::<usize>() > 1;
                Ok(Frontier {
                    nodes: f.nodes,
                    shape: out_shape,
                    flat_spatial: folded.then_some(spatial),
                    depth: f.depth,
                })
            }
        }
    }
}

/// Subgraph of a single layer. The first `in_frontier.nodes.len()` nodes of
/// the result stand in for the incoming frontier (ids are renumbered to
/// `0..k`). Edge values are read from `params` when given, zero otherwise.
pub fn build_layer_subgraph(layer: &LayerSpec, layer_index: usize, in_frontier: &Frontier, params: Option<&ParamStore>) -> Result<(ParamGraph, Frontier), ParamGraphError> {
    let mut b = Builder {
        params,
        g: ParamGraph::default(),
    };
    let nodes: Vec<usize> = (0..in_frontier.nodes.len())
        .map(|_| b.node(in_frontier.depth, NodeType::Hidden))
        .collect();
    let f = Frontier {
        nodes,
        ..in_frontier.clone()
    };
    let out = b.layer(layer, layer_index, f)?;
    Ok((b.g, out))
}

/// Frontier of a network's input: one input node per last-axis entry.
pub fn input_frontier(input_shape: &[usize]) -> Frontier {
    Frontier {
        nodes: (0..*input_shape.last().unwrap_or(&1)).collect(),
        shape: input_shape.to_vec(),
        flat_spatial: None,
        depth: 0,
    }
}

/// Stitches the per-layer subgraphs of `spec` into one parameter graph.
pub fn build_param_graph(spec: &ArchSpec, params: &ParamStore) -> Result<ParamGraph, ParamGraphError> {
    output_shape(spec)?;
    params.check_against(spec)?;
    build(spec, Some(params))
}

/// Graph structure of `spec` with every parameter value set to zero.
pub fn build_param_graph_structure(spec: &ArchSpec) -> Result<ParamGraph, ParamGraphError> {
    output_shape(spec)?;
    build(spec, None)
}

fn build(spec: &ArchSpec, params: Option<&ParamStore>) -> Result<ParamGraph, ParamGraphError> {
    let mut b = Builder {
        params,
        g: ParamGraph::default(),
    };
    let start = input_frontier(&spec.input_shape);
    for i in 0..start.nodes.len() {
        b.node(0, NodeType::Input(i));
    }
    let end = b.layers(&spec.layers, 0, start)?;
    let mut j = 0;
    for &n in &end.nodes {
        let feature = &mut b.g.nodes[n];
        if matches!(feature.node_type, NodeType::Hidden | NodeType::Channel) {
            feature.node_type = NodeType::Output(j);
            j += 1;
        }
    }
    Ok(b.g)
}

/// Reads every parameter back from its bound edge.
pub fn extract_params(g: &ParamGraph, spec: &ArchSpec) -> Result<ParamStore, ParamGraphError> {
    let layout = ParamLayout::new(spec);
    let mut store = ParamStore::zeros(spec);
    let mut seen = vec![false; layout.total()];
    for e in &g.edges {
        let Some(id) = e.param else { continue };
        let slot = layout.global_index(&id).filter(|_| {
            layout
                .shape(&id.key())
                .is_some_and(|s| id.flat_index < s.iter().product())
        });
        let Some(slot) = slot else {
            return Err(ParamGraphError::UnknownBinding(id));
        };
        if seen[slot] {
            return Err(ParamGraphError::DuplicateBinding(id));
        }
        seen[slot] = true;
        store.set_value(&id, e.feature.value);
    }
    if let Some(missing) = store.param_ids().into_iter().zip(&seen).find(|(_, s)| !**s) {
        return Err(ParamGraphError::MissingBinding(missing.0));
    }
    Ok(store)
}

/// Appends a reversed, parameter-free copy of every edge.
pub fn to_undirected(g: &ParamGraph) -> ParamGraph {
    let mut out = g.clone();
    for e in &g.edges {
        let mut feature = e.feature.clone();
        feature.direction = Direction::Backward;
        out.edges.push(ParamEdge {
            src: e.dst,
            dst: e.src,
            feature,
            param: None,
        });
    }
    out
}

impl ParamGraph {
    pub fn num_param_edges(&self) -> usize {
        self.edges.iter().filter(|e| e.param.is_some()).count()
    }

    /// Copy of the graph with one edge value replaced.
    pub fn with_edge_value(&self, edge: usize, value: f64) -> Self {
        let mut g = self.clone();
        g.edges[edge].feature.value = value;
        g
    }

    /// Indices of parameter-bound edges in edge-list order.
    pub fn param_edges(&self) -> Vec<usize> {
        (0..self.edges.len()).filter(|&i| self.edges[i].param.is_some()).collect()
    }

    pub fn check(&self) -> Result<(), ParamGraphError> {
        if self.nodes.is_empty() {
            return Err(ParamGraphError::EmptyGraph);
        }
        for (i, e) in self.edges.iter().enumerate() {
            for node in [e.src, e.dst] {
                if node >= self.nodes.len() {
                    return Err(ParamGraphError::DanglingEdge { edge: i, node });
                }
            }
        }
        Ok(())
    }

    /// Whether every node can reach every other ignoring direction.
    pub fn is_connected(&self) -> bool {
        let n = self.nodes.len();
        if n == 0 {
            return false;
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let (a, b) = (root(&mut parent, e.src), root(&mut parent, e.dst));
            parent[a] = b;
        }
        let r = root(&mut parent, 0);
        (0..n).all(|i| root(&mut parent, i) == r)
    }

    /// Graphviz rendering; parallel edges are emitted individually.
    pub fn to_dot(&self) -> Result<String, ParamGraphError> {
        self.check()?;
        let mut s = String::from("digraph parameters {\n  rankdir=LR;\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let label = match n.node_type {
                NodeType::Hidden => String::from("hidden"),
                NodeType::Bias => String::from("bias"),
                NodeType::NormMean(_) => String::from("mean"),
                NodeType::NormVar(_) => String::from("var"),
                NodeType::GridCoord => String::from("grid"),
                NodeType::Channel => String::from("channel"),
                NodeType::Input(i) => format!("in{i}"),
                NodeType::Output(j) => format!("out{j}"),
                NodeType::AttentionHead(h) => format!("head{h}"),
            };
            let _ = writeln!(s, "  n{id} [label=\"{label}:{}\"];", n.layer);
        }
        for e in &self.edges {
            let f = &e.feature;
            let mut label = format!("{:.4}", f.value);
            if let Some(p) = &f.position {
                let _ = write!(label, " @{p:?}");
            }
            let style = match (f.edge_type, f.direction) {
                (EdgeType::Residual, _) => ", style=dashed",
                (_, Direction::Backward) => ", style=dotted",
                _ => "",
            };
            let _ = writeln!(s, "  n{} -> n{} [label=\"{}\"{}];", e.src, e.dst, label, style);
        }
        s.push_str("}\n");
        Ok(s)
    }
}

#[cfg(test)]
mod tests;
