//! Per-activation computation DAGs.
//!
//! Every scalar activation of the input network becomes a node and every
//! scalar multiply an edge. Convolution kernels appear on many edges, tied
//! together by a shared `share_class`. Residual connections and materialized
//! activations become fixed weight-1 edges that carry no parameter.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use thiserror::Error;

use crate::arch::forward::ConvGeom;
use crate::arch::{output_shape, Activation, ArchError, ArchSpec, LayerSpec, ParamId, ParamLayout, ParamName, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NodeKind {
    Input(usize),
    Output(usize),
    /// Bias node of the layer with this pre-order index.
    Bias(usize),
    Hidden,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompNode {
    pub id: usize,
    pub kind: NodeKind,
    /// Longest path length from any input node.
    pub layer_number: usize,
    /// Applied to the weighted input sum of hidden nodes; identity elsewhere.
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CompEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    /// Edges with equal class are tied. Parameter edges use the global flat
    /// offset of their parameter; fixed edges get unique classes after that.
    pub share_class: usize,
    pub param: Option<ParamId>,
}

/// Node ids produced by one top-level layer, in the layer's output layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerNodes {
    pub layer_index: usize,
    pub shape: Vec<usize>,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompGraph {
    pub nodes: Vec<CompNode>,
    pub edges: Vec<CompEdge>,
    pub d_in: usize,
    pub d_out: usize,
    pub output_shape: Vec<usize>,
    /// Frontier after every top-level layer; entry 0 is the input layer.
    pub layer_nodes: Vec<LayerNodes>,
    topo: Vec<usize>,
    incoming: Vec<Vec<usize>>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompGraphError {
    #[error("layer {layer_index} ({layer}) has no computation graph")]
    UnsupportedForComputationGraph { layer_index: usize, layer: &'static str },
    #[error("expected {expected} input values, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("graph is not a DAG")]
    Cyclic,
    #[error("edge {edge} references node {node} which does not exist")]
    DanglingEdge { edge: usize, node: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
}

struct Builder<'a> {
    params: &'a ParamStore,
    layout: ParamLayout,
    nodes: Vec<CompNode>,
    edges: Vec<CompEdge>,
    locked: Vec<bool>,
    next_fixed: usize,
}

impl Builder<'_> {
    fn node(&mut self, kind: NodeKind, activation: Activation) -> usize {
        let id = self.nodes.len();
        self.nodes.push(CompNode {
            id,
            kind,
            layer_number: 0,
            activation,
        });
        self.locked.push(false);
        id
    }

    fn param_edge(&mut self, src: usize, dst: usize, id: ParamId) {
        let weight = self.params.value(&id).expect("parameter store checked against the architecture");
        let share_class = self.layout.global_index(&id).expect("id belongs to the architecture");
        self.edges.push(CompEdge {
            src,
            dst,
            weight,
            share_class,
            param: Some(id),
        });
    }

    fn fixed_edge(&mut self, src: usize, dst: usize) {
        let share_class = self.next_fixed;
        self.next_fixed += 1;
        self.edges.push(CompEdge {
            src,
            dst,
            weight: 1.0,
            share_class,
            param: None,
        });
    }

    /// Hidden identity node that nothing downstream depends on yet.
    fn is_fresh(&self, n: usize) -> bool {
        self.nodes[n].kind == NodeKind::Hidden && self.nodes[n].activation == Activation::Identity && !self.locked[n]
    }

    fn bias_node(&mut self, li: usize, has_bias: bool) -> Option<usize> {
        has_bias.then(|| self.node(NodeKind::Bias(li), Activation::Identity))
    }

    fn layers(&mut self, layers: &[LayerSpec], first: usize, mut frontier: Vec<usize>, mut shape: Vec<usize>, record: Option<&mut Vec<LayerNodes>>) -> Result<(Vec<usize>, Vec<usize>), CompGraphError> {
        let mut record = record;
        let mut li = first;
        for layer in layers {
            let (f, s) = self.layer(layer, li, frontier, shape)?;
            frontier = f;
            shape = s;
            if let Some(r) = record.as_deref_mut() {
                r.push(LayerNodes {
                    layer_index: li,
                    shape: shape.clone(),
                    nodes: frontier.clone(),
                });
            }
            li += layer.subtree_len();
        }
        Ok((frontier, shape))
    }

    fn layer(&mut self, layer: &LayerSpec, li: usize, frontier: Vec<usize>, shape: Vec<usize>) -> Result<(Vec<usize>, Vec<usize>), CompGraphError> {
        match layer {
            LayerSpec::Linear {
                in_dim,
                out_dim,
                has_bias,
            } => {
                let (din, dout) = (*in_dim, *out_dim);
                let bias = self.bias_node(li, *has_bias);
                let rows = frontier.len() / din;
                let mut out = Vec::with_capacity(rows * dout);
                for r in 0..rows {
                    for o in 0..dout {
                        let dst = self.node(NodeKind::Hidden, Activation::Identity);
                        for i in 0..din {
                            self.param_edge(frontier[r * din + i], dst, ParamId::new(li, ParamName::Weight, o * din + i));
                        }
                        if let Some(b) = bias {
                            self.param_edge(b, dst, ParamId::new(li, ParamName::Bias, o));
                        }
                        out.push(dst);
                    }
                }
                let mut shape = shape;
                *shape.last_mut().expect("validated shape") = dout;
                Ok((out, shape))
            }
            LayerSpec::Conv { has_bias, .. } => {
                let g = ConvGeom::new(layer, &shape);
                let bias = self.bias_node(li, *has_bias);
                let n_out: usize = g.out_spatial.iter().product();
                let n_k: usize = g.kernel.iter().product();
                let out: Vec<usize> = (0..n_out * g.cout)
                    .map(|_| self.node(NodeKind::Hidden, Activation::Identity))
                    .collect();
                let mut taps = Vec::new();
                g.for_each_tap(|o, k, p| taps.push((o, k, p)));
                for (o, k, p) in taps {
                    for co in 0..g.cout {
                        for ci in 0..g.cin {
                            let id = ParamId::new(li, ParamName::Weight, (co * g.cin + ci) * n_k + k);
                            self.param_edge(frontier[p * g.cin + ci], out[o * g.cout + co], id);
                        }
                    }
                }
                if let Some(b) = bias {
                    for o in 0..n_out {
                        for co in 0..g.cout {
                            self.param_edge(b, out[o * g.cout + co], ParamId::new(li, ParamName::Bias, co));
                        }
                    }
                }
                let mut shape = g.out_spatial.clone();
                shape.push(g.cout);
                Ok((out, shape))
            }
            LayerSpec::Activation { kind } => {
                let mut out = Vec::with_capacity(frontier.len());
                for n in frontier {
                    if *kind == Activation::Identity {
                        out.push(n);
                    } else if self.is_fresh(n) {
                        self.nodes[n].activation = *kind;
                        out.push(n);
                    } else {
                        let m = self.node(NodeKind::Hidden, *kind);
                        self.fixed_edge(n, m);
                        out.push(m);
                    }
                }
                Ok((out, shape))
            }
            LayerSpec::Flatten => {
                let n = frontier.len();
                Ok((frontier, vec![n]))
            }
            LayerSpec::Residual { inner } => {
                for &n in &frontier {
                    self.locked[n] = true;
                }
                let (inner_out, inner_shape) = self.layers(inner, li + 1, frontier.clone(), shape, None)?;
                let mut out = Vec::with_capacity(frontier.len());
                for (&skip, &o) in frontier.iter().zip(&inner_out) {
                    if self.is_fresh(o) {
                        self.fixed_edge(skip, o);
                        out.push(o);
                    } else {
                        let s = self.node(NodeKind::Hidden, Activation::Identity);
                        self.fixed_edge(skip, s);
                        self.fixed_edge(o, s);
                        out.push(s);
                    }
                }
                Ok((out, inner_shape))
            }
            LayerSpec::DeepSetsLinear { .. } | LayerSpec::MultiHeadAttention { .. } | LayerSpec::Norm { .. } | LayerSpec::SpatialGrid { .. } => {
                Err(CompGraphError::UnsupportedForComputationGraph {
                    layer_index: li,
                    layer: layer.kind_name(),
                })
            }
        }
    }
}

/// Lowers a network to its computation graph, binding the input size from
/// `spec.input_shape`.
pub fn build_computation_graph(spec: &ArchSpec, params: &ParamStore) -> Result<CompGraph, CompGraphError> {
    let out_shape = output_shape(spec)?;
    params.check_against(spec)?;
    let layout = ParamLayout::new(spec);
    let mut b = Builder {
        params,
        next_fixed: layout.total(),
        layout,
        nodes: Vec::new(),
        edges: Vec::new(),
        locked: Vec::new(),
    };
    let d_in: usize = spec.input_shape.iter().product();
    let inputs: Vec<usize> = (0..d_in).map(|i| b.node(NodeKind::Input(i), Activation::Identity)).collect();
    let mut record = vec![LayerNodes {
        layer_index: usize::MAX,
        shape: spec.input_shape.clone(),
        nodes: inputs.clone(),
    }];
    let (frontier, _) = b.layers(&spec.layers, 0, inputs.clone(), spec.input_shape.clone(), Some(&mut record))?;
    let mut outputs = Vec::with_capacity(frontier.len());
    for (j, n) in frontier.into_iter().enumerate() {
        let out = if b.nodes[n].kind == NodeKind::Hidden && b.nodes[n].activation == Activation::Identity && !outputs.contains(&n) {
            n
        } else {
            let m = b.node(NodeKind::Hidden, Activation::Identity);
            b.fixed_edge(n, m);
            m
        };
        b.nodes[out].kind = NodeKind::Output(j);
        outputs.push(out);
    }
    CompGraph::from_parts(b.nodes, b.edges, out_shape, record)
}

impl CompGraph {
    /// Assembles a graph and recomputes topological order and layer numbers.
    pub fn from_parts(nodes: Vec<CompNode>, edges: Vec<CompEdge>, output_shape: Vec<usize>, layer_nodes: Vec<LayerNodes>) -> Result<Self, CompGraphError> {
        let n = nodes.len();
        for (i, e) in edges.iter().enumerate() {
            for node in [e.src, e.dst] {
                if node >= n {
                    return Err(CompGraphError::DanglingEdge { edge: i, node });
                }
            }
        }
        let mut incoming = vec![Vec::new(); n];
        let mut indegree = vec![0usize; n];
        let mut outgoing = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            incoming[e.dst].push(i);
            outgoing[e.src].push(i);
            indegree[e.dst] += 1;
        }
        // Kahn's algorithm with a min-id queue keeps the order canonical.
        let mut ready: alloc::collections::BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = ready.pop_first() {
            topo.push(v);
            for &ei in &outgoing[v] {
                let d = edges[ei].dst;
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.insert(d);
                }
            }
        }
        if topo.len() != n {
            return Err(CompGraphError::Cyclic);
        }
        let mut nodes = nodes;
        for &v in &topo {
            let ln = incoming[v].iter().map(|&ei| nodes[edges[ei].src].layer_number + 1).max().unwrap_or(0);
            nodes[v].layer_number = ln;
        }
        let mut inputs: Vec<(usize, usize)> = Vec::new();
        let mut outputs: Vec<(usize, usize)> = Vec::new();
        for node in &nodes {
            match node.kind {
                NodeKind::Input(i) => inputs.push((i, node.id)),
                NodeKind::Output(j) => outputs.push((j, node.id)),
                _ => {}
            }
        }
        inputs.sort_unstable();
        outputs.sort_unstable();
        Ok(Self {
            d_in: inputs.len(),
            d_out: outputs.len(),
            nodes,
            edges,
            output_shape,
            layer_nodes,
            topo,
            incoming,
            inputs: inputs.into_iter().map(|(_, id)| id).collect(),
            outputs: outputs.into_iter().map(|(_, id)| id).collect(),
        })
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Edge indices entering `node`, in edge-list order.
    pub fn incoming(&self, node: usize) -> &[usize] {
        &self.incoming[node]
    }

    pub fn input_nodes(&self) -> &[usize] {
        &self.inputs
    }

    pub fn output_nodes(&self) -> &[usize] {
        &self.outputs
    }

    pub fn max_layer_number(&self) -> usize {
        self.nodes.iter().map(|n| n.layer_number).max().unwrap_or(0)
    }

    pub fn num_share_classes(&self) -> usize {
        let mut classes: Vec<usize> = self.edges.iter().map(|e| e.share_class).collect();
        classes.sort_unstable();
        classes.dedup();
        classes.len()
    }

    /// Activation of every node for input `x`.
    pub fn activations(&self, x: &[f64]) -> Result<Vec<f64>, CompGraphError> {
        if x.len() != self.d_in {
            return Err(CompGraphError::InputLength {
                expected: self.d_in,
                got: x.len(),
            });
        }
        let mut h = vec![0.0; self.nodes.len()];
        for &v in &self.topo {
            let node = &self.nodes[v];
            h[v] = match node.kind {
                NodeKind::Input(i) => x[i],
                NodeKind::Bias(_) => 1.0,
                NodeKind::Hidden | NodeKind::Output(_) => {
                    let mut a = 0.0;
                    for &ei in &self.incoming[v] {
                        let e = &self.edges[ei];
                        a += e.weight * h[e.src];
                    }
                    node.activation.apply(a)
                }
            };
        }
        Ok(h)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, CompGraphError> {
        let h = self.activations(x)?;
        Ok(self.outputs.iter().map(|&o| h[o]).collect())
    }

    /// Graphviz rendering: nodes labelled `kind:layer`, edges by weight,
    /// fixed weight-1 edges dashed.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph computation {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let kind = match n.kind {
                NodeKind::Input(i) => format!("in{i}"),
                NodeKind::Output(j) => format!("out{j}"),
                NodeKind::Bias(l) => format!("bias{l}"),
                NodeKind::Hidden => String::from("hidden"),
            };
            let _ = writeln!(s, "  n{} [label=\"{}:{}\"];", n.id, kind, n.layer_number);
        }
        for e in &self.edges {
            let style = if e.param.is_none() { ", style=dashed" } else { "" };
            let _ = writeln!(s, "  n{} -> n{} [label=\"{:.4}\"{}];", e.src, e.dst, e.weight, style);
        }
        s.push_str("}\n");
        s
    }
}

/// Evaluates the graph on a tensor input, returning the network output shape.
pub fn eval_computation_graph(g: &CompGraph, x: &Tensor) -> Result<Tensor, CompGraphError> {
    let y = g.eval(x.data())?;
    Ok(Tensor::new(g.output_shape.clone(), y).map_err(ArchError::from)?)
}

/// Rebuilds a parameter store from the graph's edge weights.
pub fn params_from_graph(g: &CompGraph, spec: &ArchSpec) -> ParamStore {
    let mut store = ParamStore::zeros(spec);
    for e in &g.edges {
        if let Some(id) = e.param {
            store.set_value(&id, e.weight);
        }
    }
    store
}
