//! JSON exports of parameter and computation graphs.

use neurograph_core::arch::{ParamId, ParamName};
use neurograph_core::compute_graph::{CompEdge, CompGraph, CompNode, LayerNodes};
use neurograph_core::param_graph::{Direction, EdgeFeature, EdgeType, NodeFeature, NodeType, ParamEdge, ParamGraph};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGraphDoc {
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<EdgeDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: usize,
    pub layer: usize,
    /// Node-type code, see [`NodeType::code`].
    #[serde(rename = "type")]
    pub node_type: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeDoc {
    pub src: usize,
    pub dst: usize,
    pub value: f64,
    pub layer: usize,
    pub etype: usize,
    /// 0 forward, 1 backward.
    pub dir: u8,
    pub pos: Option<Vec<i64>>,
    pub param: Option<ParamRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamRef {
    pub layer: usize,
    pub name: ParamName,
    pub idx: usize,
}

impl ParamGraphDoc {
    pub fn from_graph(g: &ParamGraph) -> Self {
        let nodes = g
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| NodeDoc {
                id,
                layer: n.layer,
                node_type: n.node_type.code(),
            })
            .collect();
        let edges = g
            .edges
            .iter()
            .map(|e| EdgeDoc {
                src: e.src,
                dst: e.dst,
                value: e.feature.value,
                layer: e.feature.layer,
                etype: e.feature.edge_type.code(),
                dir: match e.feature.direction {
                    Direction::Forward => 0,
                    Direction::Backward => 1,
                },
                pos: e.feature.position.clone(),
                param: e.param.map(|p| ParamRef {
                    layer: p.layer_index,
                    name: p.name,
                    idx: p.flat_index,
                }),
            })
            .collect();
        Self { nodes, edges }
    }

    pub fn to_graph(&self) -> Result<ParamGraph> {
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for (i, n) in self.nodes.iter().enumerate() {
            if n.id != i {
                return Err(Error::Input(format!("node ids must be 0..n in order, found {} at {i}", n.id)));
            }
            let node_type = NodeType::from_code(n.node_type).ok_or_else(|| Error::Input(format!("unknown node type {}", n.node_type)))?;
            nodes.push(NodeFeature { layer: n.layer, node_type });
        }
        let mut edges = Vec::with_capacity(self.edges.len());
        for e in &self.edges {
            let edge_type = EdgeType::from_code(e.etype).ok_or_else(|| Error::Input(format!("unknown edge type {}", e.etype)))?;
            let direction = match e.dir {
                0 => Direction::Forward,
                1 => Direction::Backward,
                d => return Err(Error::Input(format!("edge direction must be 0 or 1, got {d}"))),
            };
            edges.push(ParamEdge {
                src: e.src,
                dst: e.dst,
                feature: EdgeFeature {
                    value: e.value,
                    layer: e.layer,
                    edge_type,
                    direction,
                    position: e.pos.clone(),
                },
                param: e.param.map(|p| ParamId::new(p.layer, p.name, p.idx)),
            });
        }
        let g = ParamGraph { nodes, edges, global_dim: 0 };
        g.check().map_err(|e| Error::Input(e.to_string()))?;
        Ok(g)
    }
}

/// Computation graph fields as stored on disk. Topological order and
/// adjacency are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompGraphDoc {
    pub nodes: Vec<CompNode>,
    pub edges: Vec<CompEdge>,
    pub d_in: usize,
    pub d_out: usize,
    pub output_shape: Vec<usize>,
    pub layer_nodes: Vec<LayerNodes>,
}

impl CompGraphDoc {
    pub fn from_graph(g: &CompGraph) -> Self {
        Self {
            nodes: g.nodes.clone(),
            edges: g.edges.clone(),
            d_in: g.d_in,
            d_out: g.d_out,
            output_shape: g.output_shape.clone(),
            layer_nodes: g.layer_nodes.clone(),
        }
    }

    pub fn to_graph(&self) -> Result<CompGraph> {
        if self.nodes.iter().enumerate().any(|(i, n)| n.id != i) {
            return Err(Error::Input("node ids must be 0..n in order".into()));
        }
        let g = CompGraph::from_parts(self.nodes.clone(), self.edges.clone(), self.output_shape.clone(), self.layer_nodes.clone())?;
        if (g.d_in, g.d_out) != (self.d_in, self.d_out) {
            return Err(Error::Input(format!(
                "declared {}->{} inputs/outputs but graph has {}->{}",
                self.d_in, self.d_out, g.d_in, g.d_out
            )));
        }
        if g.output_shape.iter().product::<usize>() != g.d_out {
            return Err(Error::Input("output_shape does not match the output nodes".into()));
        }
        Ok(g)
    }
}
