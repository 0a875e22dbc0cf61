use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::embed::{GraphInput, EDGE_FEATURES, NODE_FEATURES};
use super::mat::{hcat, BlockRef, Mat};
use super::mlp::{Act, Dense, Mlp, MlpCache};
use super::GnnError;
use crate::automorphism::NeuralAutomorphism;
use crate::rng::{stream, Rng};

/// Order of the three updates inside a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GnnForm {
    /// Node update (message MLP, then update MLP), edge update, then
    /// global update from sums of the new node and edge features.
    #[default]
    Standard,
    /// Global update first, summing an MLP over edges; nodes take the plain
    /// sum of messages; edges last. Used by the NP-NFN construction.
    GlobalFirst,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GnnLayer {
    /// Message from `(v_dst, v_src, e, u)`.
    pub node_msg: Mlp,
    /// `(v, sum of messages, u)`; when absent the summed message is the new
    /// node feature.
    pub node_upd: Option<Mlp>,
    /// `(v_dst, v_src, e, u)` with the updated node features.
    pub edge_upd: Mlp,
    /// `(sum v, sum e, u)`, or `(e, u)` summed over edges in the
    /// global-first form. When absent `u` is carried unchanged.
    pub global_upd: Option<Mlp>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Readout {
    /// Head applied to the mean of the final edge features.
    EdgeMeanPool(Mlp),
    /// Head applied to every parameter-bound edge.
    PerEdge(Mlp),
    /// Head applied to the final global feature.
    Global(Mlp),
}

impl Readout {
    pub fn head(&self) -> &Mlp {
        match self {
            Readout::EdgeMeanPool(h) | Readout::PerEdge(h) | Readout::Global(h) => h,
        }
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        match self {
            Readout::EdgeMeanPool(h) | Readout::PerEdge(h) | Readout::Global(h) => h,
        }
    }

    pub fn kind(&self) -> ReadoutKind {
        match self {
            Readout::EdgeMeanPool(_) => ReadoutKind::EdgeMeanPool,
            Readout::PerEdge(_) => ReadoutKind::PerEdge,
            Readout::Global(_) => ReadoutKind::Global,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ReadoutKind {
    EdgeMeanPool,
    PerEdge,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GnnModel {
    pub node_embed: Mlp,
    pub edge_embed: Mlp,
    /// Width of the initial (all-zero) global feature.
    pub global_dim: usize,
    pub layers: Vec<GnnLayer>,
    pub readout: Readout,
    pub form: GnnForm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphState {
    pub v: Mat,
    pub e: Mat,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MetanetOutput {
    Pooled(Vec<f64>),
    /// One row per parameter-bound edge, in [`GraphInput::param_edges`] order.
    PerEdge(Mat),
    Global(Vec<f64>),
}

impl MetanetOutput {
    /// All output values in row-major order.
    pub fn values(&self) -> &[f64] {
        match self {
            MetanetOutput::Pooled(v) | MetanetOutput::Global(v) => v,
            MetanetOutput::PerEdge(m) => m.data(),
        }
    }
}

/// Role of an MLP inside a [`GnnModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WeightClass {
    NodeEmbed,
    EdgeEmbed,
    NodeMsg,
    NodeUpd,
    EdgeUpd,
    GlobalUpd,
    Head,
}

impl WeightClass {
    pub const ALL: [WeightClass; 7] = [
        WeightClass::NodeEmbed,
        WeightClass::EdgeEmbed,
        WeightClass::NodeMsg,
        WeightClass::NodeUpd,
        WeightClass::EdgeUpd,
        WeightClass::GlobalUpd,
        WeightClass::Head,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightClass::NodeEmbed => "node_embed",
            WeightClass::EdgeEmbed => "edge_embed",
            WeightClass::NodeMsg => "node_msg",
            WeightClass::NodeUpd => "node_upd",
            WeightClass::EdgeUpd => "edge_upd",
            WeightClass::GlobalUpd => "global_upd",
            WeightClass::Head => "head",
        }
    }
}

/// Feature widths `(d_x, d_e, d_u)` at some point of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub node: usize,
    pub edge: usize,
    pub global: usize,
}

fn expect_input(m: &Mlp, context: &'static str, expected: usize) -> Result<usize, GnnError> {
    if !m.is_well_formed() {
        return Err(GnnError::InvalidModel(context));
    }
    if m.input_dim() != expected {
        return Err(GnnError::DimMismatch {
            context,
            expected,
            got: m.input_dim(),
        });
    }
    Ok(m.output_dim())
}

/// Per-layer caches for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub msg: MlpCache,
    pub upd: Option<MlpCache>,
    pub edge: MlpCache,
    pub glob: Option<MlpCache>,
}

#[derive(Debug, Clone)]
pub(crate) struct ModelCache {
    pub node_embed: MlpCache,
    pub edge_embed: MlpCache,
    /// State entering each layer, plus the final state.
    pub states: Vec<GraphState>,
    pub layers: Vec<LayerCache>,
    pub head: MlpCache,
    pub param_edges: Vec<usize>,
}

/// Adds row `e` of `msg` into row `dst[e]`, in edge order.
pub(crate) fn scatter_sum(msg: &Mat, dst: &[usize], n: usize) -> Mat {
    let mut agg = Mat::zeros(n, msg.cols());
    for (e, &d) in dst.iter().enumerate() {
        for (a, x) in agg.row_mut(d).iter_mut().zip(msg.row(e)) {
            *a += x;
        }
    }
    agg
}

impl GnnModel {
    /// Validates every width and returns the dims entering each layer plus
    /// the final dims.
    pub fn dims(&self) -> Result<Vec<Dims>, GnnError> {
        let node = expect_input(&self.node_embed, "node embedder", NODE_FEATURES)?;
        let edge = expect_input(&self.edge_embed, "edge embedder", EDGE_FEATURES)?;
        let mut d = Dims {
            node,
            edge,
            global: self.global_dim,
        };
        let mut out = vec![d];
        for layer in &self.layers {
            d = match self.form {
                GnnForm::Standard => {
                    let msg = expect_input(&layer.node_msg, "node message", 2 * d.node + d.edge + d.global)?;
                    let node = match &layer.node_upd {
                        Some(m) => expect_input(m, "node update", d.node + msg + d.global)?,
                        None => msg,
                    };
                    let edge = expect_input(&layer.edge_upd, "edge update", 2 * node + d.edge + d.global)?;
                    let global = match &layer.global_upd {
                        Some(m) => expect_input(m, "global update", node + edge + d.global)?,
                        None => d.global,
                    };
                    Dims { node, edge, global }
                }
                GnnForm::GlobalFirst => {
                    if layer.node_upd.is_some() {
                        return Err(GnnError::InvalidModel("global-first layers have no node update MLP"));
                    }
                    let global = match &layer.global_upd {
                        Some(m) => expect_input(m, "global update", d.edge + d.global)?,
                        None => d.global,
                    };
                    let node = expect_input(&layer.node_msg, "node message", 2 * d.node + d.edge + global)?;
                    let edge = expect_input(&layer.edge_upd, "edge update", 2 * node + d.edge + global)?;
                    Dims { node, edge, global }
                }
            };
            out.push(d);
        }
        let head_in = match self.readout {
            Readout::EdgeMeanPool(_) | Readout::PerEdge(_) => d.edge,
            Readout::Global(_) => d.global,
        };
        expect_input(self.readout.head(), "readout head", head_in)?;
        Ok(out)
    }

    pub fn output_dim(&self) -> usize {
        self.readout.head().output_dim()
    }

    /// Every MLP in declaration order: embedders, then per layer message,
    /// node update, edge update, global update, then the readout head.
    pub fn mlps(&self) -> Vec<&Mlp> {
        let mut out = vec![&self.node_embed, &self.edge_embed];
        for l in &self.layers {
            out.push(&l.node_msg);
            if let Some(m) = &l.node_upd {
                out.push(m);
            }
            out.push(&l.edge_upd);
            if let Some(m) = &l.global_upd {
                out.push(m);
            }
        }
        out.push(self.readout.head());
        out
    }

    pub fn mlps_mut(&mut self) -> Vec<&mut Mlp> {
        let mut out: Vec<&mut Mlp> = vec![&mut self.node_embed, &mut self.edge_embed];
        for l in &mut self.layers {
            out.push(&mut l.node_msg);
            if let Some(m) = &mut l.node_upd {
                out.push(m);
            }
            out.push(&mut l.edge_upd);
            if let Some(m) = &mut l.global_upd {
                out.push(m);
            }
        }
        out.push(self.readout.head_mut());
        out
    }

    /// Role and flat weight range of every MLP, in [`mlps`](Self::mlps)
    /// order.
    pub fn weight_classes(&self) -> Vec<(WeightClass, Range<usize>)> {
        let mut roles = vec![WeightClass::NodeEmbed, WeightClass::EdgeEmbed];
        for l in &self.layers {
            roles.push(WeightClass::NodeMsg);
            if l.node_upd.is_some() {
                roles.push(WeightClass::NodeUpd);
            }
            roles.push(WeightClass::EdgeUpd);
            if l.global_upd.is_some() {
                roles.push(WeightClass::GlobalUpd);
            }
        }
        roles.push(WeightClass::Head);
        let mut at = 0;
        roles
            .into_iter()
            .zip(self.mlps())
            .map(|(r, m)| {
                let range = at..at + m.num_params();
                at = range.end;
                (r, range)
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.mlps().iter().map(|m| m.num_params()).sum()
    }

    /// All weights flattened: per MLP, per layer, `w` row-major then `b`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for m in self.mlps() {
            for d in &m.layers {
                out.extend_from_slice(d.w.data());
                out.extend_from_slice(&d.b);
            }
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat). Panics on a length mismatch.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat weight length");
        let mut at = 0;
        for m in self.mlps_mut() {
            for d in &mut m.layers {
                let n = d.w.data().len();
                d.w.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
                let k = d.b.len();
                d.b.copy_from_slice(&flat[at..at + k]);
                at += k;
            }
        }
    }

    /// Same architecture with every weight zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.set_flat(&vec![0.0; self.num_params()]);
        z
    }

    pub(crate) fn forward_cached(&self, g: &GraphInput) -> Result<(MetanetOutput, ModelCache), GnnError> {
        self.dims()?;
        let (v, node_embed) = self.node_embed.forward_cached(&g.nodes);
        let (e, edge_embed) = self.edge_embed.forward_cached(&g.edges);
        let mut state = GraphState {
            v,
            e,
            u: vec![0.0; self.global_dim],
        };
        let mut states = Vec::with_capacity(self.layers.len() + 1);
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = match self.form {
                GnnForm::Standard => standard_layer(layer, &state, g),
                GnnForm::GlobalFirst => global_first_layer(layer, &state, g),
            };
            states.push(state);
            layers.push(cache);
            state = next;
        }
        let param_edges = g.param_edges();
        let (head_in, kind) = match &self.readout {
            Readout::EdgeMeanPool(_) => {
                let mut pooled = state.e.column_sums();
                let m = state.e.rows().max(1) as f64;
                for p in &mut pooled {
                    *p /= m;
                }
                (Mat::from_vec(1, pooled.len(), pooled), ReadoutKind::EdgeMeanPool)
            }
            Readout::PerEdge(_) => (hcat(param_edges.len(), &[BlockRef::Gather(&state.e, &param_edges)]), ReadoutKind::PerEdge),
            Readout::Global(_) => (Mat::from_vec(1, state.u.len(), state.u.clone()), ReadoutKind::Global),
        };
        let (out, head) = self.readout.head().forward_cached(&head_in);
        states.push(state);
        let output = match kind {
            ReadoutKind::EdgeMeanPool => MetanetOutput::Pooled(out.data().to_vec()),
            ReadoutKind::PerEdge => MetanetOutput::PerEdge(out),
            ReadoutKind::Global => MetanetOutput::Global(out.data().to_vec()),
        };
        Ok((
            output,
            ModelCache {
                node_embed,
                edge_embed,
                states,
                layers,
                head,
                param_edges,
            },
        ))
    }
}

fn standard_layer(layer: &GnnLayer, s: &GraphState, g: &GraphInput) -> (GraphState, LayerCache) {
    let (n, m) = (s.v.rows(), s.e.rows());
    let msg_in = hcat(
        m,
        &[BlockRef::Gather(&s.v, &g.dst), BlockRef::Gather(&s.v, &g.src), BlockRef::Rows(&s.e), BlockRef::Broadcast(&s.u)],
    );
    let (msg, msg_cache) = layer.node_msg.forward_cached(&msg_in);
    let agg = scatter_sum(&msg, &g.dst, n);
    let (v, upd) = match &layer.node_upd {
        Some(mlp) => {
            let upd_in = hcat(n, &[BlockRef::Rows(&s.v), BlockRef::Rows(&agg), BlockRef::Broadcast(&s.u)]);
            let (v, c) = mlp.forward_cached(&upd_in);
            (v, Some(c))
        }
        None => (agg, None),
    };
    let edge_in = hcat(
        m,
        &[BlockRef::Gather(&v, &g.dst), BlockRef::Gather(&v, &g.src), BlockRef::Rows(&s.e), BlockRef::Broadcast(&s.u)],
    );
    let (e, edge_cache) = layer.edge_upd.forward_cached(&edge_in);
    let (u, glob) = match &layer.global_upd {
        Some(mlp) => {
            let (sv, se) = (v.column_sums(), e.column_sums());
            let glob_in = hcat(1, &[BlockRef::Broadcast(&sv), BlockRef::Broadcast(&se), BlockRef::Broadcast(&s.u)]);
            let (u, c) = mlp.forward_cached(&glob_in);
            (u.data().to_vec(), Some(c))
        }
        None => (s.u.clone(), None),
    };
    (
        GraphState { v, e, u },
        LayerCache {
            msg: msg_cache,
            upd,
            edge: edge_cache,
            glob,
        },
    )
}

fn global_first_layer(layer: &GnnLayer, s: &GraphState, g: &GraphInput) -> (GraphState, LayerCache) {
    let (n, m) = (s.v.rows(), s.e.rows());
    let (u, glob) = match &layer.global_upd {
        Some(mlp) => {
            let glob_in = hcat(m, &[BlockRef::Rows(&s.e), BlockRef::Broadcast(&s.u)]);
            let (per_edge, c) = mlp.forward_cached(&glob_in);
            (per_edge.column_sums(), Some(c))
        }
        None => (s.u.clone(), None),
    };
    let msg_in = hcat(
        m,
        &[BlockRef::Gather(&s.v, &g.dst), BlockRef::Gather(&s.v, &g.src), BlockRef::Rows(&s.e), BlockRef::Broadcast(&u)],
    );
    let (msg, msg_cache) = layer.node_msg.forward_cached(&msg_in);
    let v = scatter_sum(&msg, &g.dst, n);
    let edge_in = hcat(
        m,
        &[BlockRef::Gather(&v, &g.dst), BlockRef::Gather(&v, &g.src), BlockRef::Rows(&s.e), BlockRef::Broadcast(&u)],
    );
    let (e, edge_cache) = layer.edge_upd.forward_cached(&edge_in);
    (
        GraphState { v, e, u },
        LayerCache {
            msg: msg_cache,
            upd: None,
            edge: edge_cache,
            glob,
        },
    )
}

/// Runs the embedders and all layers; returns the final state.
pub fn run_layers(model: &GnnModel, g: &GraphInput) -> Result<GraphState, GnnError> {
    let (_, mut cache) = model.forward_cached(g)?;
    Ok(cache.states.pop().expect("final state is always recorded"))
}

/// Graph-level vector, per-edge rows or global readout depending on the
/// model's readout.
pub fn forward_metanet(model: &GnnModel, g: &GraphInput) -> Result<MetanetOutput, GnnError> {
    model.forward_cached(g).map(|(out, _)| out)
}

/// Readout head applied to every edge of the final state. Fails for the
/// global readout, whose head reads the global feature instead.
pub fn all_edge_outputs(model: &GnnModel, g: &GraphInput) -> Result<Mat, GnnError> {
    if model.readout.kind() == ReadoutKind::Global {
        return Err(GnnError::InvalidModel("the global readout has no per-edge outputs"));
    }
    let state = run_layers(model, g)?;
    Ok(model.readout.head().forward(&state.e))
}

/// Largest deviation between the model on `g` and on `phi . g`, pulled back
/// through each automorphism. Per-edge and per-node quantities are compared
/// after permuting; pooled and global quantities directly.
pub fn check_equivariance(model: &GnnModel, g: &GraphInput, autos: &[NeuralAutomorphism]) -> Result<f64, GnnError> {
    let base = run_layers(model, g)?;
    let base_out = forward_metanet(model, g)?;
    let mut worst: f64 = 0.0;
    for a in autos {
        let moved_input = g.permuted(a);
        let moved = run_layers(model, &moved_input)?;
        worst = worst.max(base.v.scatter_rows(&a.node_perm).max_abs_diff(&moved.v));
        worst = worst.max(base.e.scatter_rows(&a.edge_perm).max_abs_diff(&moved.e));
        worst = worst.max(max_diff(&base.u, &moved.u));
        match &model.readout {
            Readout::PerEdge(head) => {
                let base_edges = head.forward(&base.e);
                let moved_edges = head.forward(&moved.e);
                worst = worst.max(base_edges.scatter_rows(&a.edge_perm).max_abs_diff(&moved_edges));
            }
            Readout::EdgeMeanPool(_) | Readout::Global(_) => {
                let out = forward_metanet(model, &moved_input)?;
                worst = worst.max(max_diff(base_out.values(), out.values()));
            }
        }
    }
    Ok(worst)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

/// Hyperparameters for a randomly initialized model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GnnConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Width of the global feature; 0 disables global updates.
    pub global_dim: usize,
    pub readout: ReadoutKind,
    pub out_dim: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            layers: 3,
            global_dim: 0,
            readout: ReadoutKind::EdgeMeanPool,
            out_dim: 1,
        }
    }
}

fn two_layer(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Mlp {
    Mlp::relu(&[input, hidden, output], rng)
}

impl GnnModel {
    /// Standard-form model with two-layer ReLU MLPs everywhere and linear
    /// embedders.
    pub fn random(cfg: &GnnConfig, seed: u64) -> Self {
        let mut rng = stream(seed);
        let h = cfg.hidden;
        let du = cfg.global_dim;
        let node_embed = Mlp::new(vec![Dense::random(NODE_FEATURES, h, Act::Identity, &mut rng)]);
        let edge_embed = Mlp::new(vec![Dense::random(EDGE_FEATURES, h, Act::Identity, &mut rng)]);
        let layers = (0..cfg.layers)
            .map(|_| GnnLayer {
                node_msg: two_layer(3 * h + du, h, h, &mut rng),
                node_upd: Some(two_layer(2 * h + du, h, h, &mut rng)),
                edge_upd: two_layer(3 * h + du, h, h, &mut rng),
                global_upd: (du > 0).then(|| two_layer(2 * h + du, h, du, &mut rng)),
            })
            .collect();
        let head_in = if cfg.readout == ReadoutKind::Global { du } else { h };
        let head = two_layer(head_in, h, cfg.out_dim, &mut rng);
        let readout = match cfg.readout {
            ReadoutKind::EdgeMeanPool => Readout::EdgeMeanPool(head),
            ReadoutKind::PerEdge => Readout::PerEdge(head),
            ReadoutKind::Global => Readout::Global(head),
        };
        Self {
            node_embed,
            edge_embed,
            global_dim: du,
            layers,
            readout,
            form: GnnForm::Standard,
        }
    }
}
