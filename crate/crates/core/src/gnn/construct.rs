//! Hand-built models realizing the constructive expressivity results:
//! forward-pass simulation on computation graphs, StatNN and NP-NFN on MLP
//! parameter graphs, together with direct oracles for the latter two.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::embed::{
    embed_comp_graph, GraphInput, EDGE_DIR, EDGE_FEATURES, EDGE_LAYER, EDGE_TYPE, EDGE_VALUE, LAYER_SLOTS, NODE_ACT, NODE_FEATURES, NODE_TAG, NODE_VALUE,
};
use super::mat::Mat;
use super::mlp::{Act, Dense, Mlp};
use super::model::{run_layers, GnnForm, GnnLayer, GnnModel, Readout};
use super::GnnError;
use crate::arch::{Activation, ArchSpec, LayerSpec, ParamKey, ParamName, ParamStore};
use crate::compute_graph::CompGraph;
use crate::rng::{uniform, Rng};

/// One side of a product, expressed over the network input.
#[derive(Debug, Clone)]
enum Factor {
    One,
    /// Signed linear combination of input channels.
    Lin(Vec<(usize, f64)>),
    /// Conjunction of 0/1 channels.
    And(Vec<usize>),
    /// `relu` of a linear combination.
    Relu(Vec<(usize, f64)>),
    /// `1 / x` of a linear combination.
    Recip(Vec<(usize, f64)>),
}

#[derive(Debug, Clone)]
struct Term {
    scale: f64,
    left: Factor,
    right: Factor,
}

fn term(left: Factor, right: Factor) -> Term {
    Term { scale: 1.0, left, right }
}

fn lin(c: usize) -> Factor {
    Factor::Lin(vec![(c, 1.0)])
}

/// Output unit: `act(sum of scale * left * right)`.
struct Out {
    terms: Vec<Term>,
    act: Act,
}

fn out(terms: Vec<Term>) -> Out {
    Out { terms, act: Act::Identity }
}

/// Three-layer MLP computing sums of products exactly (up to rounding):
/// ReLU units expose factors, squares of `left +- right` follow, and
/// `((l + r)^2 - (l - r)^2) / 4 = l * r` recombines them.
fn product_net(input_dim: usize, outs: &[Out]) -> Mlp {
    struct Unit {
        w: Vec<f64>,
        b: f64,
        act: Act,
    }
    let mut units: Vec<Unit> = Vec::new();
    let mut signed: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let push = |w: Vec<f64>, b: f64, act: Act, units: &mut Vec<Unit>| {
        units.push(Unit { w, b, act });
        units.len() - 1
    };
    let dense_row = |terms: &[(usize, f64)]| {
        let mut w = vec![0.0; input_dim];
        for &(c, k) in terms {
            w[c] += k;
        }
        w
    };
    // Each factor becomes a linear combination of first-layer units.
    let mut lower = |f: &Factor, units: &mut Vec<Unit>| -> Vec<(usize, f64)> {
        match f {
            Factor::One => vec![(push(vec![0.0; input_dim], 1.0, Act::Relu, units), 1.0)],
            Factor::Lin(terms) => {
                let mut combo = Vec::new();
                for &(c, k) in terms {
                    let (p, n) = *signed.entry(c).or_insert_with(|| {
                        let p = push(dense_row(&[(c, 1.0)]), 0.0, Act::Relu, units);
                        let n = push(dense_row(&[(c, -1.0)]), 0.0, Act::Relu, units);
                        (p, n)
                    });
                    combo.push((p, k));
                    combo.push((n, -k));
                }
                combo
            }
            Factor::And(channels) => {
                let terms: Vec<(usize, f64)> = channels.iter().map(|&c| (c, 1.0)).collect();
                let b = 1.0 - channels.len() as f64;
                vec![(push(dense_row(&terms), b, Act::Relu, units), 1.0)]
            }
            Factor::Relu(terms) => vec![(push(dense_row(terms), 0.0, Act::Relu, units), 1.0)],
            Factor::Recip(terms) => vec![(push(dense_row(terms), 0.0, Act::Reciprocal, units), 1.0)],
        }
    };
    // (plus, minus) second-layer rows per term, over first-layer units.
    let mut squares: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut out_rows: Vec<(Vec<(usize, f64)>, Act)> = Vec::new();
    for o in outs {
        let mut row = Vec::new();
        for t in &o.terms {
            let l = lower(&t.left, &mut units);
            let r = lower(&t.right, &mut units);
            let plus: Vec<(usize, f64)> = l.iter().copied().chain(r.iter().copied()).collect();
            let minus: Vec<(usize, f64)> = l.iter().copied().chain(r.iter().map(|&(u, k)| (u, -k))).collect();
            squares.push((plus, 1.0));
            row.push((squares.len() - 1, t.scale / 4.0));
            squares.push((minus, 1.0));
            row.push((squares.len() - 1, -t.scale / 4.0));
        }
        out_rows.push((row, o.act));
    }
    let n1 = units.len();
    let mut l1 = Dense::zeros(input_dim, n1, Act::Relu);
    for (i, u) in units.iter().enumerate() {
        l1.w.row_mut(i).copy_from_slice(&u.w);
        l1.b[i] = u.b;
        l1.acts[i] = u.act;
    }
    let mut l2 = Dense::zeros(n1, squares.len(), Act::Square);
    for (i, (combo, _)) in squares.iter().enumerate() {
        for &(u, k) in combo {
            let cur = l2.w.get(i, u);
            l2.w.set(i, u, cur + k);
        }
    }
    let mut l3 = Dense::zeros(squares.len(), out_rows.len(), Act::Identity);
    for (i, (row, act)) in out_rows.iter().enumerate() {
        for &(s, k) in row {
            let cur = l3.w.get(i, s);
            l3.w.set(i, s, cur + k);
        }
        l3.acts[i] = *act;
    }
    Mlp::new(vec![l1, l2, l3])
}

/// Single linear layer copying `sources[k]` into output `k`.
fn select(input_dim: usize, sources: &[usize]) -> Mlp {
    let mut d = Dense::zeros(input_dim, sources.len(), Act::Identity);
    for (k, &s) in sources.iter().enumerate() {
        d.w.set(k, s, 1.0);
    }
    Mlp::new(vec![d])
}

fn identity_mlp(dim: usize) -> Mlp {
    select(dim, &(0..dim).collect::<Vec<_>>())
}

// Forward-pass simulation node layout.
const SIM_H: usize = 0;
const SIM_INPUT: usize = 1;
const SIM_BIAS: usize = 2;
const SIM_RELU: usize = 3;
const SIM_LINEAR: usize = 4;
const SIM_DIM: usize = 5;

/// Metanet whose node features after `max_layer_number` layers equal the
/// activations of `g` on the input seeded into the input nodes.
pub fn build_forward_sim_gnn(g: &CompGraph) -> Result<GnnModel, GnnError> {
    if let Some(n) = g.nodes.iter().find(|n| !matches!(n.activation, Activation::Relu | Activation::Identity)) {
        return Err(GnnError::UnsupportedNonlinearity(n.activation));
    }
    // Raw channels: input tag 6, bias tag 1, activation one-hot (relu, sine, identity).
    let mut embed = Dense::zeros(NODE_FEATURES, SIM_DIM, Act::Identity);
    embed.w.set(SIM_H, NODE_VALUE, 1.0);
    // Bias nodes emit 1 from the start.
    embed.w.set(SIM_H, NODE_TAG + 1, 1.0);
    embed.w.set(SIM_INPUT, NODE_TAG + 6, 1.0);
    embed.w.set(SIM_BIAS, NODE_TAG + 1, 1.0);
    embed.w.set(SIM_RELU, NODE_ACT, 1.0);
    embed.w.set(SIM_LINEAR, NODE_ACT + 2, 1.0);
    embed.w.set(SIM_LINEAR, NODE_TAG + 6, -1.0);
    embed.w.set(SIM_LINEAR, NODE_TAG + 1, -1.0);

    // Message: edge weight times source activation.
    let (vi, vj, e) = (0, SIM_DIM, 2 * SIM_DIM);
    let node_msg = product_net(2 * SIM_DIM + 1, &[out(vec![term(lin(e), lin(vj + SIM_H))])]);
    // Update: relu units apply relu, linear units pass the sum, inputs keep
    // their value, bias nodes emit 1.
    let agg = SIM_DIM;
    let h_next = out(vec![
        term(lin(SIM_RELU), Factor::Relu(vec![(agg, 1.0)])),
        term(lin(SIM_LINEAR), lin(agg)),
        term(lin(SIM_INPUT), lin(SIM_H)),
        term(Factor::One, lin(SIM_BIAS)),
    ]);
    let mut upd_outs = vec![h_next];
    for k in [SIM_INPUT, SIM_BIAS, SIM_RELU, SIM_LINEAR] {
        upd_outs.push(out(vec![term(Factor::One, lin(vi + k))]));
    }
    let node_upd = product_net(SIM_DIM + 1, &upd_outs);
    let edge_upd = select(2 * SIM_DIM + 1, &[e]);
    let layer = GnnLayer {
        node_msg,
        node_upd: Some(node_upd),
        edge_upd,
        global_upd: None,
    };
    Ok(GnnModel {
        node_embed: Mlp::new(vec![embed]),
        edge_embed: select(EDGE_FEATURES, &[EDGE_VALUE]),
        global_dim: 0,
        layers: vec![layer; g.max_layer_number()],
        readout: Readout::PerEdge(identity_mlp(1)),
        form: GnnForm::Standard,
    })
}

/// Output-node features of `model` on `g` with `x` seeded into the inputs.
pub fn simulate_forward(model: &GnnModel, g: &CompGraph, x: &[f64]) -> Result<Vec<f64>, GnnError> {
    if x.len() != g.d_in {
        return Err(GnnError::DimMismatch {
            context: "simulation input",
            expected: g.d_in,
            got: x.len(),
        });
    }
    let input = embed_comp_graph(g).with_input_values(x);
    let state = run_layers(model, &input)?;
    Ok(input.output_nodes.iter().map(|&n| state.v.get(n, SIM_H)).collect())
}

/// Per-tensor statistics used by StatNN.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Mean,
    /// Population variance.
    Variance,
    /// Percentile with linear interpolation between order statistics.
    Percentile(u8),
}

pub const STATNN_STATISTICS: [Statistic; 7] = [
    Statistic::Mean,
    Statistic::Variance,
    Statistic::Percentile(0),
    Statistic::Percentile(25),
    Statistic::Percentile(50),
    Statistic::Percentile(75),
    Statistic::Percentile(100),
];

/// Statistics that are ratios of edge sums and so reachable by message
/// passing.
pub const SUM_DECOMPOSABLE: [Statistic; 2] = [Statistic::Mean, Statistic::Variance];

pub fn statistic(values: &[f64], s: Statistic) -> f64 {
    let n = values.len() as f64;
    match s {
        Statistic::Mean => values.iter().sum::<f64>() / n,
        Statistic::Variance => {
            let m = values.iter().sum::<f64>() / n;
            values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
        }
        Statistic::Percentile(q) => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let pos = f64::from(q) / 100.0 * (sorted.len() - 1) as f64;
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            let frac = pos - lo as f64;
            sorted[lo] + frac * (sorted[hi] - sorted[lo])
        }
    }
}

/// `head(statistics of every parameter tensor)`, tensors in canonical
/// order, statistics in the order given.
pub fn statnn_oracle_with(params: &ParamStore, head: &Mlp, stats: &[Statistic]) -> Result<f64, GnnError> {
    let mut features = Vec::new();
    for (key, t) in params.iter() {
        if !matches!(key.name, ParamName::Weight | ParamName::Bias) || t.is_empty() {
            return Err(GnnError::NotAnMlp("StatNN expects weight and bias tensors only"));
        }
        features.extend(stats.iter().map(|&s| statistic(t.data(), s)));
    }
    if head.input_dim() != features.len() || head.output_dim() != 1 {
        return Err(GnnError::DimMismatch {
            context: "StatNN head",
            expected: features.len(),
            got: head.input_dim(),
        });
    }
    Ok(head.forward_vec(&features)[0])
}

/// StatNN with the full statistic set: mean, variance and the 0/25/50/75/100
/// percentiles of every tensor.
pub fn statnn_oracle(params: &ParamStore, head: &Mlp) -> Result<f64, GnnError> {
    statnn_oracle_with(params, head, &STATNN_STATISTICS)
}

fn check_plain_mlp(spec: &ArchSpec) -> Result<usize, GnnError> {
    if spec.input_shape.len() != 1 {
        return Err(GnnError::NotAnMlp("input must be a vector"));
    }
    let mut linears = 0;
    for l in &spec.layers {
        match l {
            LayerSpec::Linear { has_bias: true, .. } => linears += 1,
            LayerSpec::Activation { .. } => {}
            _ => return Err(GnnError::NotAnMlp("only biased linear and activation layers are allowed")),
        }
    }
    if linears == 0 || linears >= LAYER_SLOTS {
        return Err(GnnError::NotAnMlp("between 1 and 11 linear layers are supported"));
    }
    Ok(linears)
}

/// Metanet computing StatNN's head on per-tensor mean and variance, for an
/// MLP with `num_linear` biased linear layers. Runs on the directed or
/// undirected parameter graph (or computation graph) of that MLP.
pub fn build_statnn_gnn(head: &Mlp, num_linear: usize) -> Result<GnnModel, GnnError> {
    let tensors = 2 * num_linear;
    if head.input_dim() != 2 * tensors {
        return Err(GnnError::DimMismatch {
            context: "StatNN head",
            expected: 2 * tensors,
            got: head.input_dim(),
        });
    }
    // Edge update input: [v_i (1), v_j (1), raw edge features].
    let off = 2;
    let value = off + EDGE_VALUE;
    let gate = |t: usize| {
        let (l, kind) = (t / 2 + 1, t % 2);
        Factor::And(vec![off + EDGE_TYPE + kind, off + EDGE_DIR, off + EDGE_LAYER + l])
    };
    let mut edge_outs = Vec::new();
    for t in 0..tensors {
        edge_outs.push(out(vec![term(lin(value), gate(t))]));
        edge_outs.push(Out {
            terms: vec![term(lin(value), gate(t))],
            act: Act::Square,
        });
        edge_outs.push(out(vec![term(Factor::One, gate(t))]));
    }
    let edge_upd = product_net(off + EDGE_FEATURES, &edge_outs);

    // Global input: [sum v (1), sum e (3 per tensor)] = [S1, S2, N] blocks.
    let g_in = 1 + 3 * tensors;
    let (s1, s2, cnt) = (|t: usize| 1 + 3 * t, |t: usize| 2 + 3 * t, |t: usize| 3 + 3 * t);
    let mut stage = Vec::new();
    for t in 0..tensors {
        let recip = || Factor::Recip(vec![(cnt(t), 1.0)]);
        stage.push(out(vec![term(lin(s1(t)), recip())]));
        stage.push(Out {
            terms: vec![term(lin(s1(t)), recip())],
            act: Act::Square,
        });
        stage.push(out(vec![term(lin(s2(t)), recip())]));
    }
    let mut global = product_net(g_in, &stage);
    // [mean, mean^2, E x^2] -> [mean, variance].
    let mut finish = Dense::zeros(3 * tensors, 2 * tensors, Act::Identity);
    for t in 0..tensors {
        finish.w.set(2 * t, 3 * t, 1.0);
        finish.w.set(2 * t + 1, 3 * t + 2, 1.0);
        finish.w.set(2 * t + 1, 3 * t + 1, -1.0);
    }
    global.layers.push(finish);

    let layer = GnnLayer {
        node_msg: Mlp::zeros(2 + EDGE_FEATURES, 1),
        node_upd: None,
        edge_upd,
        global_upd: Some(global),
    };
    Ok(GnnModel {
        node_embed: Mlp::zeros(NODE_FEATURES, 1),
        edge_embed: identity_mlp(EDGE_FEATURES),
        global_dim: 0,
        layers: vec![layer],
        readout: Readout::Global(head.clone()),
        form: GnnForm::Standard,
    })
}

/// Scalar output of a global-readout model.
pub fn global_output(model: &GnnModel, g: &GraphInput) -> Result<f64, GnnError> {
    let out = super::model::forward_metanet(model, g)?;
    out.values().first().copied().ok_or(GnnError::InvalidModel("model has no outputs"))
}

/// Coefficients of the NP-NFN linear layer for an MLP with `L` layers.
/// Matrices are indexed `[l][s]`, vectors `[l]`, both 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct NpNfnCoeffs {
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    pub a4: Vec<f64>,
    pub a5: Vec<f64>,
    pub a6: Vec<f64>,
    pub a7: Vec<Vec<f64>>,
    pub a8: Vec<f64>,
    pub a9: Vec<f64>,
    pub c1: Vec<Vec<f64>>,
    pub c2: Vec<f64>,
    pub c3: Vec<f64>,
    pub c4: Vec<Vec<f64>>,
    pub c5: Vec<f64>,
}

impl NpNfnCoeffs {
    pub fn zeros(layers: usize) -> Self {
        let m = vec![vec![0.0; layers]; layers];
        let v = vec![0.0; layers];
        Self {
            a1: m.clone(),
            a2: v.clone(),
            a3: v.clone(),
            a4: v.clone(),
            a5: v.clone(),
            a6: v.clone(),
            a7: m.clone(),
            a8: v.clone(),
            a9: v.clone(),
            c1: m.clone(),
            c2: v.clone(),
            c3: v.clone(),
            c4: m,
            c5: v,
        }
    }

    pub fn random(layers: usize, rng: &mut Rng) -> Self {
        let mut c = Self::zeros(layers);
        for m in [&mut c.a1, &mut c.a7, &mut c.c1, &mut c.c4] {
            for x in m.iter_mut().flatten() {
                *x = uniform(rng, -1.0, 1.0);
            }
        }
        for v in [&mut c.a2, &mut c.a3, &mut c.a4, &mut c.a5, &mut c.a6, &mut c.a8, &mut c.a9, &mut c.c2, &mut c.c3, &mut c.c5] {
            for x in v.iter_mut() {
                *x = uniform(rng, -1.0, 1.0);
            }
        }
        c
    }

    pub fn num_layers(&self) -> usize {
        self.a2.len()
    }

    fn is_consistent(&self) -> bool {
        let l = self.num_layers();
        let square = |m: &Vec<Vec<f64>>| m.len() == l && m.iter().all(|r| r.len() == l);
        let vecs = [&self.a2, &self.a3, &self.a4, &self.a5, &self.a6, &self.a8, &self.a9, &self.c2, &self.c3, &self.c5];
        square(&self.a1) && square(&self.a7) && square(&self.c1) && square(&self.c4) && vecs.iter().all(|v| v.len() == l)
    }
}

/// Weight matrices (`out x in`) and bias vectors of a plain MLP.
pub fn mlp_weights(spec: &ArchSpec, params: &ParamStore) -> Result<(Vec<Mat>, Vec<Vec<f64>>), GnnError> {
    check_plain_mlp(spec)?;
    let (mut ws, mut bs) = (Vec::new(), Vec::new());
    for (i, layer) in spec.indexed_layers() {
        if let LayerSpec::Linear { in_dim, out_dim, .. } = layer {
            let w = params.get(&ParamKey::new(i, ParamName::Weight)).ok_or(GnnError::NotAnMlp("missing weight"))?;
            let b = params.get(&ParamKey::new(i, ParamName::Bias)).ok_or(GnnError::NotAnMlp("missing bias"))?;
            ws.push(Mat::from_vec(*out_dim, *in_dim, w.data().to_vec()));
            bs.push(b.data().to_vec());
        }
    }
    Ok((ws, bs))
}

/// Direct evaluation of the NP-NFN linear layer with biases. Out-of-range
/// layers (`W^(0)`, `W^(L+1)`, `b^(0)`) are zero.
pub fn npnfn_linear(ws: &[Mat], bs: &[Vec<f64>], c: &NpNfnCoeffs) -> Result<(Vec<Mat>, Vec<Vec<f64>>), GnnError> {
    let layers = ws.len();
    if bs.len() != layers || c.num_layers() != layers || !c.is_consistent() {
        return Err(GnnError::ShapeMismatch("coefficient and layer counts differ"));
    }
    for l in 0..layers {
        if bs[l].len() != ws[l].rows() || (l > 0 && ws[l].cols() != ws[l - 1].rows()) {
            return Err(GnnError::ShapeMismatch("weights and biases do not chain"));
        }
    }
    let total_w: Vec<f64> = ws.iter().map(|w| w.data().iter().sum()).collect();
    let total_b: Vec<f64> = bs.iter().map(|b| b.iter().sum()).collect();
    let row = |l: usize, i: usize| ws[l].row(i).iter().sum::<f64>();
    let col = |l: usize, j: usize| (0..ws[l].rows()).map(|i| ws[l].get(i, j)).sum::<f64>();
    let dot = |k: &[f64], t: &[f64]| k.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
    let mut new_ws = Vec::with_capacity(layers);
    let mut new_bs = Vec::with_capacity(layers);
    for l in 0..layers {
        let (rows, cols) = (ws[l].rows(), ws[l].cols());
        let shared = dot(&c.a1[l], &total_w) + dot(&c.a7[l], &total_b);
        let mut w = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let prev_row = if l > 0 { row(l - 1, j) } else { 0.0 };
                let next_col = if l + 1 < layers { col(l + 1, i) } else { 0.0 };
                let prev_b = if l > 0 { bs[l - 1][j] } else { 0.0 };
                let v = shared
                    + c.a2[l] * col(l, j)
                    + c.a3[l] * prev_row
                    + c.a4[l] * row(l, i)
                    + c.a5[l] * next_col
                    + c.a6[l] * ws[l].get(i, j)
                    + c.a8[l] * bs[l][i]
                    + c.a9[l] * prev_b;
                w.set(i, j, v);
            }
        }
        let shared_b = dot(&c.c1[l], &total_w) + dot(&c.c4[l], &total_b);
        let b = (0..rows)
            .map(|j| {
                let next_col = if l + 1 < layers { col(l + 1, j) } else { 0.0 };
                shared_b + c.c2[l] * row(l, j) + c.c3[l] * next_col + c.c5[l] * bs[l][j]
            })
            .collect();
        new_ws.push(w);
        new_bs.push(b);
    }
    Ok((new_ws, new_bs))
}

/// Channel positions of the features an NP-NFN edge update reads.
struct EdgeLayout {
    value: usize,
    weight: usize,
    bias: usize,
    forward: usize,
    backward: usize,
    /// Channel of the one-hot for parametric layer 1; layer `l` sits at
    /// `layer1 + l - 1`.
    layer1: usize,
}

/// Messages `[W^(l+1)_{*,k}, W^(l)_{k,*}, b^(l)_k]` for neuron `k`.
fn npnfn_messages(input_dim: usize, e: &EdgeLayout) -> Mlp {
    let val = || lin(e.value);
    product_net(
        input_dim,
        &[
            out(vec![term(val(), Factor::And(vec![e.backward, e.weight]))]),
            out(vec![term(val(), Factor::And(vec![e.forward, e.weight]))]),
            out(vec![term(val(), Factor::And(vec![e.forward, e.bias]))]),
        ],
    )
}

/// Per-layer sums `[W^(s)_{**}..., b^(s)_*...]` as a per-edge contribution.
fn layer_sum_terms(e: &EdgeLayout, layers: usize) -> Vec<Out> {
    let mut outs = Vec::new();
    for kind in [e.weight, e.bias] {
        for s in 0..layers {
            outs.push(out(vec![term(lin(e.value), Factor::And(vec![kind, e.forward, e.layer1 + s]))]));
        }
    }
    outs
}

/// Edge update reproducing `W~` on weight edges and `b~` on bias edges.
fn npnfn_edge_update(input_dim: usize, e: &EdgeLayout, vi: usize, vj: usize, u: usize, c: &NpNfnCoeffs) -> Mlp {
    let layers = c.num_layers();
    let mut terms = Vec::new();
    for l in 0..layers {
        let mut w_expr = vec![
            (vj, c.a2[l]),
            (vj + 1, c.a3[l]),
            (vi + 1, c.a4[l]),
            (vi, c.a5[l]),
            (e.value, c.a6[l]),
            (vi + 2, c.a8[l]),
            (vj + 2, c.a9[l]),
        ];
        let mut b_expr = vec![(vi + 1, c.c2[l]), (vi, c.c3[l]), (e.value, c.c5[l])];
        for s in 0..layers {
            w_expr.push((u + s, c.a1[l][s]));
            w_expr.push((u + layers + s, c.a7[l][s]));
            b_expr.push((u + s, c.c1[l][s]));
            b_expr.push((u + layers + s, c.c4[l][s]));
        }
        terms.push(term(Factor::And(vec![e.weight, e.forward, e.layer1 + l]), Factor::Lin(w_expr)));
        terms.push(term(Factor::And(vec![e.bias, e.forward, e.layer1 + l]), Factor::Lin(b_expr)));
    }
    product_net(input_dim, &[out(terms)])
}

fn raw_layout(offset: usize) -> EdgeLayout {
    EdgeLayout {
        value: offset + EDGE_VALUE,
        weight: offset + EDGE_TYPE,
        bias: offset + EDGE_TYPE + 1,
        forward: offset + EDGE_DIR,
        backward: offset + EDGE_DIR + 1,
        layer1: offset + EDGE_LAYER + 1,
    }
}

/// Metanet whose per-edge outputs on the undirected parameter graph of an
/// MLP equal the NP-NFN layer applied to its weights. The standard form
/// needs two layers (sums first, combination second); the global-first
/// form needs one.
pub fn build_npnfn_gnn(c: &NpNfnCoeffs, form: GnnForm) -> Result<GnnModel, GnnError> {
    let layers = c.num_layers();
    if !c.is_consistent() || layers == 0 || layers >= LAYER_SLOTS {
        return Err(GnnError::ShapeMismatch("between 1 and 11 layers of consistent coefficients"));
    }
    let de = EDGE_FEATURES;
    let model_layers = match form {
        GnnForm::GlobalFirst => {
            let global = product_net(de, &layer_sum_terms(&raw_layout(0), layers));
            let node_msg = npnfn_messages(2 + de + 2 * layers, &raw_layout(2));
            let edge_upd = npnfn_edge_update(6 + de + 2 * layers, &raw_layout(6), 0, 3, 6 + de, c);
            vec![GnnLayer {
                node_msg,
                node_upd: None,
                edge_upd,
                global_upd: Some(global),
            }]
        }
        GnnForm::Standard => {
            // Layer 1: messages give node sums; edges keep the features
            // layer 2 needs and add per-layer sum contributions; global
            // collects them.
            let node_msg = npnfn_messages(2 + de, &raw_layout(2));
            let raw = raw_layout(6);
            let mut edge_outs: Vec<Out> = [raw.value, raw.weight, raw.bias, raw.forward]
                .iter()
                .map(|&ch| out(vec![term(Factor::One, lin(ch))]))
                .collect();
            for s in 0..layers {
                edge_outs.push(out(vec![term(Factor::One, lin(raw.layer1 + s))]));
            }
            edge_outs.extend(layer_sum_terms(&raw, layers));
            let edge_upd = product_net(6 + de, &edge_outs);
            let carried = 4 + 3 * layers;
            let sums: Vec<usize> = (0..2 * layers).map(|k| 3 + 4 + layers + k).collect();
            let global = select(3 + carried, &sums);
            let first = GnnLayer {
                node_msg,
                node_upd: None,
                edge_upd,
                global_upd: Some(global),
            };
            // Layer 2: nodes keep their sums; edges combine.
            let du = 2 * layers;
            let layout = EdgeLayout {
                value: 6,
                weight: 7,
                bias: 8,
                forward: 9,
                backward: usize::MAX,
                layer1: 10,
            };
            let second = GnnLayer {
                node_msg: Mlp::zeros(6 + carried + du, 1),
                node_upd: Some(select(3 + 1 + du, &[0, 1, 2])),
                edge_upd: npnfn_edge_update(6 + carried + du, &layout, 0, 3, 6 + carried, c),
                global_upd: None,
            };
            vec![first, second]
        }
    };
    Ok(GnnModel {
        node_embed: Mlp::zeros(NODE_FEATURES, 1),
        edge_embed: identity_mlp(de),
        global_dim: 0,
        layers: model_layers,
        readout: Readout::PerEdge(identity_mlp(1)),
        form,
    })
}

/// Per-edge outputs of a one-output per-edge model, rearranged into the
/// weight matrices and biases of `spec`.
pub fn per_edge_to_mlp(spec: &ArchSpec, values: &[f64]) -> Result<(Vec<Mat>, Vec<Vec<f64>>), GnnError> {
    let store = ParamStore::from_flat(spec, values)?;
    mlp_weights(spec, &store)
}
