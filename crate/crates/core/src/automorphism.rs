//! Neural DAG automorphisms.
//!
//! An automorphism is a node permutation that fixes input, output and bias
//! nodes, maps edges onto edges, and keeps tied weights tied. The induced
//! edge map carries parameters along: `Phi(theta)[phi(e)] = theta[e]`.
//!
//! Search runs on a [`SearchGraph`], a labelled multigraph view that both
//! computation graphs and parameter graphs can be lowered to.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::arch::{forward, ArchError, ArchSpec, LayerSpec, ParamId, ParamStore};
use crate::compute_graph::{build_computation_graph, CompGraph, CompGraphError, NodeKind};
use crate::param_graph::{NodeType, ParamGraph};
use crate::rng::{normal, stream};
use crate::tensor::Tensor;

/// Default cap on backtracking steps before giving up with `TooLarge`.
pub const DEFAULT_SEARCH_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutomorphismError {
    #[error("permutation is not a bijection on {0} nodes")]
    NotABijection(usize),
    #[error("automorphism search exceeded {budget} steps")]
    TooLarge { budget: usize },
    #[error("weight-sharing class {class} would receive conflicting values")]
    SharingViolation { class: usize },
    #[error("permutation is not an automorphism of the graph")]
    NotAnAutomorphism,
    #[error("architecture is not a {expected}: {reason}")]
    WrongFamily { expected: &'static str, reason: &'static str },
    #[error(transparent)]
    Graph(#[from] CompGraphError),
    #[error(transparent)]
    Arch(#[from] ArchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchEdge {
    pub src: usize,
    pub dst: usize,
    /// Interned edge label that automorphisms must preserve.
    pub tag: usize,
    /// Interned weight-sharing class.
    pub class: usize,
}

/// Labelled multigraph on which automorphisms are searched.
#[derive(Debug, Clone)]
pub struct SearchGraph {
    pub labels: Vec<usize>,
    pub fixed: Vec<bool>,
    pub edges: Vec<SearchEdge>,
    num_classes: usize,
    /// Edge ids for each ordered node pair, in edge-list order.
    pairs: BTreeMap<(usize, usize), Vec<usize>>,
    neighbours: Vec<Vec<usize>>,
}

struct Interner<K: Ord>(BTreeMap<K, usize>);

impl<K: Ord> Interner<K> {
    fn new() -> Self {
        Self(BTreeMap::new())
    }

    fn id(&mut self, k: K) -> usize {
        let n = self.0.len();
        *self.0.entry(k).or_insert(n)
    }
}

impl SearchGraph {
    pub fn new(labels: Vec<usize>, fixed: Vec<bool>, edges: Vec<SearchEdge>) -> Self {
        let n = labels.len();
        let mut classes = Interner::new();
        let edges: Vec<SearchEdge> = edges
            .into_iter()
            .map(|e| SearchEdge {
                class: classes.id(e.class),
                ..e
            })
            .collect();
        let mut pairs: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        let mut neighbours = vec![Vec::new(); n];
        for (i, e) in edges.iter().enumerate() {
            pairs.entry((e.src, e.dst)).or_default().push(i);
            neighbours[e.src].push(e.dst);
            neighbours[e.dst].push(e.src);
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            labels,
            fixed,
            edges,
            num_classes: classes.0.len(),
            pairs,
            neighbours,
        }
    }

    pub fn from_comp_graph(g: &CompGraph) -> Self {
        let mut labels = Interner::new();
        let node_labels = g
            .nodes
            .iter()
            .map(|n| labels.id((n.kind, n.layer_number, n.activation)))
            .collect();
        let fixed = g.nodes.iter().map(|n| n.kind != NodeKind::Hidden).collect();
        let edges = g
            .edges
            .iter()
            .map(|e| SearchEdge {
                src: e.src,
                dst: e.dst,
                tag: usize::from(e.param.is_some()),
                class: e.share_class,
            })
            .collect();
        Self::new(node_labels, fixed, edges)
    }

    /// View of a parameter graph. Every parameter edge is its own sharing
    /// class; edge labels are type, direction and positional encoding.
    pub fn from_param_graph(g: &ParamGraph) -> Self {
        let mut labels = Interner::new();
        let node_labels = g.nodes.iter().map(|n| labels.id((n.node_type, n.layer))).collect();
        let fixed = g
            .nodes
            .iter()
            .map(|n| !matches!(n.node_type, NodeType::Hidden | NodeType::AttentionHead(_) | NodeType::Channel))
            .collect();
        let mut tags = Interner::new();
        let edges = g
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| SearchEdge {
                src: e.src,
                dst: e.dst,
                tag: tags.id((e.feature.edge_type, e.feature.direction, e.feature.position.clone(), e.feature.layer)),
                class: i,
            })
            .collect();
        Self::new(node_labels, fixed, edges)
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    fn pair(&self, a: usize, b: usize) -> &[usize] {
        self.pairs.get(&(a, b)).map_or(&[], Vec::as_slice)
    }

    /// Tag-sorted edge ids between an ordered pair (stable within a tag).
    fn pair_by_tag(&self, a: usize, b: usize) -> Vec<usize> {
        let mut ids = self.pair(a, b).to_vec();
        ids.sort_by_key(|&e| self.edges[e].tag);
        ids
    }
}

/// Node permutation plus the induced edge permutation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct NeuralAutomorphism {
    pub node_perm: Vec<usize>,
    pub edge_perm: Vec<usize>,
}

impl NeuralAutomorphism {
    pub fn identity(num_nodes: usize, num_edges: usize) -> Self {
        Self {
            node_perm: (0..num_nodes).collect(),
            edge_perm: (0..num_edges).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.node_perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut node_perm = vec![0; self.node_perm.len()];
        for (i, &p) in self.node_perm.iter().enumerate() {
            node_perm[p] = i;
        }
        let mut edge_perm = vec![0; self.edge_perm.len()];
        for (i, &p) in self.edge_perm.iter().enumerate() {
            edge_perm[p] = i;
        }
        Self { node_perm, edge_perm }
    }

    /// `self` after `other`: `v -> self(other(v))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            node_perm: other.node_perm.iter().map(|&v| self.node_perm[v]).collect(),
            edge_perm: other.edge_perm.iter().map(|&e| self.edge_perm[e]).collect(),
        }
    }
}

fn check_bijection(perm: &[usize], n: usize) -> Result<(), AutomorphismError> {
    if perm.len() != n {
        return Err(AutomorphismError::NotABijection(n));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(AutomorphismError::NotABijection(n));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Edge map induced by a node permutation, pairing parallel edges of equal
/// tag in edge-list order. `None` when edges are not preserved.
pub fn induced_edge_perm(g: &SearchGraph, perm: &[usize]) -> Option<Vec<usize>> {
    let mut edge_perm = vec![usize::MAX; g.edges.len()];
    for &(a, b) in g.pairs.keys() {
        let from = g.pair_by_tag(a, b);
        let to = g.pair_by_tag(perm[a], perm[b]);
        if from.len() != to.len() {
            return None;
        }
        for (&e, &f) in from.iter().zip(&to) {
            if g.edges[e].tag != g.edges[f].tag {
                return None;
            }
            edge_perm[e] = f;
        }
    }
    Some(edge_perm)
}

/// Checks the three defining properties on a search graph and returns the
/// induced edge permutation when they hold.
pub fn check_search_automorphism(g: &SearchGraph, perm: &[usize]) -> Result<Option<Vec<usize>>, AutomorphismError> {
    check_bijection(perm, g.num_nodes())?;
    for (v, &p) in perm.iter().enumerate() {
        if g.labels[p] != g.labels[v] || (g.fixed[v] && p != v) {
            return Ok(None);
        }
    }
    // Pairs are compared in both directions through the bijection, so equal
    // pair counts per image make the edge map a bijection.
    let Some(edge_perm) = induced_edge_perm(g, perm) else {
        return Ok(None);
    };
    if g.pairs.len() != g.pairs.keys().map(|&(a, b)| (perm[a], perm[b])).collect::<alloc::collections::BTreeSet<_>>().len() {
        return Ok(None);
    }
    let mut cmap = vec![usize::MAX; g.num_classes];
    let mut cinv = vec![usize::MAX; g.num_classes];
    for (e, &f) in edge_perm.iter().enumerate() {
        let (c, d) = (g.edges[e].class, g.edges[f].class);
        if cmap[c] == usize::MAX && cinv[d] == usize::MAX {
            cmap[c] = d;
            cinv[d] = c;
        } else if cmap[c] != d || cinv[d] != c {
            return Ok(None);
        }
    }
    Ok(Some(edge_perm))
}

/// Whether `perm` is a neural DAG automorphism of `g`.
pub fn is_automorphism(g: &CompGraph, perm: &[usize]) -> Result<bool, AutomorphismError> {
    Ok(check_search_automorphism(&SearchGraph::from_comp_graph(g), perm)?.is_some())
}

/// Wraps a verified node permutation of a computation graph.
pub fn automorphism_from_perm(g: &CompGraph, perm: Vec<usize>) -> Result<NeuralAutomorphism, AutomorphismError> {
    let sg = SearchGraph::from_comp_graph(g);
    let edge_perm = check_search_automorphism(&sg, &perm)?.ok_or(AutomorphismError::NotAnAutomorphism)?;
    Ok(NeuralAutomorphism { node_perm: perm, edge_perm })
}

/// Stable colour refinement; fixed nodes start in singleton colours.
fn refine_colours(g: &SearchGraph) -> Vec<usize> {
    let n = g.num_nodes();
    let mut init = Interner::new();
    let mut colours: Vec<usize> = (0..n)
        .map(|v| init.id((g.labels[v], if g.fixed[v] { v } else { usize::MAX })))
        .collect();
    let mut count = init.0.len();
    loop {
        let mut sigs = Interner::new();
        let next: Vec<usize> = (0..n)
            .map(|v| {
                let mut around: Vec<(bool, usize, usize)> = Vec::new();
                for &u in &g.neighbours[v] {
                    for &e in g.pair(u, v) {
                        around.push((false, g.edges[e].tag, colours[u]));
                    }
                    for &e in g.pair(v, u) {
                        around.push((true, g.edges[e].tag, colours[u]));
                    }
                }
                around.sort_unstable();
                sigs.id((colours[v], around))
            })
            .collect();
        let new_count = sigs.0.len();
        colours = next;
        if new_count == count {
            return colours;
        }
        count = new_count;
    }
}

struct Search<'a> {
    g: &'a SearchGraph,
    candidates: Vec<Vec<usize>>,
    perm: Vec<usize>,
    inv: Vec<usize>,
    cmap: Vec<usize>,
    cinv: Vec<usize>,
    undo: Vec<usize>,
    order: Vec<usize>,
    steps: usize,
    budget: usize,
    max_count: usize,
    found: Vec<NeuralAutomorphism>,
}

const UNSET: usize = usize::MAX;

impl Search<'_> {
    /// Matches edges between `(a, b)` against `(pa, pb)` and records class
    /// constraints. Returns false on any inconsistency.
    fn match_pair(&mut self, a: usize, b: usize, pa: usize, pb: usize) -> bool {
        let from = self.g.pair_by_tag(a, b);
        let to = self.g.pair_by_tag(pa, pb);
        if from.len() != to.len() {
            return false;
        }
        for (e, f) in from.into_iter().zip(to) {
            let (ee, ff) = (&self.g.edges[e], &self.g.edges[f]);
            if ee.tag != ff.tag {
                return false;
            }
            let (c, d) = (ee.class, ff.class);
            if self.cmap[c] == UNSET && self.cinv[d] == UNSET {
                self.cmap[c] = d;
                self.cinv[d] = c;
                self.undo.push(c);
            } else if self.cmap[c] != d || self.cinv[d] != c {
                return false;
            }
        }
        true
    }

    fn consistent(&mut self, v: usize, w: usize) -> bool {
        let g = self.g;
        for &u in &g.neighbours[v] {
            let pu = if u == v { w } else { self.perm[u] };
            if pu == UNSET {
                continue;
            }
            if !self.match_pair(u, v, pu, w) || !self.match_pair(v, u, w, pu) {
                return false;
            }
        }
        for &x in &g.neighbours[w] {
            let u = if x == w { v } else { self.inv[x] };
            if u == UNSET {
                continue;
            }
            if g.pair(u, v).len() != g.pair(x, w).len() || g.pair(v, u).len() != g.pair(w, x).len() {
                return false;
            }
        }
        true
    }

    fn assign(&mut self, v: usize, w: usize) {
        self.perm[v] = w;
        self.inv[w] = v;
    }

    fn unassign(&mut self, v: usize, mark: usize) {
        self.inv[self.perm[v]] = UNSET;
        self.perm[v] = UNSET;
        while self.undo.len() > mark {
            let c = self.undo.pop().expect("undo log above mark");
            self.cinv[self.cmap[c]] = UNSET;
            self.cmap[c] = UNSET;
        }
    }

    fn run(&mut self, depth: usize) -> Result<bool, AutomorphismError> {
        if self.found.len() >= self.max_count {
            return Ok(true);
        }
        if depth == self.order.len() {
            if let Some(edge_perm) = check_search_automorphism(self.g, &self.perm)? {
                self.found.push(NeuralAutomorphism {
                    node_perm: self.perm.clone(),
                    edge_perm,
                });
            }
            return Ok(self.found.len() >= self.max_count);
        }
        let v = self.order[depth];
        for i in 0..self.candidates[v].len() {
            let w = self.candidates[v][i];
            if self.inv[w] != UNSET {
                continue;
            }
            self.steps += 1;
            if self.steps > self.budget {
                return Err(AutomorphismError::TooLarge { budget: self.budget });
            }
            let mark = self.undo.len();
            if self.consistent(v, w) {
                self.assign(v, w);
                let done = self.run(depth + 1)?;
                self.unassign(v, mark);
                if done {
                    return Ok(true);
                }
            } else {
                while self.undo.len() > mark {
                    let c = self.undo.pop().expect("undo log above mark");
                    self.cinv[self.cmap[c]] = UNSET;
                    self.cmap[c] = UNSET;
                }
            }
        }
        Ok(false)
    }
}

/// All automorphisms of a search graph (up to `max_count`), sorted
/// lexicographically by node permutation; the identity comes first.
pub fn enumerate_search_automorphisms(g: &SearchGraph, max_count: usize, budget: usize) -> Result<Vec<NeuralAutomorphism>, AutomorphismError> {
    let n = g.num_nodes();
    let colours = refine_colours(g);
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|v| {
            if g.fixed[v] {
                vec![v]
            } else {
                (0..n).filter(|&w| colours[w] == colours[v] && !g.fixed[w]).collect()
            }
        })
        .collect();
    let mut s = Search {
        g,
        perm: vec![UNSET; n],
        inv: vec![UNSET; n],
        cmap: vec![UNSET; g.num_classes],
        cinv: vec![UNSET; g.num_classes],
        undo: Vec::new(),
        order: Vec::new(),
        steps: 0,
        budget,
        max_count,
        found: Vec::new(),
        candidates,
    };
    // Nodes with a single candidate are forced; place them first so their
    // class constraints prune the rest. The free nodes keep id order, which
    // keeps the output lexicographic.
    let (forced, free): (Vec<usize>, Vec<usize>) = (0..n).partition(|&v| s.candidates[v].len() == 1);
    for &v in &forced {
        let w = s.candidates[v][0];
        if s.inv[w] != UNSET || !s.consistent(v, w) {
            return Ok(Vec::new());
        }
        s.assign(v, w);
    }
    s.order = free;
    if max_count > 0 {
        s.run(0)?;
    }
    Ok(s.found)
}

/// Automorphisms of a computation graph with the default search budget.
pub fn enumerate_automorphisms(g: &CompGraph, max_count: usize) -> Result<Vec<NeuralAutomorphism>, AutomorphismError> {
    enumerate_search_automorphisms(&SearchGraph::from_comp_graph(g), max_count, DEFAULT_SEARCH_BUDGET)
}

/// Automorphisms of a parameter graph's labelled structure.
pub fn enumerate_param_graph_automorphisms(g: &ParamGraph, max_count: usize) -> Result<Vec<NeuralAutomorphism>, AutomorphismError> {
    enumerate_search_automorphisms(&SearchGraph::from_param_graph(g), max_count, DEFAULT_SEARCH_BUDGET)
}

/// Parameter permutation induced by an automorphism: maps each parameter to
/// the parameter whose edges receive its value.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPermutation {
    pub map: BTreeMap<ParamId, ParamId>,
}

pub fn param_permutation(g: &CompGraph, a: &NeuralAutomorphism) -> Result<ParamPermutation, AutomorphismError> {
    let mut map = BTreeMap::new();
    for (e, edge) in g.edges.iter().enumerate() {
        let image = &g.edges[a.edge_perm[e]];
        match (edge.param, image.param) {
            (Some(p), Some(q)) => {
                if *map.entry(p).or_insert(q) != q {
                    return Err(AutomorphismError::SharingViolation { class: edge.share_class });
                }
            }
            (None, None) => {}
            _ => return Err(AutomorphismError::NotAnAutomorphism),
        }
    }
    Ok(ParamPermutation { map })
}

/// `Phi(theta)`: moves every parameter value along the edge permutation.
pub fn apply_automorphism(params: &ParamStore, g: &CompGraph, a: &NeuralAutomorphism) -> Result<ParamStore, AutomorphismError> {
    let phi = param_permutation(g, a)?;
    let mut out = params.clone();
    let mut written: BTreeMap<ParamId, f64> = BTreeMap::new();
    for (p, q) in &phi.map {
        let v = params.value(p).ok_or(AutomorphismError::NotAnAutomorphism)?;
        if let Some(prev) = written.insert(*q, v) {
            if prev.to_bits() != v.to_bits() {
                return Err(AutomorphismError::SharingViolation {
                    class: g.edges.iter().find(|e| e.param == Some(*q)).map_or(0, |e| e.share_class),
                });
            }
        }
        out.set_value(q, v);
    }
    Ok(out)
}

/// The permuted graph `phi . g`: same structure, edge weights moved along
/// the edge permutation.
pub fn apply_automorphism_to_graph(g: &CompGraph, a: &NeuralAutomorphism) -> Result<CompGraph, AutomorphismError> {
    let mut out = g.clone();
    for (e, &f) in a.edge_perm.iter().enumerate() {
        out.edges[f].weight = g.edges[e].weight;
    }
    check_sharing(&out)?;
    Ok(out)
}

/// Every sharing class carries a single weight.
pub fn check_sharing(g: &CompGraph) -> Result<(), AutomorphismError> {
    let mut seen: BTreeMap<usize, f64> = BTreeMap::new();
    for e in &g.edges {
        let w = *seen.entry(e.share_class).or_insert(e.weight);
        if w.to_bits() != e.weight.to_bits() {
            return Err(AutomorphismError::SharingViolation { class: e.share_class });
        }
    }
    Ok(())
}

/// Largest output deviation between `theta` and `Phi(theta)` over
/// standard-normal inputs drawn from `seed`.
pub fn verify_function_preservation(spec: &ArchSpec, params: &ParamStore, a: &NeuralAutomorphism, n_samples: usize, seed: u64) -> Result<f64, AutomorphismError> {
    let g = build_computation_graph(spec, params)?;
    let permuted = apply_automorphism(params, &g, a)?;
    max_deviation(spec, params, &permuted, n_samples, seed)
}

/// Largest output deviation between two parameter stores of one architecture.
pub fn max_deviation(spec: &ArchSpec, a: &ParamStore, b: &ParamStore, n_samples: usize, seed: u64) -> Result<f64, AutomorphismError> {
    let mut rng = stream(seed);
    let n: usize = spec.input_shape.iter().product();
    let mut worst: f64 = 0.0;
    for _ in 0..n_samples {
        let x = Tensor::new(spec.input_shape.clone(), (0..n).map(|_| normal(&mut rng)).collect()).map_err(ArchError::from)?;
        let ya = forward(spec, a, &x)?;
        let yb = forward(spec, b, &x)?;
        worst = worst.max(ya.max_abs_diff(&yb));
    }
    Ok(worst)
}

/// Node sets that move together when hidden unit `a` and `b` of one hidden
/// layer are swapped: every frontier recorded from the producing layer up to
/// the next parametric layer.
fn swap_generator(g: &CompGraph, records: &[usize], positions: usize, width: usize, a: usize, b: usize) -> Result<NeuralAutomorphism, AutomorphismError> {
    let mut perm: Vec<usize> = (0..g.nodes.len()).collect();
    for &r in records {
        let nodes = &g.layer_nodes[r].nodes;
        for p in 0..positions {
            let (x, y) = (nodes[p * width + a], nodes[p * width + b]);
            perm[x] = y;
            perm[y] = x;
        }
    }
    automorphism_from_perm(g, perm)
}

fn is_parametric(layer: &LayerSpec) -> bool {
    !matches!(layer, LayerSpec::Activation { .. } | LayerSpec::Flatten)
}

/// Hidden layers as (record indices, positions, width) for a plain stack.
fn hidden_layers(g: &CompGraph, spec: &ArchSpec, is_hidden_producer: impl Fn(&LayerSpec) -> bool) -> Vec<(Vec<usize>, usize, usize)> {
    let mut out = Vec::new();
    let layers = &spec.layers;
    for (i, layer) in layers.iter().enumerate() {
        if !is_hidden_producer(layer) || !layers[i + 1..].iter().any(is_parametric) {
            continue;
        }
        // Record 0 is the input; layer i's frontier is record i + 1.
        let mut records = vec![i + 1];
        for (j, next) in layers.iter().enumerate().skip(i + 1) {
            if is_parametric(next) || matches!(next, LayerSpec::Flatten) {
                break;
            }
            records.push(j + 1);
        }
        let shape = &g.layer_nodes[i + 1].shape;
        let width = *shape.last().expect("layer output has a shape");
        let positions = shape.iter().product::<usize>() / width;
        out.push((records, positions, width));
    }
    out
}

/// Adjacent transpositions of hidden neurons, per hidden layer, for a plain
/// MLP. Node ids refer to `build_computation_graph(spec, _)`.
pub fn mlp_hidden_automorphisms(spec: &ArchSpec) -> Result<Vec<NeuralAutomorphism>, AutomorphismError> {
    if spec.input_shape.len() != 1 {
        return Err(AutomorphismError::WrongFamily {
            expected: "plain MLP",
            reason: "input must be a vector",
        });
    }
    if !spec.layers.iter().all(|l| matches!(l, LayerSpec::Linear { .. } | LayerSpec::Activation { .. })) {
        return Err(AutomorphismError::WrongFamily {
            expected: "plain MLP",
            reason: "only linear and activation layers are allowed",
        });
    }
    let g = build_computation_graph(spec, &ParamStore::zeros(spec))?;
    let mut gens = Vec::new();
    for (records, positions, width) in hidden_layers(&g, spec, |l| matches!(l, LayerSpec::Linear { .. })) {
        for a in 0..width.saturating_sub(1) {
            gens.push(swap_generator(&g, &records, positions, width, a, a + 1)?);
        }
    }
    Ok(gens)
}

/// Adjacent transpositions of hidden convolution channels, each moving the
/// channel at every spatial position together.
pub fn cnn_channel_automorphisms(spec: &ArchSpec) -> Result<Vec<NeuralAutomorphism>, AutomorphismError> {
    let allowed = spec
        .layers
        .iter()
        .all(|l| matches!(l, LayerSpec::Conv { .. } | LayerSpec::Activation { .. } | LayerSpec::Flatten | LayerSpec::Linear { .. }));
    let first_conv = spec.layers.iter().position(|l| matches!(l, LayerSpec::Conv { .. }));
    let last_conv = spec.layers.iter().rposition(|l| matches!(l, LayerSpec::Conv { .. }));
    let first_linear = spec.layers.iter().position(|l| matches!(l, LayerSpec::Linear { .. }));
    if !allowed || first_conv != Some(0) || matches!((last_conv, first_linear), (Some(c), Some(l)) if l < c) {
        return Err(AutomorphismError::WrongFamily {
            expected: "plain CNN",
            reason: "convolutions first, then an optional flatten and linear head",
        });
    }
    let g = build_computation_graph(spec, &ParamStore::zeros(spec))?;
    let mut gens = Vec::new();
    for (records, positions, width) in hidden_layers(&g, spec, |l| matches!(l, LayerSpec::Conv { .. })) {
        for a in 0..width.saturating_sub(1) {
            gens.push(swap_generator(&g, &records, positions, width, a, a + 1)?);
        }
    }
    Ok(gens)
}

#[cfg(test)]
mod tests;
