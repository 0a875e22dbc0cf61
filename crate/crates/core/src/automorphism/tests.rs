use std::collections::BTreeSet;
use std::vec;
use std::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::arch::{init_params, Activation};
use crate::compute_graph::tests::{arb_supported_spec, fig2_conv};
use crate::param_graph::build_param_graph;

fn graph(spec: &ArchSpec) -> CompGraph {
    build_computation_graph(spec, &init_params(spec, 3)).unwrap()
}

fn small_cnn(cout: usize) -> ArchSpec {
    let mut spec = ArchSpec::new(
        vec![3, 3, 1],
        vec![
            LayerSpec::Conv {
                spatial_rank: 2,
                in_channels: 1,
                out_channels: cout,
                kernel_shape: vec![2, 2],
                stride: 1,
                has_bias: true,
            },
            LayerSpec::relu(),
            LayerSpec::Flatten,
        ],
    );
    spec.layers.push(LayerSpec::linear(4 * cout, 1));
    spec
}

/// Independent check: every edge maps to an edge with the same parameter
/// status, and tied edges stay tied.
fn oracle_is_automorphism(g: &CompGraph, perm: &[usize]) -> bool {
    for (v, n) in g.nodes.iter().enumerate() {
        let m = &g.nodes[perm[v]];
        if n.kind != NodeKind::Hidden && perm[v] != v {
            return false;
        }
        if (n.kind, n.layer_number, n.activation) != (m.kind, m.layer_number, m.activation) {
            return false;
        }
    }
    let mut edges: Vec<(usize, usize, bool)> = g.edges.iter().map(|e| (e.src, e.dst, e.param.is_some())).collect();
    let mut moved: Vec<(usize, usize, bool)> = g.edges.iter().map(|e| (perm[e.src], perm[e.dst], e.param.is_some())).collect();
    edges.sort_unstable();
    moved.sort_unstable();
    if edges != moved {
        return false;
    }
    // Parallel edges of equal kind pair up in edge-list order.
    let mut groups: std::collections::BTreeMap<(usize, usize, bool), Vec<usize>> = Default::default();
    for e in &g.edges {
        groups.entry((e.src, e.dst, e.param.is_some())).or_default().push(e.share_class);
    }
    let mut class_map = std::collections::BTreeMap::new();
    for (&(s, d, p), classes) in &groups {
        for (c, img) in classes.iter().zip(&groups[&(perm[s], perm[d], p)]) {
            if *class_map.entry(*c).or_insert(*img) != *img {
                return false;
            }
        }
    }
    let images: BTreeSet<usize> = class_map.values().copied().collect();
    images.len() == class_map.len()
}

/// All permutations that shuffle hidden nodes within each layer number.
fn layerwise_permutations(g: &CompGraph) -> Vec<Vec<usize>> {
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for n in &g.nodes {
        if n.kind == NodeKind::Hidden {
            groups.entry(n.layer_number).or_default().push(n.id);
        }
    }
    let mut out = vec![(0..g.nodes.len()).collect::<Vec<_>>()];
    for members in groups.values() {
        let mut next = Vec::new();
        for base in &out {
            for arrangement in permutations(members) {
                let mut p = base.clone();
                for (&from, &to) in members.iter().zip(&arrangement) {
                    p[from] = to;
                }
                next.push(p);
            }
        }
        out = next;
    }
    out
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

#[test]
fn small_mlp_groups_have_factorial_order() {
    for (widths, order) in [(vec![3, 2, 1], 2), (vec![2, 3, 3, 1], 36), (vec![2, 4, 1], 24), (vec![1, 1], 1)] {
        let g = graph(&ArchSpec::mlp(&widths, Activation::Relu));
        let autos = enumerate_automorphisms(&g, usize::MAX).unwrap();
        assert_eq!(autos.len(), order, "{widths:?}");
        assert!(autos[0].is_identity());
        assert!(autos.windows(2).all(|w| w[0].node_perm < w[1].node_perm));
    }
}

#[test]
fn cnn_with_two_channels_has_order_two() {
    let g = graph(&small_cnn(2));
    assert_eq!(enumerate_automorphisms(&g, usize::MAX).unwrap().len(), 2);
    let g = graph(&small_cnn(3));
    assert_eq!(enumerate_automorphisms(&g, usize::MAX).unwrap().len(), 6);
    // A lone output channel cannot move.
    assert_eq!(enumerate_automorphisms(&graph(&fig2_conv()), usize::MAX).unwrap().len(), 1);
}

#[test]
fn enumeration_agrees_with_brute_force() {
    let specs = [
        ArchSpec::mlp(&[2, 3, 2, 1], Activation::Sine),
        ArchSpec::mlp(&[2, 2, 2], Activation::Identity),
        small_cnn(2),
        ArchSpec::new(vec![2], vec![LayerSpec::linear(2, 3), LayerSpec::relu(), LayerSpec::Residual { inner: vec![LayerSpec::linear(3, 3)] }, LayerSpec::linear(3, 1)]),
    ];
    for spec in &specs {
        let g = graph(spec);
        let expected: BTreeSet<Vec<usize>> = layerwise_permutations(&g).into_iter().filter(|p| oracle_is_automorphism(&g, p)).collect();
        let found: BTreeSet<Vec<usize>> = enumerate_automorphisms(&g, usize::MAX).unwrap().into_iter().map(|a| a.node_perm).collect();
        assert_eq!(found, expected);
    }
}

#[test]
fn group_is_closed_under_composition_and_inverse() {
    let g = graph(&ArchSpec::mlp(&[2, 3, 2, 1], Activation::Relu));
    let autos = enumerate_automorphisms(&g, usize::MAX).unwrap();
    let set: BTreeSet<&NeuralAutomorphism> = autos.iter().collect();
    for a in &autos {
        assert!(set.contains(&a.inverse()));
        for b in &autos {
            assert!(set.contains(&a.compose(b)));
        }
    }
}

#[test]
fn non_automorphisms_are_rejected() {
    let g = graph(&ArchSpec::mlp(&[2, 2, 1], Activation::Relu));
    let n = g.nodes.len();
    let inputs = g.input_nodes().to_vec();
    let mut swap_inputs: Vec<usize> = (0..n).collect();
    swap_inputs.swap(inputs[0], inputs[1]);
    assert!(!is_automorphism(&g, &swap_inputs).unwrap());

    let hidden: Vec<usize> = g.nodes.iter().filter(|n| n.kind == NodeKind::Hidden).map(|n| n.id).collect();
    let out = g.output_nodes()[0];
    let mut cross_layer: Vec<usize> = (0..n).collect();
    cross_layer.swap(hidden[0], out);
    assert!(!is_automorphism(&g, &cross_layer).unwrap());

    assert_eq!(is_automorphism(&g, &[0; 3]), Err(AutomorphismError::NotABijection(n)));
    let mut dup: Vec<usize> = (0..n).collect();
    dup[0] = 1;
    assert_eq!(is_automorphism(&g, &dup), Err(AutomorphismError::NotABijection(n)));
}

#[test]
fn cross_channel_positions_break_sharing() {
    // Swapping channels at a single spatial position keeps edges but unties
    // the kernel.
    let spec = small_cnn(2);
    let g = graph(&spec);
    let conv = &g.layer_nodes[1].nodes;
    let mut perm: Vec<usize> = (0..g.nodes.len()).collect();
    perm.swap(conv[0], conv[1]);
    assert!(!is_automorphism(&g, &perm).unwrap());
    assert!(!oracle_is_automorphism(&g, &perm));
}

#[test]
fn generators_are_adjacent_transpositions() {
    let spec = ArchSpec::mlp(&[2, 3, 2, 1], Activation::Relu);
    let gens = mlp_hidden_automorphisms(&spec).unwrap();
    assert_eq!(gens.len(), 3);
    let g = graph(&spec);
    for a in &gens {
        assert!(is_automorphism(&g, &a.node_perm).unwrap());
        assert_eq!(a.node_perm.iter().enumerate().filter(|(i, &p)| *i != p).count(), 2);
    }
    // The generated group is the whole automorphism group.
    let mut group: BTreeSet<NeuralAutomorphism> = BTreeSet::new();
    let mut frontier = vec![NeuralAutomorphism::identity(g.nodes.len(), g.edges.len())];
    while let Some(a) = frontier.pop() {
        if group.insert(a.clone()) {
            frontier.extend(gens.iter().map(|s| s.compose(&a)));
        }
    }
    let all: BTreeSet<NeuralAutomorphism> = enumerate_automorphisms(&g, usize::MAX).unwrap().into_iter().collect();
    assert_eq!(group, all);

    let cnn = cnn_channel_automorphisms(&small_cnn(3)).unwrap();
    assert_eq!(cnn.len(), 2);
    let g = graph(&small_cnn(3));
    for a in &cnn {
        assert!(is_automorphism(&g, &a.node_perm).unwrap());
        // One swap per spatial position (2x2 outputs).
        assert_eq!(a.node_perm.iter().enumerate().filter(|(i, &p)| *i != p).count(), 8);
    }
}

#[test]
fn generators_reject_other_families() {
    assert!(matches!(mlp_hidden_automorphisms(&small_cnn(2)), Err(AutomorphismError::WrongFamily { .. })));
    assert!(matches!(
        cnn_channel_automorphisms(&ArchSpec::mlp(&[2, 2, 1], Activation::Relu)),
        Err(AutomorphismError::WrongFamily { .. })
    ));
}

#[test]
fn permuted_parameters_preserve_function() {
    for spec in [ArchSpec::mlp(&[3, 4, 2], Activation::Sine), small_cnn(3)] {
        let p = init_params(&spec, 11);
        let g = build_computation_graph(&spec, &p).unwrap();
        for a in enumerate_automorphisms(&g, usize::MAX).unwrap() {
            let dev = verify_function_preservation(&spec, &p, &a, 100, 5).unwrap();
            assert!(dev <= 1e-9, "{dev}");
            let moved = apply_automorphism(&p, &g, &a).unwrap();
            if !a.is_identity() {
                assert_ne!(moved, p);
            }
            let h = apply_automorphism_to_graph(&g, &a).unwrap();
            let x: Vec<f64> = (0..g.d_in).map(|i| i as f64 * 0.3 - 0.5).collect();
            let (y0, y1) = (g.eval(&x).unwrap(), h.eval(&x).unwrap());
            assert!(y0.iter().zip(&y1).all(|(a, b)| (a - b).abs() < 1e-9));
        }
    }
}

#[test]
fn non_automorphism_changes_function() {
    // Negative control: swapping two inputs' weights is not a symmetry.
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let p = init_params(&spec, 2);
    let mut q = p.clone();
    let w = crate::arch::ParamKey::new(0, crate::arch::ParamName::Weight);
    let t = q.get_mut(&w).unwrap();
    t.data_mut().swap(0, 1);
    assert!(max_deviation(&spec, &p, &q, 100, 1).unwrap() > 1e-6);
}

#[test]
fn corrupted_sharing_is_detected() {
    let mut g = graph(&small_cnn(2));
    assert!(check_sharing(&g).is_ok());
    let e = g.edges.iter().position(|e| e.param.is_some()).unwrap();
    g.edges[e].weight += 1.0;
    assert!(matches!(check_sharing(&g), Err(AutomorphismError::SharingViolation { .. })));
}

#[test]
fn search_budget_is_enforced() {
    let g = graph(&ArchSpec::mlp(&[2, 6, 1], Activation::Relu));
    let sg = SearchGraph::from_comp_graph(&g);
    assert_eq!(enumerate_search_automorphisms(&sg, usize::MAX, 10), Err(AutomorphismError::TooLarge { budget: 10 }));
    assert_eq!(enumerate_automorphisms(&g, 5).unwrap().len(), 5);
    assert_eq!(enumerate_automorphisms(&g, usize::MAX).unwrap().len(), 720);
}

#[test]
fn parameter_graph_automorphisms_keep_feature_multisets() {
    let spec = small_cnn(3);
    let pg = build_param_graph(&spec, &init_params(&spec, 0)).unwrap();
    let autos = enumerate_param_graph_automorphisms(&pg, usize::MAX).unwrap();
    assert_eq!(autos.len(), 6);
    let node_key = |v: usize| pg.nodes[v];
    let edge_key = |e: usize| {
        let f = &pg.edges[e].feature;
        (pg.edges[e].src, pg.edges[e].dst, f.layer, f.edge_type, f.direction, f.position.clone())
    };
    for a in &autos {
        let mut before: Vec<_> = (0..pg.nodes.len()).map(node_key).collect();
        let mut after: Vec<_> = (0..pg.nodes.len()).map(|v| node_key(a.node_perm[v])).collect();
        before.sort();
        after.sort();
        assert_eq!(before, after);
        for e in 0..pg.edges.len() {
            let (s, d, l, t, dir, pos) = edge_key(e);
            let (s2, d2, l2, t2, dir2, pos2) = edge_key(a.edge_perm[e]);
            assert_eq!((a.node_perm[s], a.node_perm[d], l, t, dir, pos), (s2, d2, l2, t2, dir2, pos2));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn enumerated_automorphisms_preserve_function(spec in arb_supported_spec(), seed in 0u64..1000) {
        let p = init_params(&spec, seed);
        let g = build_computation_graph(&spec, &p).unwrap();
        let autos = enumerate_automorphisms(&g, 40).unwrap();
        prop_assert!(autos[0].is_identity());
        for a in &autos {
            prop_assert!(oracle_is_automorphism(&g, &a.node_perm));
            prop_assert!(verify_function_preservation(&spec, &p, a, 20, seed).unwrap() <= 1e-9);
        }
    }
}
