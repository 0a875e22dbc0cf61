use std::collections::BTreeMap;
use std::vec;
use std::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::arch::{count_params, init_params, Activation, Interp, NormKind};
use crate::compute_graph::{build_computation_graph, NodeKind};

fn conv2d(cin: usize, cout: usize, has_bias: bool) -> LayerSpec {
    LayerSpec::Conv {
        spatial_rank: 2,
        in_channels: cin,
        out_channels: cout,
        kernel_shape: vec![2, 2],
        stride: 1,
        has_bias,
    }
}

fn frontier(n: usize, shape: Vec<usize>) -> Frontier {
    Frontier {
        nodes: (0..n).collect(),
        shape,
        flat_spatial: None,
        depth: 0,
    }
}

fn count_type(g: &ParamGraph, t: EdgeType) -> usize {
    g.edges.iter().filter(|e| e.feature.edge_type == t).count()
}

#[test]
fn conv_subgraph_has_parallel_positional_edges() {
    let (g, out) = build_layer_subgraph(&conv2d(1, 2, true), 0, &frontier(1, vec![4, 4, 1]), None).unwrap();
    assert_eq!(g.nodes.len(), 4);
    assert_eq!(g.nodes.iter().filter(|n| n.node_type == NodeType::Bias).count(), 1);
    assert_eq!(count_type(&g, EdgeType::Weight), 8);
    assert_eq!(count_type(&g, EdgeType::Bias), 2);
    assert_eq!(out.nodes.len(), 2);
    for &dst in &out.nodes {
        let mut positions: Vec<Vec<i64>> = g
            .edges
            .iter()
            .filter(|e| e.dst == dst && e.feature.edge_type == EdgeType::Weight)
            .map(|e| e.feature.position.clone().unwrap())
            .collect();
        positions.sort();
        assert_eq!(positions, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert!(g.edges.iter().filter(|e| e.dst == dst && e.feature.edge_type == EdgeType::Weight).all(|e| e.src == 0));
    }
}

#[test]
fn deep_sets_subgraph_has_two_bases() {
    let layer = LayerSpec::DeepSetsLinear {
        in_channels: 2,
        out_channels: 3,
        set_size: 4,
    };
    let (g, out) = build_layer_subgraph(&layer, 0, &frontier(2, vec![4, 2]), None).unwrap();
    assert_eq!(g.nodes.len(), 5);
    assert_eq!(out.nodes.len(), 3);
    assert_eq!(count_type(&g, EdgeType::Weight), 12);
    let mut per_pair: BTreeMap<(usize, usize), Vec<i64>> = BTreeMap::new();
    for e in &g.edges {
        per_pair.entry((e.src, e.dst)).or_default().push(e.feature.position.as_ref().unwrap()[0]);
    }
    assert_eq!(per_pair.len(), 6);
    assert!(per_pair.values().all(|v| v == &vec![0, 1]));
}

#[test]
fn norm_subgraph_adds_mean_and_variance_nodes() {
    let layer = LayerSpec::Norm {
        kind: NormKind::Batch,
        num_features: 3,
    };
    let (g, out) = build_layer_subgraph(&layer, 0, &frontier(3, vec![3]), None).unwrap();
    assert_eq!(g.nodes.len(), 5);
    assert_eq!(out.nodes, vec![0, 1, 2]);
    assert_eq!(count_type(&g, EdgeType::NormGamma), 3);
    assert_eq!(count_type(&g, EdgeType::NormBeta), 3);
    for e in &g.edges {
        let src = g.nodes[e.src].node_type;
        match e.feature.edge_type {
            EdgeType::NormGamma => assert!(matches!(src, NodeType::NormVar(_))),
            EdgeType::NormBeta => assert!(matches!(src, NodeType::NormMean(_))),
            _ => unreachable!(),
        }
    }
}

#[test]
fn stacked_linears_count_nodes_and_edges() {
    let widths = [3, 4, 5, 2];
    let spec = ArchSpec::mlp(&widths, Activation::Relu);
    let g = build_param_graph(&spec, &init_params(&spec, 0)).unwrap();
    assert_eq!(g.nodes.len(), widths.iter().sum::<usize>() + 3);
    let expected: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
    assert_eq!(g.edges.len(), expected);
    assert!(g.is_connected());
    let outputs: Vec<NodeType> = g.nodes.iter().map(|n| n.node_type).filter(|t| matches!(t, NodeType::Output(_))).collect();
    assert_eq!(outputs, vec![NodeType::Output(0), NodeType::Output(1)]);
}

#[test]
fn mlp_parameter_graph_coincides_with_computation_graph() {
    let spec = ArchSpec::mlp(&[2, 3, 3, 2], Activation::Relu);
    let p = init_params(&spec, 4);
    let pg = build_param_graph(&spec, &p).unwrap();
    let cg = build_computation_graph(&spec, &p).unwrap();
    assert_eq!(pg.nodes.len(), cg.nodes.len());
    assert_eq!(pg.edges.len(), cg.edges.len());
    // Parameter ids pin down a node correspondence; it must be a bijection
    // that respects edges and node roles.
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    let by_param: BTreeMap<ParamId, (usize, usize)> = cg.edges.iter().map(|e| (e.param.unwrap(), (e.src, e.dst))).collect();
    for e in &pg.edges {
        let (s, d) = by_param[&e.param.unwrap()];
        for (a, b) in [(e.src, s), (e.dst, d)] {
            assert_eq!(*map.entry(a).or_insert(b), b);
        }
        assert_eq!(cg.edges.iter().find(|c| c.param == e.param).unwrap().weight, e.feature.value);
    }
    assert_eq!(map.len(), pg.nodes.len());
    let mut image: Vec<usize> = map.values().copied().collect();
    image.sort_unstable();
    image.dedup();
    assert_eq!(image.len(), pg.nodes.len());
    for (pn, cn) in map {
        let roles_match = match (pg.nodes[pn].node_type, cg.nodes[cn].kind) {
            (NodeType::Input(i), NodeKind::Input(j)) | (NodeType::Output(i), NodeKind::Output(j)) => i == j,
            (NodeType::Bias, NodeKind::Bias(_)) | (NodeType::Hidden, NodeKind::Hidden) => true,
            _ => false,
        };
        assert!(roles_match);
    }
}

#[test]
fn flatten_groups_linear_weights_by_channel() {
    let spec = ArchSpec::new(
        vec![3, 3, 1],
        vec![conv2d(1, 2, true), LayerSpec::relu(), LayerSpec::Flatten, LayerSpec::linear(8, 1)],
    );
    let g = build_param_graph(&spec, &init_params(&spec, 0)).unwrap();
    let linear: Vec<&ParamEdge> = g
        .edges
        .iter()
        .filter(|e| e.param.map(|p| (p.layer_index, p.name)) == Some((3, ParamName::Weight)))
        .collect();
    assert_eq!(linear.len(), 8);
    let sources: std::collections::BTreeSet<usize> = linear.iter().map(|e| e.src).collect();
    assert_eq!(sources.len(), 2);
    for e in linear {
        let flat = e.param.unwrap().flat_index;
        let p = e.feature.position.clone().unwrap();
        assert_eq!(flat / 2, (p[0] * 2 + p[1]) as usize);
    }
}

#[test]
fn residual_edges_are_parameter_free() {
    let spec = ArchSpec::new(
        vec![2],
        vec![LayerSpec::Residual {
            inner: vec![LayerSpec::linear(2, 2)],
        }],
    );
    let p = init_params(&spec, 0);
    let g = build_param_graph(&spec, &p).unwrap();
    let res: Vec<&ParamEdge> = g.edges.iter().filter(|e| e.feature.edge_type == EdgeType::Residual).collect();
    assert_eq!(res.len(), 2);
    assert!(res.iter().all(|e| e.param.is_none() && e.feature.value == 1.0));
    assert_eq!(extract_params(&g, &spec).unwrap(), p);
}

#[test]
fn overwritten_edge_changes_one_scalar() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let p = init_params(&spec, 1);
    let g = build_param_graph(&spec, &p).unwrap();
    let e = 4;
    let edited = g.with_edge_value(e, 7.0);
    let q = extract_params(&edited, &spec).unwrap();
    let id = g.edges[e].param.unwrap();
    for other in p.param_ids() {
        if other == id {
            assert_eq!(q.value(&other), Some(7.0));
        } else {
            assert_eq!(q.value(&other), p.value(&other));
        }
    }
    assert_eq!(g.edges[e].feature.value, p.value(&id).unwrap());
}

#[test]
fn extraction_reports_missing_binding() {
    let spec = ArchSpec::mlp(&[2, 1], Activation::Relu);
    let mut g = build_param_graph(&spec, &init_params(&spec, 0)).unwrap();
    let gone = g.edges.remove(0).param.unwrap();
    assert_eq!(extract_params(&g, &spec), Err(ParamGraphError::MissingBinding(gone)));
}

#[test]
fn undirected_copy_differs_only_in_direction() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let p = init_params(&spec, 0);
    let g = build_param_graph(&spec, &p).unwrap();
    let u = to_undirected(&g);
    assert_eq!(u.edges.len(), 2 * g.edges.len());
    let m = g.edges.len();
    for (f, b) in u.edges[..m].iter().zip(&u.edges[m..]) {
        assert_eq!((f.src, f.dst), (b.dst, b.src));
        assert_eq!(b.param, None);
        assert_eq!(b.feature.direction, Direction::Backward);
        let mut same = b.feature.clone();
        same.direction = Direction::Forward;
        assert_eq!(same, f.feature);
    }
    assert_eq!(extract_params(&u, &spec).unwrap(), p);
}

#[test]
fn dot_renders_parallel_edges_and_rejects_empty() {
    let (g, _) = build_layer_subgraph(&conv2d(1, 2, false), 0, &frontier(1, vec![4, 4, 1]), None).unwrap();
    let dot = g.to_dot().unwrap();
    assert_eq!(dot.matches(" -> ").count(), 8);
    assert_eq!(ParamGraph::default().to_dot(), Err(ParamGraphError::EmptyGraph));
}

#[test]
fn node_codes_round_trip() {
    for t in [
        NodeType::Hidden,
        NodeType::Bias,
        NodeType::NormMean(2),
        NodeType::NormVar(1),
        NodeType::GridCoord,
        NodeType::Channel,
        NodeType::Input(5),
        NodeType::Output(3),
        NodeType::AttentionHead(7),
    ] {
        assert_eq!(NodeType::from_code(t.code()), Some(t));
    }
}

/// One spec per layer family, each small enough to check exhaustively.
pub(crate) fn family_specs() -> Vec<(&'static str, ArchSpec)> {
    vec![
        ("linear", ArchSpec::mlp(&[3, 4, 2], Activation::Relu)),
        (
            "conv1d",
            ArchSpec::new(
                vec![6, 2],
                vec![
                    LayerSpec::Conv {
                        spatial_rank: 1,
                        in_channels: 2,
                        out_channels: 3,
                        kernel_shape: vec![3],
                        stride: 2,
                        has_bias: true,
                    },
                    LayerSpec::relu(),
                    LayerSpec::Flatten,
                    LayerSpec::linear(6, 1),
                ],
            ),
        ),
        (
            "conv2d",
            ArchSpec::new(
                vec![4, 4, 1],
                vec![conv2d(1, 2, true), LayerSpec::relu(), LayerSpec::Flatten, LayerSpec::linear(18, 2)],
            ),
        ),
        (
            "deep_sets",
            ArchSpec::new(
                vec![4, 2],
                vec![
                    LayerSpec::DeepSetsLinear {
                        in_channels: 2,
                        out_channels: 3,
                        set_size: 4,
                    },
                    LayerSpec::relu(),
                    LayerSpec::DeepSetsLinear {
                        in_channels: 3,
                        out_channels: 1,
                        set_size: 4,
                    },
                ],
            ),
        ),
        (
            "attention",
            ArchSpec::new(
                vec![3, 4],
                vec![
                    LayerSpec::MultiHeadAttention {
                        model_dim: 4,
                        num_heads: 2,
                        head_dim: 2,
                        has_bias: true,
                    },
                    LayerSpec::linear(4, 2),
                ],
            ),
        ),
        (
            "residual",
            ArchSpec::new(
                vec![3],
                vec![
                    LayerSpec::linear(3, 3),
                    LayerSpec::Residual {
                        inner: vec![LayerSpec::relu(), LayerSpec::linear(3, 3)],
                    },
                    LayerSpec::Residual { inner: vec![] },
                    LayerSpec::linear(3, 1),
                ],
            ),
        ),
        (
            "norm",
            ArchSpec::new(
                vec![2, 4],
                vec![
                    LayerSpec::linear(4, 4),
                    LayerSpec::Norm {
                        kind: NormKind::Group(2),
                        num_features: 4,
                    },
                    LayerSpec::Norm {
                        kind: NormKind::Layer,
                        num_features: 4,
                    },
                    LayerSpec::Norm {
                        kind: NormKind::Batch,
                        num_features: 4,
                    },
                    LayerSpec::linear(4, 1),
                ],
            ),
        ),
        (
            "grid",
            ArchSpec::new(
                vec![2],
                vec![
                    LayerSpec::SpatialGrid {
                        grid_shape: vec![3, 2],
                        channels: 2,
                        interp: Interp::Bilinear,
                    },
                    LayerSpec::linear(4, 3),
                    LayerSpec::relu(),
                    LayerSpec::linear(3, 1),
                ],
            ),
        ),
    ]
}

#[test]
fn every_family_binds_each_parameter_once() {
    for (name, spec) in family_specs() {
        let p = init_params(&spec, 9);
        let g = build_param_graph(&spec, &p).unwrap();
        assert_eq!(g.num_param_edges(), count_params(&spec), "{name}");
        assert_eq!(extract_params(&g, &spec).unwrap(), p, "{name}");
        assert!(g.is_connected(), "{name}");
    }
}

fn arb_param_spec() -> impl Strategy<Value = ArchSpec> {
    let families = family_specs().into_iter().map(|(_, s)| s).collect::<Vec<_>>();
    let fixed = prop::sample::select(families);
    let mlp = prop::collection::vec(1usize..6, 2..5).prop_map(|w| ArchSpec::mlp(&w, Activation::Relu));
    let conv = (1usize..3, 1usize..4, 2usize..5).prop_map(|(cin, cout, n)| {
        let flat = (n - 1) * (n - 1) * cout;
        ArchSpec::new(
            vec![n, n, cin],
            vec![conv2d(cin, cout, true), LayerSpec::Flatten, LayerSpec::linear(flat, 2)],
        )
    });
    prop_oneof![fixed, mlp, conv]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_edge_per_parameter_and_round_trip(spec in arb_param_spec(), seed in 0u64..10_000) {
        let p = init_params(&spec, seed);
        let g = build_param_graph(&spec, &p).unwrap();
        prop_assert_eq!(g.num_param_edges(), count_params(&spec));
        let back = extract_params(&g, &spec).unwrap();
        prop_assert_eq!(back.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), p.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(extract_params(&to_undirected(&g), &spec).unwrap(), p);
    }
}
