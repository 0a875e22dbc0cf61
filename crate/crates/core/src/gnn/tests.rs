use std::vec;
use std::vec::Vec;

use proptest::prelude::*;

use super::*;
use crate::arch::{forward, init_params, ArchSpec, LayerSpec, ParamStore};
use crate::automorphism::{enumerate_automorphisms, enumerate_param_graph_automorphisms};
use crate::compute_graph::build_computation_graph;
use crate::compute_graph::tests::{arb_supported_spec, fig2_conv};
use crate::param_graph::{build_param_graph, to_undirected};
use crate::rng::{normal, stream};
use crate::tensor::Tensor;
use crate::Activation;

fn random_mlp_params(spec: &ArchSpec, seed: u64) -> ParamStore {
    let mut p = init_params(spec, seed);
    let mut rng = stream(seed ^ 0x55);
    // Non-zero biases so bias terms are exercised.
    let flat: Vec<f64> = p.to_flat().iter().map(|x| x + 0.3 * normal(&mut rng)).collect();
    p.load_flat(&flat);
    p
}

fn small_model(readout: ReadoutKind, global_dim: usize, seed: u64) -> GnnModel {
    GnnModel::random(
        &GnnConfig {
            hidden: 6,
            layers: 2,
            global_dim,
            readout,
            out_dim: 2,
        },
        seed,
    )
}

#[test]
fn zero_model_outputs_zero() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let g = embed_param_graph(&build_param_graph(&spec, &init_params(&spec, 1)).unwrap());
    for kind in [ReadoutKind::EdgeMeanPool, ReadoutKind::PerEdge, ReadoutKind::Global] {
        let m = small_model(kind, 3, 2).zeros_like();
        let out = forward_metanet(&m, &g).unwrap();
        assert!(out.values().iter().all(|&x| x == 0.0));
    }
}

#[test]
fn flat_round_trip_preserves_model() {
    let m = small_model(ReadoutKind::Global, 4, 3);
    let flat = m.to_flat();
    assert_eq!(flat.len(), m.num_params());
    let mut z = m.zeros_like();
    z.set_flat(&flat);
    assert_eq!(z, m);
}

#[test]
fn edgeless_single_node_graph() {
    let g = GraphInput {
        nodes: Mat::zeros(1, NODE_FEATURES),
        edges: Mat::zeros(0, EDGE_FEATURES),
        src: vec![],
        dst: vec![],
        share_class: vec![],
        edge_param: vec![],
        input_nodes: vec![0],
        output_nodes: vec![0],
    };
    let m = small_model(ReadoutKind::Global, 2, 4);
    let state = run_layers(&m, &g).unwrap();
    assert_eq!(state.v.rows(), 1);
    assert!(state.v.is_finite());
    assert_eq!(forward_metanet(&m, &g).unwrap().values().len(), 2);
}

#[test]
fn mismatched_widths_are_rejected() {
    let mut m = small_model(ReadoutKind::EdgeMeanPool, 0, 5);
    m.layers[1].edge_upd = Mlp::zeros(3, 6);
    assert!(matches!(m.dims(), Err(GnnError::DimMismatch { .. })));
}

#[test]
fn layer_by_layer_oracle_for_standard_form() {
    // Recompute one standard layer with explicit loops.
    let spec = ArchSpec::mlp(&[2, 2, 1], Activation::Relu);
    let g = embed_param_graph(&build_param_graph(&spec, &random_mlp_params(&spec, 7)).unwrap());
    let mut m = small_model(ReadoutKind::Global, 3, 8);
    m.layers.truncate(1);
    let v0 = m.node_embed.forward(&g.nodes);
    let e0 = m.edge_embed.forward(&g.edges);
    let u0 = vec![0.0; 3];
    let l = &m.layers[0];
    let h = v0.cols();
    let mut agg = vec![vec![0.0; h]; g.num_nodes()];
    for k in 0..g.num_edges() {
        let mut x = v0.row(g.dst[k]).to_vec();
        x.extend_from_slice(v0.row(g.src[k]));
        x.extend_from_slice(e0.row(k));
        x.extend_from_slice(&u0);
        for (a, b) in agg[g.dst[k]].iter_mut().zip(l.node_msg.forward_vec(&x)) {
            *a += b;
        }
    }
    let v1: Vec<Vec<f64>> = (0..g.num_nodes())
        .map(|i| {
            let mut x = v0.row(i).to_vec();
            x.extend_from_slice(&agg[i]);
            x.extend_from_slice(&u0);
            l.node_upd.as_ref().unwrap().forward_vec(&x)
        })
        .collect();
    let e1: Vec<Vec<f64>> = (0..g.num_edges())
        .map(|k| {
            let mut x = v1[g.dst[k]].clone();
            x.extend_from_slice(&v1[g.src[k]]);
            x.extend_from_slice(e0.row(k));
            x.extend_from_slice(&u0);
            l.edge_upd.forward_vec(&x)
        })
        .collect();
    let mut gx: Vec<f64> = (0..h).map(|c| v1.iter().map(|r| r[c]).sum()).collect();
    gx.extend((0..h).map(|c| e1.iter().map(|r| r[c]).sum::<f64>()));
    gx.extend_from_slice(&u0);
    let u1 = l.global_upd.as_ref().unwrap().forward_vec(&gx);
    let state = run_layers(&m, &g).unwrap();
    for (i, row) in v1.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            assert!((state.v.get(i, c) - want).abs() < 1e-12);
        }
    }
    for (k, row) in e1.iter().enumerate() {
        for (c, want) in row.iter().enumerate() {
            assert!((state.e.get(k, c) - want).abs() < 1e-12);
        }
    }
    for (got, want) in state.u.iter().zip(&u1) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!((v1.len(), e1.len(), u1.len()), (g.num_nodes(), g.num_edges(), 3));
}

#[test]
fn equivariant_on_computation_graph_automorphisms() {
    let spec = ArchSpec::mlp(&[2, 3, 2, 1], Activation::Relu);
    let cg = build_computation_graph(&spec, &random_mlp_params(&spec, 9)).unwrap();
    let autos = enumerate_automorphisms(&cg, 100).unwrap();
    assert_eq!(autos.len(), 12);
    let g = embed_comp_graph(&cg);
    for kind in [ReadoutKind::EdgeMeanPool, ReadoutKind::PerEdge, ReadoutKind::Global] {
        let m = small_model(kind, 3, 10);
        assert!(check_equivariance(&m, &g, &autos).unwrap() < 1e-9);
    }
}

#[test]
fn equivariant_on_undirected_parameter_graph() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let pg = build_param_graph(&spec, &random_mlp_params(&spec, 11)).unwrap();
    let autos = enumerate_param_graph_automorphisms(&pg, 100).unwrap();
    assert_eq!(autos.len(), 6);
    let lifted: Vec<_> = autos.iter().map(lift_to_undirected).collect();
    let g = embed_param_graph(&pg).undirected();
    let m = small_model(ReadoutKind::PerEdge, 2, 12);
    assert!(check_equivariance(&m, &g, &lifted).unwrap() < 1e-9);
    // The crate's own undirected lowering agrees with the embedding one.
    let direct = embed_param_graph(&to_undirected(&pg));
    assert_eq!(direct.src, g.src);
    assert_eq!(direct.dst, g.dst);
}

#[test]
fn non_automorphism_breaks_equivariance() {
    let spec = ArchSpec::mlp(&[2, 2, 1], Activation::Relu);
    let cg = build_computation_graph(&spec, &random_mlp_params(&spec, 13)).unwrap();
    let g = embed_comp_graph(&cg);
    // Swap the two inputs: not an automorphism (inputs are fixed) and the
    // features move, so the outputs need not follow.
    let mut a = crate::automorphism::NeuralAutomorphism::identity(g.num_nodes(), g.num_edges());
    a.node_perm.swap(g.input_nodes[0], g.input_nodes[1]);
    let mut g2 = g.clone();
    g2.nodes.set(g.input_nodes[0], NODE_VALUE, 1.0);
    let m = small_model(ReadoutKind::EdgeMeanPool, 0, 14);
    assert!(check_equivariance(&m, &g2, &[a]).unwrap() > 1e-6);
}

#[test]
fn model_generalizes_across_graph_sizes() {
    let m = small_model(ReadoutKind::EdgeMeanPool, 2, 15);
    for widths in [vec![1, 1], vec![3, 8, 8, 2], vec![4, 16, 1]] {
        let spec = ArchSpec::mlp(&widths, Activation::Relu);
        let g = embed_param_graph(&build_param_graph(&spec, &init_params(&spec, 0)).unwrap());
        let out = forward_metanet(&m, &g).unwrap();
        assert_eq!(out.values().len(), 2);
        assert!(out.values().iter().all(|x| x.is_finite()));
    }
}

fn check_simulation(spec: &ArchSpec, seed: u64) {
    let p = random_mlp_params(spec, seed);
    let cg = build_computation_graph(spec, &p).unwrap();
    let model = build_forward_sim_gnn(&cg).unwrap();
    let mut rng = stream(seed + 100);
    for _ in 0..10 {
        let x: Vec<f64> = (0..cg.d_in).map(|_| normal(&mut rng)).collect();
        let sim = simulate_forward(&model, &cg, &x).unwrap();
        let reference = forward(spec, &p, &Tensor::new(spec.input_shape.clone(), x).unwrap()).unwrap();
        for (a, b) in sim.iter().zip(reference.data()) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn simulates_relu_mlp() {
    check_simulation(&ArchSpec::mlp(&[2, 3, 2], Activation::Relu), 1);
    check_simulation(&ArchSpec::mlp(&[3, 4, 4, 1], Activation::Identity), 2);
}

#[test]
fn simulates_strided_convolution() {
    check_simulation(&fig2_conv(), 3);
}

#[test]
fn simulates_residual_network() {
    let spec = ArchSpec::new(
        vec![2],
        vec![
            LayerSpec::linear(2, 2),
            LayerSpec::Residual {
                inner: vec![LayerSpec::relu(), LayerSpec::linear(2, 3), LayerSpec::relu(), LayerSpec::linear(3, 2)],
            },
            LayerSpec::relu(),
            LayerSpec::linear(2, 1),
        ],
    );
    check_simulation(&spec, 4);
}

#[test]
fn simulation_rejects_sine() {
    let spec = ArchSpec::mlp(&[1, 4, 1], Activation::Sine);
    let cg = build_computation_graph(&spec, &init_params(&spec, 0)).unwrap();
    assert!(matches!(build_forward_sim_gnn(&cg), Err(GnnError::UnsupportedNonlinearity(Activation::Sine))));
}

#[test]
fn statistics_of_small_sample() {
    let x = [4.0, 1.0, 3.0, 2.0];
    let got: Vec<f64> = STATNN_STATISTICS.iter().map(|&s| statistic(&x, s)).collect();
    let want = [2.5, 1.25, 1.0, 1.75, 2.5, 3.25, 4.0];
    for (a, b) in got.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn head_for(inputs: usize, seed: u64) -> Mlp {
    Mlp::relu(&[inputs, 5, 1], &mut stream(seed))
}

#[test]
fn statnn_gnn_matches_oracle_on_all_graph_views() {
    for (widths, seed) in [(vec![2, 3, 1], 1u64), (vec![1, 8, 8, 1], 2), (vec![3, 5, 4, 2, 2], 3)] {
        let spec = ArchSpec::mlp(&widths, Activation::Relu);
        let p = random_mlp_params(&spec, seed);
        let layers = widths.len() - 1;
        let head = head_for(4 * layers, seed);
        let model = build_statnn_gnn(&head, layers).unwrap();
        let want = statnn_oracle_with(&p, &head, &SUM_DECOMPOSABLE).unwrap();
        let pg = build_param_graph(&spec, &p).unwrap();
        let views = [
            embed_param_graph(&pg),
            embed_param_graph(&pg).undirected(),
            embed_comp_graph(&build_computation_graph(&spec, &p).unwrap()),
        ];
        for g in &views {
            let got = global_output(&model, g).unwrap();
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }
}

#[test]
fn statnn_oracle_checks_head_width() {
    let spec = ArchSpec::mlp(&[2, 2, 1], Activation::Relu);
    let p = init_params(&spec, 0);
    assert!(statnn_oracle(&p, &head_for(4 * 7, 0)).is_ok());
    assert!(matches!(statnn_oracle(&p, &head_for(3, 0)), Err(GnnError::DimMismatch { .. })));
}

/// Entry-by-entry evaluation from the defining sums, written against flat
/// index loops rather than row/column helpers.
fn npnfn_reference(ws: &[Mat], bs: &[Vec<f64>], c: &NpNfnCoeffs) -> (Vec<Mat>, Vec<Vec<f64>>) {
    let layers = ws.len();
    let w = |l: isize, i: usize, j: usize| -> f64 {
        if l < 0 || l as usize >= layers {
            0.0
        } else {
            ws[l as usize].get(i, j)
        }
    };
    let dims = |l: isize| -> (usize, usize) {
        if l < 0 || l as usize >= layers {
            (0, 0)
        } else {
            (ws[l as usize].rows(), ws[l as usize].cols())
        }
    };
    let b = |l: isize, i: usize| -> f64 {
        if l < 0 || l as usize >= layers {
            0.0
        } else {
            bs[l as usize][i]
        }
    };
    let sum_where = |l: isize, row: Option<usize>, col: Option<usize>| -> f64 {
        let (r, cc) = dims(l);
        let mut s = 0.0;
        for i in 0..r {
            for j in 0..cc {
                if row.is_none_or(|x| x == i) && col.is_none_or(|x| x == j) {
                    s += w(l, i, j);
                }
            }
        }
        s
    };
    let bias_total = |l: isize| (0..dims(l).0).map(|i| b(l, i)).sum::<f64>();
    let mut out_w = Vec::new();
    let mut out_b = Vec::new();
    for l in 0..layers {
        let li = l as isize;
        let (r, cc) = dims(li);
        let mut m = Mat::zeros(r, cc);
        for i in 0..r {
            for j in 0..cc {
                let mut x = 0.0;
                for s in 0..layers {
                    x += c.a1[l][s] * sum_where(s as isize, None, None) + c.a7[l][s] * bias_total(s as isize);
                }
                x += c.a2[l] * sum_where(li, None, Some(j));
                x += c.a3[l] * if l > 0 { sum_where(li - 1, Some(j), None) } else { 0.0 };
                x += c.a4[l] * sum_where(li, Some(i), None);
                x += c.a5[l] * if l + 1 < layers { sum_where(li + 1, None, Some(i)) } else { 0.0 };
                x += c.a6[l] * w(li, i, j) + c.a8[l] * b(li, i) + c.a9[l] * b(li - 1, j);
                m.set(i, j, x);
            }
        }
        let bias = (0..r)
            .map(|j| {
                let mut x = 0.0;
                for s in 0..layers {
                    x += c.c1[l][s] * sum_where(s as isize, None, None) + c.c4[l][s] * bias_total(s as isize);
                }
                x += c.c2[l] * sum_where(li, Some(j), None);
                x += c.c3[l] * if l + 1 < layers { sum_where(li + 1, None, Some(j)) } else { 0.0 };
                x + c.c5[l] * b(li, j)
            })
            .collect();
        out_w.push(m);
        out_b.push(bias);
    }
    (out_w, out_b)
}

fn max_err(a: &(Vec<Mat>, Vec<Vec<f64>>), b: &(Vec<Mat>, Vec<Vec<f64>>)) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.0.iter().zip(&b.0) {
        worst = worst.max(x.max_abs_diff(y));
    }
    for (x, y) in a.1.iter().zip(&b.1) {
        for (p, q) in x.iter().zip(y) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

#[test]
fn npnfn_linear_matches_reference() {
    let spec = ArchSpec::mlp(&[3, 4, 2, 2], Activation::Relu);
    let (ws, bs) = mlp_weights(&spec, &random_mlp_params(&spec, 20)).unwrap();
    let c = NpNfnCoeffs::random(3, &mut stream(21));
    let got = npnfn_linear(&ws, &bs, &c).unwrap();
    assert!(max_err(&got, &npnfn_reference(&ws, &bs, &c)) < 1e-12);
}

#[test]
fn npnfn_identity_coefficients() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let (ws, bs) = mlp_weights(&spec, &random_mlp_params(&spec, 22)).unwrap();
    let mut c = NpNfnCoeffs::zeros(2);
    c.a6 = vec![1.0; 2];
    c.c5 = vec![1.0; 2];
    let got = npnfn_linear(&ws, &bs, &c).unwrap();
    assert_eq!(max_err(&got, &(ws, bs)), 0.0);
}

#[test]
fn npnfn_commutes_with_hidden_permutation() {
    let spec = ArchSpec::mlp(&[2, 3, 1], Activation::Relu);
    let (ws, bs) = mlp_weights(&spec, &random_mlp_params(&spec, 23)).unwrap();
    let c = NpNfnCoeffs::random(2, &mut stream(24));
    let perm = [2usize, 0, 1];
    let permute = |ws: &[Mat], bs: &[Vec<f64>]| {
        let mut w0 = Mat::zeros(3, 2);
        let mut w1 = Mat::zeros(1, 3);
        let mut b0 = vec![0.0; 3];
        for k in 0..3 {
            w0.row_mut(perm[k]).copy_from_slice(ws[0].row(k));
            w1.set(0, perm[k], ws[1].get(0, k));
            b0[perm[k]] = bs[0][k];
        }
        (vec![w0, w1], vec![b0, bs[1].clone()])
    };
    let (pw, pb) = permute(&ws, &bs);
    let (ow, ob) = npnfn_linear(&ws, &bs, &c).unwrap();
    let moved = npnfn_linear(&pw, &pb, &c).unwrap();
    assert!(max_err(&moved, &permute(&ow, &ob)) < 1e-12);
}

#[test]
fn npnfn_rejects_bad_shapes() {
    let ws = vec![Mat::zeros(2, 2)];
    let bs = vec![vec![0.0; 3]];
    assert!(matches!(npnfn_linear(&ws, &bs, &NpNfnCoeffs::zeros(1)), Err(GnnError::ShapeMismatch(_))));
    assert!(matches!(npnfn_linear(&ws, &[vec![0.0; 2]], &NpNfnCoeffs::zeros(2)), Err(GnnError::ShapeMismatch(_))));
}

fn check_npnfn_gnn(widths: &[usize], c: &NpNfnCoeffs, seed: u64) -> f64 {
    let spec = ArchSpec::mlp(widths, Activation::Relu);
    let p = random_mlp_params(&spec, seed);
    let (ws, bs) = mlp_weights(&spec, &p).unwrap();
    let want = npnfn_linear(&ws, &bs, c).unwrap();
    let g = embed_param_graph(&build_param_graph(&spec, &p).unwrap()).undirected();
    let mut worst: f64 = 0.0;
    for form in [GnnForm::Standard, GnnForm::GlobalFirst] {
        let model = build_npnfn_gnn(c, form).unwrap();
        let out = forward_metanet(&model, &g).unwrap();
        let got = per_edge_to_mlp(&spec, out.values()).unwrap();
        worst = worst.max(max_err(&got, &want));
    }
    worst
}

#[test]
fn npnfn_gnn_matches_direct_layer() {
    let c = NpNfnCoeffs::random(3, &mut stream(30));
    assert!(check_npnfn_gnn(&[2, 4, 3, 2], &c, 31) < 1e-9);
    let c = NpNfnCoeffs::random(1, &mut stream(32));
    assert!(check_npnfn_gnn(&[3, 2], &c, 33) < 1e-9);
}

#[test]
fn npnfn_gnn_global_terms_only() {
    let mut c = NpNfnCoeffs::zeros(2);
    c.a1 = vec![vec![1.0, -0.5], vec![0.25, 2.0]];
    c.c4 = vec![vec![0.5, 1.0], vec![-1.0, 0.0]];
    assert!(check_npnfn_gnn(&[2, 3, 2], &c, 34) < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_models_are_equivariant(spec in arb_supported_spec(), seed in 0u64..500) {
        let cg = build_computation_graph(&spec, &init_params(&spec, seed)).unwrap();
        let autos = enumerate_automorphisms(&cg, 24).unwrap();
        let m = small_model(ReadoutKind::PerEdge, 2, seed);
        prop_assert!(check_equivariance(&m, &embed_comp_graph(&cg), &autos).unwrap() < 1e-9);
    }

    #[test]
    fn simulation_matches_forward(widths in prop::collection::vec(1usize..5, 2..5), relu in any::<bool>(), seed in 0u64..500) {
        let act = if relu { Activation::Relu } else { Activation::Identity };
        let spec = ArchSpec::mlp(&widths, act);
        check_simulation(&spec, seed);
    }

    #[test]
    fn npnfn_construction_holds(widths in prop::collection::vec(1usize..4, 2..5), seed in 0u64..500) {
        let c = NpNfnCoeffs::random(widths.len() - 1, &mut stream(seed));
        prop_assert!(check_npnfn_gnn(&widths, &c, seed + 1) < 1e-9);
    }
}
