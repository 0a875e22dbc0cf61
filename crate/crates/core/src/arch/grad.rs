//! Parameter gradients of the reference forward pass.
//!
//! Covers the layer families used to fit small input networks: dense,
//! convolution, DeepSets, activations, flatten and residual blocks.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{check_input, run_seq, split_batch, ConvGeom, Record};
use super::shape::output_shape;
use super::{ArchError, ArchSpec, LayerSpec, ParamKey, ParamName, ParamStore};
use crate::tensor::Tensor;

/// Forward activations kept for a backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    records: Vec<Record>,
    batch: usize,
}

fn check_differentiable(layers: &[LayerSpec], first: usize) -> Result<(), ArchError> {
    let mut index = first;
    for layer in layers {
        match layer {
            LayerSpec::Residual { inner } => check_differentiable(inner, index + 1)?,
            LayerSpec::MultiHeadAttention { .. } | LayerSpec::Norm { .. } | LayerSpec::SpatialGrid { .. } => {
                return Err(ArchError::Unsupported {
                    layer_index: index,
                    layer: layer.kind_name(),
                    operation: "parameter gradients",
                })
            }
            _ => {}
        }
        index += layer.subtree_len();
    }
    Ok(())
}

/// Batched forward pass over `xs` of shape `[batch, input_shape...]` that
/// records what [`backward`] needs.
pub fn forward_taped(spec: &ArchSpec, params: &ParamStore, xs: &Tensor) -> Result<(Tensor, Tape), ArchError> {
    let (batch, sample_shape) = split_batch(xs)?;
    check_input(spec, params, sample_shape)?;
    check_differentiable(&spec.layers, 0)?;
    let mut out_shape = output_shape(spec)?;
    let mut records = Vec::new();
    let (y, _) = run_seq(
        &spec.layers,
        0,
        params,
        xs.data().to_vec(),
        batch,
        sample_shape,
        Some(&mut records),
    );
    out_shape.insert(0, batch);
    Ok((Tensor::from_parts_unchecked(out_shape, y), Tape { records, batch }))
}

/// Gradient of `sum(grad_out * output)` with respect to every parameter.
pub fn backward(spec: &ArchSpec, params: &ParamStore, tape: &Tape, grad_out: &[f64]) -> ParamStore {
    let mut grads = ParamStore::zeros(spec);
    back_seq(&spec.layers, 0, &tape.records, params, grad_out.to_vec(), tape.batch, &mut grads);
    grads
}

fn back_seq(
    layers: &[LayerSpec],
    first: usize,
    records: &[Record],
    params: &ParamStore,
    mut gy: Vec<f64>,
    batch: usize,
    grads: &mut ParamStore,
) -> Vec<f64> {
    let mut starts = Vec::with_capacity(layers.len());
    let mut index = first;
    for layer in layers {
        starts.push(index);
        index += layer.subtree_len();
    }
    for ((layer, record), li) in layers.iter().zip(records).zip(starts).rev() {
        gy = match (layer, record) {
            (LayerSpec::Residual { inner }, Record::Residual { inner: rec }) => {
                let mut gx = back_seq(inner, li + 1, rec, params, gy.clone(), batch, grads);
                for (a, b) in gx.iter_mut().zip(&gy) {
                    *a += b;
                }
                gx
            }
            (_, Record::Leaf { input, shape }) => layer_backward(layer, li, params, input, shape, &gy, batch, grads),
            _ => unreachable!("tape mirrors the layer tree"),
        };
    }
    gy
}

#[allow(clippy::too_many_arguments)]
fn layer_backward(
    layer: &LayerSpec,
    li: usize,
    params: &ParamStore,
    x: &[f64],
    in_shape: &[usize],
    gy: &[f64],
    batch: usize,
    grads: &mut ParamStore,
) -> Vec<f64> {
    match layer {
        LayerSpec::Activation { kind } => x.iter().zip(gy).map(|(x, g)| g * kind.derivative(*x)).collect(),
        LayerSpec::Flatten => gy.to_vec(),
        LayerSpec::Linear {
            in_dim,
            out_dim,
            has_bias,
        } => {
            let w = params.expect(li, ParamName::Weight).data();
            let (din, dout) = (*in_dim, *out_dim);
            let rows = x.len() / din;
            let mut gx = vec![0.0; x.len()];
            {
                let gw = grad_slot(grads, li, ParamName::Weight);
                for r in 0..rows {
                    let xr = &x[r * din..(r + 1) * din];
                    let gr = &gy[r * dout..(r + 1) * dout];
                    let gxr = &mut gx[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let g = gr[o];
                        if g == 0.0 {
                            continue;
                        }
                        let wr = &w[o * din..(o + 1) * din];
                        let gwr = &mut gw[o * din..(o + 1) * din];
                        for i in 0..din {
                            gwr[i] += g * xr[i];
                            gxr[i] += g * wr[i];
                        }
                    }
                }
            }
            if *has_bias {
                let gb = grad_slot(grads, li, ParamName::Bias);
                for gr in gy.chunks_exact(dout) {
                    for (b, g) in gb.iter_mut().zip(gr) {
                        *b += g;
                    }
                }
            }
            gx
        }
        LayerSpec::Conv { has_bias, .. } => {
            let g = ConvGeom::new(layer, in_shape);
            let w = params.expect(li, ParamName::Weight).data();
            let n_k: usize = g.kernel.iter().product();
            let in_len: usize = in_shape.iter().product();
            let out_len = g.out_spatial.iter().product::<usize>() * g.cout;
            let mut gx = vec![0.0; x.len()];
            for s in 0..batch {
                let xs = &x[s * in_len..(s + 1) * in_len];
                let gys = &gy[s * out_len..(s + 1) * out_len];
                let gxs = &mut gx[s * in_len..(s + 1) * in_len];
                let gw = grad_slot(grads, li, ParamName::Weight);
                g.for_each_tap(|o, k, p| {
                    for co in 0..g.cout {
                        let go = gys[o * g.cout + co];
                        for ci in 0..g.cin {
                            let wi = (co * g.cin + ci) * n_k + k;
                            gw[wi] += go * xs[p * g.cin + ci];
                            gxs[p * g.cin + ci] += go * w[wi];
                        }
                    }
                });
            }
            if *has_bias {
                let gb = grad_slot(grads, li, ParamName::Bias);
                for gr in gy.chunks_exact(g.cout) {
                    for (b, v) in gb.iter_mut().zip(gr) {
                        *b += v;
                    }
                }
            }
            gx
        }
        LayerSpec::DeepSetsLinear {
            in_channels,
            out_channels,
            set_size,
        } => {
            let (cin, cout, n) = (*in_channels, *out_channels, *set_size);
            let w = params.expect(li, ParamName::Weight).data();
            let (w_elem, w_pool) = w.split_at(cin * cout);
            let mut gx = vec![0.0; x.len()];
            for s in 0..batch {
                let xs = &x[s * n * cin..(s + 1) * n * cin];
                let gys = &gy[s * n * cout..(s + 1) * n * cout];
                let mut pooled_x = vec![0.0; cin];
                let mut pooled_g = vec![0.0; cout];
                for r in 0..n {
                    for i in 0..cin {
                        pooled_x[i] += xs[r * cin + i];
                    }
                    for o in 0..cout {
                        pooled_g[o] += gys[r * cout + o];
                    }
                }
                let gw = grad_slot(grads, li, ParamName::Weight);
                for o in 0..cout {
                    for i in 0..cin {
                        let mut acc = 0.0;
                        for r in 0..n {
                            acc += gys[r * cout + o] * xs[r * cin + i];
                        }
                        gw[o * cin + i] += acc;
                        gw[cin * cout + o * cin + i] += pooled_g[o] * pooled_x[i];
                    }
                }
                let gxs = &mut gx[s * n * cin..(s + 1) * n * cin];
                let mut shared = vec![0.0; cin];
                for o in 0..cout {
                    for i in 0..cin {
                        shared[i] += pooled_g[o] * w_pool[o * cin + i];
                    }
                }
                for r in 0..n {
                    for i in 0..cin {
                        let mut acc = shared[i];
                        for o in 0..cout {
                            acc += gys[r * cout + o] * w_elem[o * cin + i];
                        }
                        gxs[r * cin + i] = acc;
                    }
                }
            }
            gx
        }
        _ => unreachable!("rejected by check_differentiable"),
    }
}

fn grad_slot(grads: &mut ParamStore, li: usize, name: ParamName) -> &mut [f64] {
    grads
        .get_mut(&ParamKey::new(li, name))
        .expect("gradient store mirrors the architecture")
        .data_mut()
}
