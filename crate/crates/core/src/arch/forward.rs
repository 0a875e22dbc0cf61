use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, floor, sqrt};
use crate::tensor::{strides, unravel, Tensor};

use super::shape::{infer_layer, output_shape};
use super::{ArchError, ArchSpec, LayerSpec, NormKind, ParamName, ParamStore};

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Reference evaluation of the network on one input of shape `spec.input_shape`.
pub fn forward(spec: &ArchSpec, params: &ParamStore, x: &Tensor) -> Result<Tensor, ArchError> {
    check_input(spec, params, x.shape())?;
    let out_shape = output_shape(spec)?;
    let (y, _) = run_seq(&spec.layers, 0, params, x.data().to_vec(), 1, x.shape(), None);
    Ok(Tensor::from_parts_unchecked(out_shape, y))
}

/// Evaluates a stack of inputs of shape `[batch, input_shape...]`.
pub fn forward_batch(spec: &ArchSpec, params: &ParamStore, xs: &Tensor) -> Result<Tensor, ArchError> {
    let (batch, sample_shape) = split_batch(xs)?;
    check_input(spec, params, sample_shape)?;
    let mut out_shape = output_shape(spec)?;
    let (y, _) = run_seq(&spec.layers, 0, params, xs.data().to_vec(), batch, sample_shape, None);
    out_shape.insert(0, batch);
    Ok(Tensor::from_parts_unchecked(out_shape, y))
}

pub(crate) fn split_batch(xs: &Tensor) -> Result<(usize, &[usize]), ArchError> {
    match xs.shape().split_first() {
        Some((b, rest)) if !rest.is_empty() => Ok((*b, rest)),
        _ => Err(ArchError::ShapeMismatch {
            layer_index: 0,
            expected: vec![1, 1],
            got: xs.shape().to_vec(),
        }),
    }
}

pub(crate) fn check_input(spec: &ArchSpec, params: &ParamStore, shape: &[usize]) -> Result<(), ArchError> {
    output_shape(spec)?;
    params.check_against(spec)?;
    if shape != spec.input_shape.as_slice() {
        return Err(ArchError::ShapeMismatch {
            layer_index: 0,
            expected: spec.input_shape.clone(),
            got: shape.to_vec(),
        });
    }
    Ok(())
}

/// Inputs recorded during a taped forward pass, mirroring the layer tree.
#[derive(Debug, Clone)]
pub(crate) enum Record {
    Leaf { input: Vec<f64>, shape: Vec<usize> },
    Residual { inner: Vec<Record> },
}

/// Runs `layers` (whose first pre-order index is `first`) on a batch.
/// Returns the output and its per-sample shape.
pub(crate) fn run_seq(
    layers: &[LayerSpec],
    first: usize,
    params: &ParamStore,
    mut x: Vec<f64>,
    batch: usize,
    shape: &[usize],
    mut tape: Option<&mut Vec<Record>>,
) -> (Vec<f64>, Vec<usize>) {
    let mut shape = shape.to_vec();
    let mut index = first;
    for layer in layers {
        let li = index;
        let mut next = index;
        let out_shape = infer_layer(layer, &mut next, shape.clone()).expect("architecture validated before evaluation");
        let y = match layer {
            LayerSpec::Residual { inner } => {
                let mut inner_tape = Vec::new();
                let (mut y, _) = run_seq(
                    inner,
                    li + 1,
                    params,
                    x.clone(),
                    batch,
                    &shape,
                    tape.as_ref().map(|_| &mut inner_tape),
                );
                for (a, b) in y.iter_mut().zip(&x) {
                    *a += b;
                }
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Record::Residual { inner: inner_tape });
                }
                y
            }
            _ => {
                let y = layer_forward(layer, li, params, &x, batch, &shape, &out_shape);
                if let Some(t) = tape.as_deref_mut() {
                    t.push(Record::Leaf {
                        input: core::mem::take(&mut x),
                        shape: shape.clone(),
                    });
                }
                y
            }
        };
        x = y;
        shape = out_shape;
        index = next;
    }
    (x, shape)
}

fn layer_forward(
    layer: &LayerSpec,
    li: usize,
    params: &ParamStore,
    x: &[f64],
    batch: usize,
    in_shape: &[usize],
    out_shape: &[usize],
) -> Vec<f64> {
    let in_len: usize = in_shape.iter().product();
    let out_len: usize = out_shape.iter().product();
    match layer {
        LayerSpec::Linear { in_dim, out_dim, .. } => {
            let w = params.expect(li, ParamName::Weight).data();
            let b = bias(params, li);
            linear(w, b, x, *in_dim, *out_dim)
        }
        LayerSpec::Activation { kind } => x.iter().map(|v| kind.apply(*v)).collect(),
        LayerSpec::Flatten => x.to_vec(),
        LayerSpec::Residual { .. } => unreachable!("handled by run_seq"),
        _ => {
            let mut y = vec![0.0; batch * out_len];
            for (xs, ys) in x.chunks_exact(in_len).zip(y.chunks_exact_mut(out_len)) {
                sample_forward(layer, li, params, xs, in_shape, ys);
            }
            y
        }
    }
}

fn bias(params: &ParamStore, li: usize) -> Option<&[f64]> {
    params
        .get(&super::ParamKey::new(li, ParamName::Bias))
        .map(Tensor::data)
}

/// Dense map over the last axis; `x` holds any number of rows of width `din`.
pub(crate) fn linear(w: &[f64], b: Option<&[f64]>, x: &[f64], din: usize, dout: usize) -> Vec<f64> {
    let rows = x.len() / din;
    let mut y = vec![0.0; rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let wr = &w[o * din..(o + 1) * din];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for i in 0..din {
                acc += wr[i] * xr[i];
            }
            y[r * dout + o] = acc;
        }
    }
    y
}

/// Geometry shared by the convolution forward and backward passes.
pub(crate) struct ConvGeom {
    pub in_spatial: Vec<usize>,
    pub out_spatial: Vec<usize>,
    pub kernel: Vec<usize>,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
}

impl ConvGeom {
    pub fn new(layer: &LayerSpec, in_shape: &[usize]) -> Self {
        let LayerSpec::Conv {
            spatial_rank,
            in_channels,
            out_channels,
            kernel_shape,
            stride,
            ..
        } = layer
        else {
            unreachable!("conv geometry of a non-conv layer")
        };
        let in_spatial = in_shape[..*spatial_rank].to_vec();
        let out_spatial = in_spatial
            .iter()
            .zip(kernel_shape)
            .map(|(n, k)| (n - k) / stride + 1)
            .collect();
        Self {
            in_spatial,
            out_spatial,
            kernel: kernel_shape.clone(),
            stride: *stride,
            cin: *in_channels,
            cout: *out_channels,
        }
    }

    /// Calls `f(out_position, kernel_offset, in_position)` for every tap.
    pub fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let in_strides = strides(&self.in_spatial);
        let n_out: usize = self.out_spatial.iter().product();
        let n_k: usize = self.kernel.iter().product();
        for o in 0..n_out {
            let oi = unravel(o, &self.out_spatial);
            for k in 0..n_k {
                let ki = unravel(k, &self.kernel);
                let pos: usize = oi
                    .iter()
                    .zip(&ki)
                    .zip(&in_strides)
                    .map(|((o, k), s)| (o * self.stride + k) * s)
                    .sum();
                f(o, k, pos);
            }
        }
    }
}

fn sample_forward(layer: &LayerSpec, li: usize, params: &ParamStore, x: &[f64], in_shape: &[usize], y: &mut [f64]) {
    match layer {
        LayerSpec::Conv { .. } => {
            let g = ConvGeom::new(layer, in_shape);
            let w = params.expect(li, ParamName::Weight).data();
            let n_k: usize = g.kernel.iter().product();
            if let Some(b) = bias(params, li) {
                for ys in y.chunks_exact_mut(g.cout) {
                    ys.copy_from_slice(b);
                }
            }
            g.for_each_tap(|o, k, p| {
                for co in 0..g.cout {
                    let mut acc = 0.0;
                    for ci in 0..g.cin {
                        acc += w[(co * g.cin + ci) * n_k + k] * x[p * g.cin + ci];
                    }
                    y[o * g.cout + co] += acc;
                }
            });
        }
        LayerSpec::DeepSetsLinear {
            in_channels,
            out_channels,
            ..
        } => {
            let (cin, cout) = (*in_channels, *out_channels);
            let w = params.expect(li, ParamName::Weight).data();
            let (w_elem, w_pool) = w.split_at(cin * cout);
            let mut pooled = vec![0.0; cin];
            for row in x.chunks_exact(cin) {
                for (p, v) in pooled.iter_mut().zip(row) {
                    *p += v;
                }
            }
            let shared = linear(w_pool, None, &pooled, cin, cout);
            let elem = linear(w_elem, None, x, cin, cout);
            for (r, ys) in y.chunks_exact_mut(cout).enumerate() {
                for o in 0..cout {
                    ys[o] = elem[r * cout + o] + shared[o];
                }
            }
        }
        LayerSpec::MultiHeadAttention {
            model_dim,
            num_heads,
            head_dim,
            ..
        } => attention(params, li, x, *model_dim, *num_heads, *head_dim, y),
        LayerSpec::Norm { kind, num_features } => {
            let c = *num_features;
            let gamma = params.expect(li, ParamName::Gamma).data();
            let beta = params.expect(li, ParamName::Beta).data();
            match kind {
                NormKind::Batch => {
                    for (xs, ys) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
                        for i in 0..c {
                            ys[i] = gamma[i] * xs[i] + beta[i];
                        }
                    }
                }
                NormKind::Layer => {
                    for (xs, ys) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
                        let (m, s) = moments(xs.iter().copied());
                        for i in 0..c {
                            ys[i] = (xs[i] - m) / s * gamma[i] + beta[i];
                        }
                    }
                }
                NormKind::Group(groups) => {
                    let per = c / groups;
                    for gi in 0..*groups {
                        let members = || {
                            x.chunks_exact(c)
                                .flat_map(move |row| row[gi * per..(gi + 1) * per].iter().copied())
                        };
                        let (m, s) = moments(members());
                        for (xs, ys) in x.chunks_exact(c).zip(y.chunks_exact_mut(c)) {
                            for i in gi * per..(gi + 1) * per {
                                ys[i] = (xs[i] - m) / s * gamma[i] + beta[i];
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::SpatialGrid {
            grid_shape, channels, ..
        } => {
            let grid = params.expect(li, ParamName::Grid).data();
            let c = *channels;
            for (corner, weight) in bilinear_corners(grid_shape, x) {
                for ch in 0..c {
                    y[ch] += weight * grid[corner * c + ch];
                }
            }
            y[c] = x[0];
            y[c + 1] = x[1];
        }
        _ => unreachable!("layer handled without a per-sample loop"),
    }
}

/// Mean and `sqrt(var + eps)` of a sequence.
fn moments(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let m = values.clone().sum::<f64>() / n;
    let v = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, sqrt(v + NORM_EPS))
}

/// Flat grid-cell indices and interpolation weights for a point in `[0,1]^2`.
pub(crate) fn bilinear_corners(grid_shape: &[usize], x: &[f64]) -> [(usize, f64); 4] {
    let mut base = [0usize; 2];
    let mut frac = [0f64; 2];
    for a in 0..2 {
        let n = grid_shape[a];
        let p = x[a].clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (floor(p) as usize).min(n - 2);
        base[a] = i;
        frac[a] = p - i as f64;
    }
    let cols = grid_shape[1];
    let at = |i: usize, j: usize| (base[0] + i) * cols + base[1] + j;
    [
        (at(0, 0), (1.0 - frac[0]) * (1.0 - frac[1])),
        (at(0, 1), (1.0 - frac[0]) * frac[1]),
        (at(1, 0), frac[0] * (1.0 - frac[1])),
        (at(1, 1), frac[0] * frac[1]),
    ]
}

fn attention(params: &ParamStore, li: usize, x: &[f64], d: usize, heads: usize, hd: usize, y: &mut [f64]) {
    let w = params.expect(li, ParamName::Weight).data();
    let b = bias(params, li);
    let proj = |k: usize, input: &[f64]| {
        linear(&w[k * d * d..(k + 1) * d * d], b.map(|b| &b[k * d..(k + 1) * d]), input, d, d)
    };
    let q = proj(0, x);
    let k = proj(1, x);
    let v = proj(2, x);
    let t = x.len() / d;
    let scale = 1.0 / sqrt(hd as f64);
    let mut z = vec![0.0; t * d];
    let mut scores = vec![0.0; t];
    for h in 0..heads {
        let cols = h * hd..(h + 1) * hd;
        for i in 0..t {
            let mut max = f64::NEG_INFINITY;
            for (j, s) in scores.iter_mut().enumerate() {
                *s = cols.clone().map(|c| q[i * d + c] * k[j * d + c]).sum::<f64>() * scale;
                max = max.max(*s);
            }
            let mut total = 0.0;
            for s in scores.iter_mut() {
                *s = exp(*s - max);
                total += *s;
            }
            for c in cols.clone() {
                z[i * d + c] = scores.iter().enumerate().map(|(j, s)| s * v[j * d + c]).sum::<f64>() / total;
            }
        }
    }
    y.copy_from_slice(&proj(3, &z));
}
