use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ArchError, ArchSpec, LayerSpec, NormKind};

/// Checks every layer against the shape produced by its predecessor.
pub fn validate_arch(spec: &ArchSpec) -> Result<(), ArchError> {
    output_shape(spec).map(|_| ())
}

/// Shape of the network output, inferred layer by layer.
pub fn output_shape(spec: &ArchSpec) -> Result<Vec<usize>, ArchError> {
    if spec.layers.is_empty() {
        return Err(ArchError::EmptyArch);
    }
    if spec.input_shape.is_empty() || spec.input_shape.contains(&0) {
        return Err(invalid(0, "input shape must be non-empty with positive axes"));
    }
    let mut index = 0;
    infer_seq(&spec.layers, &mut index, spec.input_shape.clone())
}

pub(crate) fn infer_seq(layers: &[LayerSpec], index: &mut usize, mut shape: Vec<usize>) -> Result<Vec<usize>, ArchError> {
    for layer in layers {
        shape = infer_layer(layer, index, shape)?;
    }
    Ok(shape)
}

fn invalid(layer_index: usize, reason: &str) -> ArchError {
    ArchError::InvalidLayer {
        layer_index,
        reason: reason.into(),
    }
}

fn with_last(shape: &[usize], last: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    match s.last_mut() {
        Some(l) => *l = last,
        None => s.push(last),
    }
    s
}

/// Output shape of one layer; advances `index` past the layer and any nested layers.
pub(crate) fn infer_layer(layer: &LayerSpec, index: &mut usize, shape: Vec<usize>) -> Result<Vec<usize>, ArchError> {
    let li = *index;
    *index += 1;
    let mismatch = |expected: Vec<usize>| ArchError::ShapeMismatch {
        layer_index: li,
        expected,
        got: shape.clone(),
    };
    match layer {
        LayerSpec::Linear { in_dim, out_dim, .. } => {
            if *in_dim == 0 || *out_dim == 0 {
                return Err(invalid(li, "linear dimensions must be positive"));
            }
            if shape.last() != Some(in_dim) {
                return Err(mismatch(with_last(&shape, *in_dim)));
            }
            Ok(with_last(&shape, *out_dim))
        }
        LayerSpec::Conv {
            spatial_rank,
            in_channels,
            out_channels,
            kernel_shape,
            stride,
            ..
        } => {
            if !(1..=2).contains(spatial_rank) {
                return Err(invalid(li, "convolution spatial rank must be 1 or 2"));
            }
            if kernel_shape.len() != *spatial_rank {
                return Err(invalid(li, "kernel rank differs from spatial rank"));
            }
            if *in_channels == 0 || *out_channels == 0 || *stride == 0 || kernel_shape.contains(&0) {
                return Err(invalid(li, "convolution sizes must be positive"));
            }
            let ok = shape.len() == spatial_rank + 1
                && shape[*spatial_rank] == *in_channels
                && shape[..*spatial_rank].iter().zip(kernel_shape).all(|(n, k)| n >= k);
            if !ok {
                let mut expected: Vec<usize> = if shape.len() == spatial_rank + 1 {
                    shape[..*spatial_rank]
                        .iter()
                        .zip(kernel_shape)
                        .map(|(n, k)| (*n).max(*k))
                        .collect()
                } else {
                    kernel_shape.clone()
                };
                expected.push(*in_channels);
                return Err(mismatch(expected));
            }
            let mut out: Vec<usize> = shape[..*spatial_rank]
                .iter()
                .zip(kernel_shape)
                .map(|(n, k)| (n - k) / stride + 1)
                .collect();
            out.push(*out_channels);
            Ok(out)
        }
        LayerSpec::DeepSetsLinear {
            in_channels,
            out_channels,
            set_size,
        } => {
            if *in_channels == 0 || *out_channels == 0 || *set_size == 0 {
                return Err(invalid(li, "deep sets sizes must be positive"));
            }
            if shape != [*set_size, *in_channels] {
                return Err(mismatch(vec![*set_size, *in_channels]));
            }
            Ok(vec![*set_size, *out_channels])
        }
        LayerSpec::MultiHeadAttention {
            model_dim,
            num_heads,
            head_dim,
            ..
        } => {
            if *model_dim == 0 || *num_heads == 0 || *head_dim == 0 {
                return Err(invalid(li, "attention sizes must be positive"));
            }
            if num_heads * head_dim != *model_dim {
                return Err(invalid(
                    li,
                    &format!("{num_heads} heads of size {head_dim} do not cover model dimension {model_dim}"),
                ));
            }
            if shape.len() != 2 || shape[1] != *model_dim {
                let seq = if shape.len() == 2 { shape[0] } else { 1 };
                return Err(mismatch(vec![seq, *model_dim]));
            }
            Ok(shape)
        }
        LayerSpec::Residual { inner } => {
            let out = infer_seq(inner, index, shape.clone())?;
            if out != shape {
                return Err(ArchError::ShapeMismatch {
                    layer_index: li,
                    expected: shape,
                    got: out,
                });
            }
            Ok(out)
        }
        LayerSpec::Norm { kind, num_features } => {
            if *num_features == 0 {
                return Err(invalid(li, "norm needs at least one feature"));
            }
            if let NormKind::Group(g) = kind {
                if *g == 0 || num_features % g != 0 {
                    return Err(invalid(li, "group count must divide the number of features"));
                }
            }
            if shape.last() != Some(num_features) {
                return Err(mismatch(with_last(&shape, *num_features)));
            }
            Ok(shape)
        }
        LayerSpec::SpatialGrid {
            grid_shape, channels, ..
        } => {
            if grid_shape.len() != 2 || grid_shape.iter().any(|&g| g < 2) {
                return Err(invalid(li, "grid must be two-dimensional with at least 2 points per axis"));
            }
            if *channels == 0 {
                return Err(invalid(li, "grid needs at least one channel"));
            }
            if shape != [2] {
                return Err(mismatch(vec![2]));
            }
            Ok(vec![channels + 2])
        }
        LayerSpec::Activation { .. } => Ok(shape),
        LayerSpec::Flatten => Ok(vec![shape.iter().product()]),
    }
}
