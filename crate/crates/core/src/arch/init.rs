use crate::rng::{stream, uniform};
use crate::tensor::Tensor;

use super::{ArchSpec, LayerSpec, ParamKey, ParamName, ParamStore};

fn fan_in(layer: &LayerSpec) -> usize {
    match layer {
        LayerSpec::Linear { in_dim, .. } => *in_dim,
        LayerSpec::Conv {
            in_channels,
            kernel_shape,
            ..
        } => in_channels * kernel_shape.iter().product::<usize>(),
        LayerSpec::DeepSetsLinear { in_channels, .. } => *in_channels,
        LayerSpec::MultiHeadAttention { model_dim, .. } => *model_dim,
        _ => 1,
    }
}

/// Seeded initialization: weights and grids uniform in `±1/sqrt(fan_in)`,
/// biases zero, norm scale one and shift zero.
pub fn init_params(spec: &ArchSpec, seed: u64) -> ParamStore {
    let mut rng = stream(seed);
    let mut store = ParamStore::new();
    for (index, layer) in spec.indexed_layers() {
        let bound = 1.0 / crate::math::sqrt(fan_in(layer) as f64);
        for (name, shape) in layer.param_shapes() {
            let tensor = match name {
                ParamName::Weight | ParamName::Grid => {
                    let mut t = Tensor::zeros(&shape);
                    for v in t.data_mut() {
                        *v = uniform(&mut rng, -bound, bound);
                    }
                    t
                }
                ParamName::Bias | ParamName::Beta => Tensor::zeros(&shape),
                ParamName::Gamma => Tensor::filled(&shape, 1.0),
            };
            store.insert(ParamKey::new(index, name), tensor);
        }
    }
    store
}
