//! Input-network architectures and their parameters.
//!
//! Activations use a channels-last layout throughout: a dense layer sees
//! `[..., features]`, a convolution sees `[spatial..., channels]`, a DeepSets
//! layer `[set, channels]` and attention `[sequence, model_dim]`. Layers are
//! numbered in pre-order: a `Residual` takes an index and its inner layers
//! follow it, so every layer (nested or not) has a unique index that
//! [`ParamId`]s refer to.

pub(crate) mod forward;
pub mod grad;
mod init;
pub(crate) mod shape;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use forward::{forward, forward_batch};
pub use init::init_params;
pub use shape::{output_shape, validate_arch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    /// `sin(x)`, frequency fixed to 1.
    Sine,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sine => crate::math::sin(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => crate::math::cos(x),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sine => "sine",
            Activation::Identity => "identity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NormKind {
    /// Inference-style batch norm: `gamma * x + beta` per channel.
    Batch,
    /// Normalizes over the feature axis at every position.
    Layer,
    /// Normalizes over all positions of each channel group.
    Group(usize),
}

impl NormKind {
    /// Small integer used in graph features to tell norm families apart.
    pub fn code(self) -> usize {
        match self {
            NormKind::Batch => 0,
            NormKind::Layer => 1,
            NormKind::Group(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Interp {
    #[default]
    Bilinear,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "type", rename_all = "snake_case"))]
pub enum LayerSpec {
    Linear {
        in_dim: usize,
        out_dim: usize,
        has_bias: bool,
    },
    /// Valid (unpadded) convolution with a single stride for every axis.
    Conv {
        spatial_rank: usize,
        in_channels: usize,
        out_channels: usize,
        kernel_shape: Vec<usize>,
        stride: usize,
        has_bias: bool,
    },
    /// `X W1 + 1 1^T X W2` over a set axis.
    DeepSetsLinear {
        in_channels: usize,
        out_channels: usize,
        set_size: usize,
    },
    /// Self-attention over the leading axis. Requires
    /// `num_heads * head_dim == model_dim`.
    MultiHeadAttention {
        model_dim: usize,
        num_heads: usize,
        head_dim: usize,
        has_bias: bool,
    },
    Residual {
        inner: Vec<LayerSpec>,
    },
    Norm {
        kind: NormKind,
        num_features: usize,
    },
    /// Dense 2-D feature grid read at input coordinates in `[0, 1]^2`; the
    /// interpolated features are concatenated with the coordinates.
    SpatialGrid {
        grid_shape: Vec<usize>,
        channels: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        interp: Interp,
    },
    Activation {
        kind: Activation,
    },
    Flatten,
}

impl LayerSpec {
    pub fn linear(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Linear {
            in_dim,
            out_dim,
            has_bias: true,
        }
    }

    pub fn activation(kind: Activation) -> Self {
        LayerSpec::Activation { kind }
    }

    pub fn relu() -> Self {
        Self::activation(Activation::Relu)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::DeepSetsLinear { .. } => "deep_sets_linear",
            LayerSpec::MultiHeadAttention { .. } => "multi_head_attention",
            LayerSpec::Residual { .. } => "residual",
            LayerSpec::Norm { .. } => "norm",
            LayerSpec::SpatialGrid { .. } => "spatial_grid",
            LayerSpec::Activation { .. } => "activation",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Number of pre-order indices this layer occupies (itself plus nested layers).
    pub fn subtree_len(&self) -> usize {
        match self {
            LayerSpec::Residual { inner } => 1 + inner.iter().map(LayerSpec::subtree_len).sum::<usize>(),
            _ => 1,
        }
    }

    /// Parameter tensors owned directly by this layer, in canonical order.
    pub fn param_shapes(&self) -> Vec<(ParamName, Vec<usize>)> {
        match self {
            LayerSpec::Linear {
                in_dim,
                out_dim,
                has_bias,
            } => {
                let mut v = vec![(ParamName::Weight, vec![*out_dim, *in_dim])];
                if *has_bias {
                    v.push((ParamName::Bias, vec![*out_dim]));
                }
                v
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel_shape,
                has_bias,
                ..
            } => {
                let mut shape = vec![*out_channels, *in_channels];
                shape.extend_from_slice(kernel_shape);
                let mut v = vec![(ParamName::Weight, shape)];
                if *has_bias {
                    v.push((ParamName::Bias, vec![*out_channels]));
                }
                v
            }
            LayerSpec::DeepSetsLinear {
                in_channels,
                out_channels,
                ..
            } => vec![(ParamName::Weight, vec![2, *out_channels, *in_channels])],
            LayerSpec::MultiHeadAttention {
                model_dim, has_bias, ..
            } => {
                let mut v = vec![(ParamName::Weight, vec![4, *model_dim, *model_dim])];
                if *has_bias {
                    v.push((ParamName::Bias, vec![4, *model_dim]));
                }
                v
            }
            LayerSpec::Norm { num_features, .. } => vec![
                (ParamName::Gamma, vec![*num_features]),
                (ParamName::Beta, vec![*num_features]),
            ],
            LayerSpec::SpatialGrid {
                grid_shape,
                channels,
                ..
            } => {
                let mut shape = grid_shape.clone();
                shape.push(*channels);
                vec![(ParamName::Grid, shape)]
            }
            LayerSpec::Residual { .. } | LayerSpec::Activation { .. } | LayerSpec::Flatten => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchSpec {
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
}

impl ArchSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self { layers, input_shape }
    }

    /// Plain MLP `widths[0] -> ... -> widths[n-1]` with `act` between layers.
    pub fn mlp(widths: &[usize], act: Activation) -> Self {
        assert!(widths.len() >= 2, "an MLP needs an input and an output width");
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            if i > 0 {
                layers.push(LayerSpec::activation(act));
            }
            layers.push(LayerSpec::linear(w[0], w[1]));
        }
        Self::new(vec![widths[0]], layers)
    }

    /// Total number of pre-order layer indices.
    pub fn layer_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::subtree_len).sum()
    }

    /// All layers with their pre-order indices.
    pub fn indexed_layers(&self) -> Vec<(usize, &LayerSpec)> {
        fn walk<'a>(layers: &'a [LayerSpec], next: &mut usize, out: &mut Vec<(usize, &'a LayerSpec)>) {
            for layer in layers {
                out.push((*next, layer));
                *next += 1;
                if let LayerSpec::Residual { inner } = layer {
                    walk(inner, next, out);
                }
            }
        }
        let mut out = Vec::new();
        let mut next = 0;
        walk(&self.layers, &mut next, &mut out);
        out
    }

    /// Every parameter tensor of the network, in canonical order.
    pub fn param_shapes(&self) -> Vec<(ParamKey, Vec<usize>)> {
        let mut out = Vec::new();
        for (index, layer) in self.indexed_layers() {
            for (name, shape) in layer.param_shapes() {
                out.push((ParamKey::new(index, name), shape));
            }
        }
        out
    }
}

/// Exact scalar parameter count.
pub fn count_params(spec: &ArchSpec) -> usize {
    spec.param_shapes()
        .iter()
        .map(|(_, s)| s.iter().product::<usize>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamName {
    Weight,
    Bias,
    Gamma,
    Beta,
    Grid,
}

impl ParamName {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::Weight => "weight",
            ParamName::Bias => "bias",
            ParamName::Gamma => "gamma",
            ParamName::Beta => "beta",
            ParamName::Grid => "grid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "weight" => ParamName::Weight,
            "bias" => ParamName::Bias,
            "gamma" => ParamName::Gamma,
            "beta" => ParamName::Beta,
            "grid" => ParamName::Grid,
            _ => return None,
        })
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Names one parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamKey {
    pub layer_index: usize,
    pub name: ParamName,
}

impl ParamKey {
    pub fn new(layer_index: usize, name: ParamName) -> Self {
        Self { layer_index, name }
    }

    /// Parses the `"<layer>.<name>"` form produced by `Display`.
    pub fn parse(s: &str) -> Option<Self> {
        let (layer, name) = s.split_once('.')?;
        Some(Self::new(layer.parse().ok()?, ParamName::parse(name)?))
    }
}

impl fmt::Display for ParamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.layer_index, self.name)
    }
}

/// Names one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamId {
    pub layer_index: usize,
    pub name: ParamName,
    pub flat_index: usize,
}

impl ParamId {
    pub fn new(layer_index: usize, name: ParamName, flat_index: usize) -> Self {
        Self {
            layer_index,
            name,
            flat_index,
        }
    }

    pub fn key(&self) -> ParamKey {
        ParamKey::new(self.layer_index, self.name)
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}[{}]", self.layer_index, self.name, self.flat_index)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArchError {
    #[error("architecture has no layers")]
    EmptyArch,
    #[error("layer {layer_index}: expected input shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer_index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {layer_index}: {reason}")]
    InvalidLayer { layer_index: usize, reason: String },
    #[error("missing parameter tensor {0}")]
    MissingParam(ParamKey),
    #[error("unexpected parameter tensor {0}")]
    UnexpectedParam(ParamKey),
    #[error("parameter {key}: expected shape {expected:?}, got {got:?}")]
    ParamShape {
        key: ParamKey,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("layer {layer_index} ({layer}) is not supported by {operation}")]
    Unsupported {
        layer_index: usize,
        layer: &'static str,
        operation: &'static str,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Named parameter tensors of one network.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<ParamKey, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// All-zero store matching `spec`.
    pub fn zeros(spec: &ArchSpec) -> Self {
        let mut store = Self::new();
        for (key, shape) in spec.param_shapes() {
            store.insert(key, Tensor::zeros(&shape));
        }
        store
    }

    /// Builds a store from a flat vector in canonical order.
    pub fn from_flat(spec: &ArchSpec, flat: &[f64]) -> Result<Self, ArchError> {
        let shapes = spec.param_shapes();
        let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if total != flat.len() {
            return Err(TensorError::LengthMismatch {
                shape: vec![total],
                expected: total,
                got: flat.len(),
            }
            .into());
        }
        let mut store = Self::new();
        let mut offset = 0;
        for (key, shape) in shapes {
            let n: usize = shape.iter().product();
            store.insert(key, Tensor::new(shape, flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: ParamKey, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(key, tensor)
    }

    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.tensors.get(key)
    }

    pub fn get_mut(&mut self, key: &ParamKey) -> Option<&mut Tensor> {
        self.tensors.get_mut(key)
    }

    pub(crate) fn expect(&self, layer_index: usize, name: ParamName) -> &Tensor {
        self.tensors
            .get(&ParamKey::new(layer_index, name))
            .expect("parameter store checked against the architecture")
    }

    pub fn value(&self, id: &ParamId) -> Option<f64> {
        self.tensors.get(&id.key()).and_then(|t| t.data().get(id.flat_index).copied())
    }

    pub fn set_value(&mut self, id: &ParamId, value: f64) -> bool {
        match self.tensors.get_mut(&id.key()).and_then(|t| t.data_mut().get_mut(id.flat_index)) {
            Some(slot) => {
                *slot = value;
                true
            }
            None => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Concatenation of all tensors in canonical (key) order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every scalar from `flat` (canonical order).
    pub fn load_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.scalar_count(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors.values_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
    }

    /// Every scalar id in canonical order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for (key, t) in &self.tensors {
            for i in 0..t.len() {
                out.push(ParamId::new(key.layer_index, key.name, i));
            }
        }
        out
    }

    /// Checks keys and shapes against `spec`.
    pub fn check_against(&self, spec: &ArchSpec) -> Result<(), ArchError> {
        let expected = spec.param_shapes();
        for (key, shape) in &expected {
            let t = self.tensors.get(key).ok_or(ArchError::MissingParam(*key))?;
            if t.shape() != shape.as_slice() {
                return Err(ArchError::ParamShape {
                    key: *key,
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        if self.tensors.len() != expected.len() {
            let extra = self
                .tensors
                .keys()
                .find(|k| !expected.iter().any(|(e, _)| e == *k))
                .copied()
                .expect("more tensors than expected implies an unexpected key");
            return Err(ArchError::UnexpectedParam(extra));
        }
        Ok(())
    }
}

/// Offset of every parameter tensor inside the canonical flat vector.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    offsets: BTreeMap<ParamKey, (usize, Vec<usize>)>,
    total: usize,
}

impl ParamLayout {
    pub fn new(spec: &ArchSpec) -> Self {
        let mut offsets = BTreeMap::new();
        let mut total = 0;
        for (key, shape) in spec.param_shapes() {
            let n: usize = shape.iter().product();
            offsets.insert(key, (total, shape));
            total += n;
        }
        Self { offsets, total }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn global_index(&self, id: &ParamId) -> Option<usize> {
        self.offsets.get(&id.key()).map(|(o, _)| o + id.flat_index)
    }

    pub fn shape(&self, key: &ParamKey) -> Option<&[usize]> {
        self.offsets.get(key).map(|(_, s)| s.as_slice())
    }
}


#[cfg(feature = "serde")]
mod serde_impls {
    use alloc::collections::BTreeMap;
    use alloc::string::{String, ToString};

    use serde::de::Error as _;
    use serde::ser::SerializeMap;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::{ParamKey, ParamStore};
    use crate::tensor::Tensor;

    impl Serialize for ParamStore {
        fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
            let mut map = ser.serialize_map(Some(self.len()))?;
            for (k, t) in self.iter() {
                map.serialize_entry(&k.to_string(), t)?;
            }
            map.end()
        }
    }

    impl<'de> Deserialize<'de> for ParamStore {
        fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
            let raw = BTreeMap::<String, Tensor>::deserialize(de)?;
            let mut out = ParamStore::new();
            for (k, t) in raw {
                let key = ParamKey::parse(&k).ok_or_else(|| D::Error::custom(alloc::format!("bad parameter key {k:?}")))?;
                out.insert(key, t);
            }
            Ok(out)
        }
    }
}
