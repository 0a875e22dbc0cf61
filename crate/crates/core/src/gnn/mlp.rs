use alloc::vec;
use alloc::vec::Vec;

use super::mat::Mat;
use crate::rng::{uniform, Rng};

/// Per-unit nonlinearity. Trained models only use `Relu` and `Identity`;
/// `Square` and `Reciprocal` let the constructive models compute products
/// and ratios exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Act {
    Relu,
    Identity,
    Square,
    Reciprocal,
}

impl Act {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Act::Relu => z.max(0.0),
            Act::Identity => z,
            Act::Square => z * z,
            Act::Reciprocal => 1.0 / z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Act::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Act::Identity => 1.0,
            Act::Square => 2.0 * z,
            Act::Reciprocal => -1.0 / (z * z),
        }
    }
}

/// Affine map followed by per-unit activations.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dense {
    /// `out x in`.
    pub w: Mat,
    pub b: Vec<f64>,
    pub acts: Vec<Act>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize, act: Act) -> Self {
        Self {
            w: Mat::zeros(output, input),
            b: vec![0.0; output],
            acts: vec![act; output],
        }
    }

    /// Uniform in `+-1/sqrt(input)` for weights and biases.
    pub fn random(input: usize, output: usize, act: Act, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(input.max(1) as f64);
        let mut d = Self::zeros(input, output, act);
        for w in d.w.data_mut() {
            *w = uniform(rng, -bound, bound);
        }
        for b in &mut d.b {
            *b = uniform(rng, -bound, bound);
        }
        d
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    /// Pre-activations `x W^T + b`.
    pub(crate) fn affine(&self, x: &Mat) -> Mat {
        let (n, din, dout) = (x.rows(), self.input_dim(), self.output_dim());
        debug_assert_eq!(x.cols(), din);
        let mut z = Mat::zeros(n, dout);
        for r in 0..n {
            let xr = x.row(r);
            let zr = z.row_mut(r);
            for (o, zo) in zr.iter_mut().enumerate() {
                let wr = self.w.row(o);
                let mut s = 0.0;
                for k in 0..din {
                    s += xr[k] * wr[k];
                }
                *zo = s + self.b[o];
            }
        }
        z
    }

    pub(crate) fn activate(&self, z: &Mat) -> Mat {
        let mut a = z.clone();
        let cols = a.cols();
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v = self.acts[i % cols].apply(*v);
        }
        a
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        self.activate(&self.affine(x))
    }

    pub fn num_params(&self) -> usize {
        self.w.data().len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Inputs and pre-activations of every layer, for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct MlpCache {
    pub inputs: Vec<Mat>,
    pub pre: Vec<Mat>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Self {
        Self { layers }
    }

    /// ReLU between layers, linear output. `dims` lists every width
    /// including input and output.
    pub fn relu(dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output widths");
        let last = dims.len() - 2;
        Self {
            layers: dims
                .windows(2)
                .enumerate()
                .map(|(i, w)| Dense::random(w[0], w[1], if i == last { Act::Identity } else { Act::Relu }, rng))
                .collect(),
        }
    }

    /// Single linear layer with all-zero weights.
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            layers: vec![Dense::zeros(input, output, Act::Identity)],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let out = self.forward(&Mat::from_vec(1, x.len(), x.to_vec()));
        out.data().to_vec()
    }

    pub(crate) fn forward_cached(&self, x: &Mat) -> (Mat, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.clone();
        for layer in &self.layers {
            let z = layer.affine(&h);
            let a = layer.activate(&z);
            cache.inputs.push(h);
            cache.pre.push(z);
            h = a;
        }
        (h, cache)
    }

    /// Chain-compatible widths.
    pub fn is_well_formed(&self) -> bool {
        !self.layers.is_empty()
            && self.layers.iter().all(|l| l.b.len() == l.output_dim() && l.acts.len() == l.output_dim())
            && self.layers.windows(2).all(|w| w[0].output_dim() == w[1].input_dim())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }
}
