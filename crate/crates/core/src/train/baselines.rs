//! Comparison metanets that ignore graph structure.

use alloc::vec;
use alloc::vec::Vec;

use super::backward::mlp_backward;
use super::{LossKind, TrainError, Trainable};
use crate::gnn::{Mat, Mlp};
use crate::rng::stream;

fn mlp_to_flat(m: &Mlp, out: &mut Vec<f64>) {
    for d in &m.layers {
        out.extend_from_slice(d.w.data());
        out.extend_from_slice(&d.b);
    }
}

fn mlp_set_flat(m: &mut Mlp, flat: &[f64]) -> usize {
    let mut at = 0;
    for d in &mut m.layers {
        let n = d.w.data().len();
        d.w.data_mut().copy_from_slice(&flat[at..at + n]);
        at += n;
        let k = d.b.len();
        d.b.copy_from_slice(&flat[at..at + k]);
        at += k;
    }
    at
}

/// DeepSets over the multiset of parameter values: a per-element MLP,
/// mean pooling, then a head. Sees values only, not where they sit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeepSetsBaseline {
    pub element: Mlp,
    pub head: Mlp,
}

impl DeepSetsBaseline {
    pub fn new(hidden: usize, layers: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed);
        let mut dims = vec![1];
        dims.extend(core::iter::repeat_n(hidden, layers.max(1)));
        let element = Mlp::relu(&dims, &mut rng);
        let head = Mlp::relu(&[hidden, hidden, out_dim], &mut rng);
        Self { element, head }
    }
}

impl Trainable for DeepSetsBaseline {
    type Input = Vec<f64>;

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        mlp_to_flat(&self.element, &mut out);
        mlp_to_flat(&self.head, &mut out);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let at = mlp_set_flat(&mut self.element, flat);
        mlp_set_flat(&mut self.head, &flat[at..]);
    }

    fn predict(&self, x: &Vec<f64>) -> Result<Vec<f64>, TrainError> {
        let h = self.element.forward(&Mat::from_vec(x.len(), 1, x.clone()));
        let mut pooled = h.column_sums();
        let n = x.len().max(1) as f64;
        pooled.iter_mut().for_each(|p| *p /= n);
        Ok(self.head.forward_vec(&pooled))
    }

    fn item_loss_grad(&self, x: &Vec<f64>, target: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>), TrainError> {
        let (h, ec) = self.element.forward_cached(&Mat::from_vec(x.len(), 1, x.clone()));
        let n = x.len().max(1) as f64;
        let mut pooled = h.column_sums();
        pooled.iter_mut().for_each(|p| *p /= n);
        let (y, hc) = self.head.forward_cached(&Mat::from_vec(1, pooled.len(), pooled));
        let (l, dy) = loss.value_and_grad(y.data(), target)?;
        let n_elem = self.element.num_params();
        let mut grad = vec![0.0; n_elem + self.head.num_params()];
        let (ge, gh) = grad.split_at_mut(n_elem);
        let dp = mlp_backward(&self.head, &hc, &Mat::from_vec(1, dy.len(), dy), gh);
        let mut dh = Mat::zeros(h.rows(), h.cols());
        for r in 0..h.rows() {
            for (a, b) in dh.row_mut(r).iter_mut().zip(dp.row(0)) {
                *a = b / n;
            }
        }
        mlp_backward(&self.element, &ec, &dh, ge);
        Ok((l, grad))
    }
}

/// Zero-pads or truncates to `len`.
pub fn pad_to(values: &[f64], len: usize) -> Vec<f64> {
    let mut out = values.iter().copied().take(len).collect::<Vec<_>>();
    out.resize(len, 0.0);
    out
}

/// MLP on the flattened parameter vector, padded to a fixed length.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlatMlpBaseline {
    pub mlp: Mlp,
}

impl FlatMlpBaseline {
    pub fn new(input_dim: usize, hidden: usize, out_dim: usize, seed: u64) -> Self {
        Self {
            mlp: Mlp::relu(&[input_dim, hidden, hidden, out_dim], &mut stream(seed)),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }
}

impl Trainable for FlatMlpBaseline {
    type Input = Vec<f64>;

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        mlp_to_flat(&self.mlp, &mut out);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        mlp_set_flat(&mut self.mlp, flat);
    }

    fn predict(&self, x: &Vec<f64>) -> Result<Vec<f64>, TrainError> {
        Ok(self.mlp.forward_vec(&pad_to(x, self.input_dim())))
    }

    fn item_loss_grad(&self, x: &Vec<f64>, target: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>), TrainError> {
        let input = pad_to(x, self.input_dim());
        let (y, c) = self.mlp.forward_cached(&Mat::from_vec(1, input.len(), input));
        let (l, dy) = loss.value_and_grad(y.data(), target)?;
        let mut grad = vec![0.0; self.mlp.num_params()];
        mlp_backward(&self.mlp, &c, &Mat::from_vec(1, dy.len(), dy), &mut grad);
        Ok((l, grad))
    }
}
