//! Weight editing: `theta' = theta + gamma * metanet(theta)`, supervised
//! through the edited network's outputs.

use alloc::vec;
use alloc::vec::Vec;

use super::{LossKind, TrainError, Trainable};
use crate::arch::grad::{backward, forward_taped};
use crate::arch::{forward_batch, ArchSpec, ParamStore};
use crate::gnn::{forward_metanet, GnnError, GnnModel, GraphInput, Mat, ReadoutKind};
use crate::tensor::Tensor;

pub const GAMMA_INIT: f64 = 0.01;

/// Granularity of the learned output scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GammaMode {
    /// One scale per parameter position of the template architecture.
    #[default]
    PerParameter,
    /// One scale per parameter tensor; keeps the edit equivariant.
    PerTensor,
}

/// One network to edit: its metanet input graph, weights, and the points
/// where the edited function is compared with the target.
#[derive(Debug, Clone, PartialEq)]
pub struct EditItem {
    pub graph: GraphInput,
    pub spec: ArchSpec,
    pub params: ParamStore,
    /// `[points, input dims...]`.
    pub grid: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EditModel {
    pub gnn: GnnModel,
    pub gamma: Vec<f64>,
    pub mode: GammaMode,
    /// Scale index of every parameter, in canonical flat order.
    pub gamma_index: Vec<usize>,
}

impl EditModel {
    /// `gnn` must have a one-output per-edge readout. Every `gamma` starts
    /// at [`GAMMA_INIT`].
    pub fn new(gnn: GnnModel, template: &ArchSpec, mode: GammaMode) -> Result<Self, TrainError> {
        if gnn.readout.kind() != ReadoutKind::PerEdge || gnn.output_dim() != 1 {
            return Err(GnnError::InvalidModel("editing needs a one-output per-edge readout").into());
        }
        let store = ParamStore::zeros(template);
        let mut gamma_index = Vec::with_capacity(store.scalar_count());
        for (t, (_, tensor)) in store.iter().enumerate() {
            for _ in 0..tensor.len() {
                gamma_index.push(match mode {
                    GammaMode::PerParameter => gamma_index.len(),
                    GammaMode::PerTensor => t,
                });
            }
        }
        let n_gamma = gamma_index.iter().max().map_or(0, |m| m + 1);
        Ok(Self {
            gnn,
            gamma: vec![GAMMA_INIT; n_gamma],
            mode,
            gamma_index,
        })
    }

    /// Edited weights for one item.
    pub fn edited_params(&self, item: &EditItem) -> Result<ParamStore, TrainError> {
        let out = forward_metanet(&self.gnn, &item.graph)?;
        self.apply(item, out.values())
    }

    fn apply(&self, item: &EditItem, delta: &[f64]) -> Result<ParamStore, TrainError> {
        let theta = item.params.to_flat();
        if theta.len() != delta.len() || delta.len() != self.gamma_index.len() {
            return Err(TrainError::WeightCount {
                expected: self.gamma_index.len(),
                got: delta.len(),
            });
        }
        let edited: Vec<f64> = theta.iter().zip(delta).zip(&self.gamma_index).map(|((t, d), &k)| t + self.gamma[k] * d).collect();
        Ok(ParamStore::from_flat(&item.spec, &edited)?)
    }
}

impl Trainable for EditModel {
    type Input = EditItem;

    fn to_flat(&self) -> Vec<f64> {
        let mut out = self.gnn.to_flat();
        out.extend_from_slice(&self.gamma);
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let n = self.gnn.num_params();
        self.gnn.set_flat(&flat[..n]);
        self.gamma.copy_from_slice(&flat[n..]);
    }

    fn num_params(&self) -> usize {
        self.gnn.num_params() + self.gamma.len()
    }

    /// The edited network evaluated on the item's grid.
    fn predict(&self, item: &EditItem) -> Result<Vec<f64>, TrainError> {
        let p = self.edited_params(item)?;
        Ok(forward_batch(&item.spec, &p, &item.grid)?.into_data())
    }

    fn item_loss_grad(&self, item: &EditItem, target: &[f64], loss: LossKind) -> Result<(f64, Vec<f64>), TrainError> {
        let (out, cache) = self.gnn.forward_cached(&item.graph)?;
        let delta = out.values();
        let edited = self.apply(item, delta)?;
        let (y, tape) = forward_taped(&item.spec, &edited, &item.grid)?;
        let (l, dy) = loss.value_and_grad(y.data(), target)?;
        let d_theta = backward(&item.spec, &edited, &tape, &dy).to_flat();
        let mut d_gamma = vec![0.0; self.gamma.len()];
        let mut d_delta = Vec::with_capacity(delta.len());
        for ((&g, &k), &d) in d_theta.iter().zip(&self.gamma_index).zip(delta) {
            d_gamma[k] += g * d;
            d_delta.push(g * self.gamma[k]);
        }
        let mut grad = self.gnn.backward_cached(&item.graph, &cache, &Mat::from_vec(d_delta.len(), 1, d_delta));
        grad.extend_from_slice(&d_gamma);
        Ok((l, grad))
    }
}
