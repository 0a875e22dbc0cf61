//! Desk-scale datasets of small networks and the metrics used to score
//! metanets on them.
//!
//! Three task families: regressing the `(a, b)` of sinusoid INRs, predicting
//! the held-out accuracy of tiny mixed-architecture classifiers, and editing
//! INRs to double their amplitude.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::arch::{ArchError, ArchSpec, ParamStore};
use crate::gnn::{embed_comp_graph, embed_param_graph, GnnError, GraphInput};
use crate::param_graph::{build_param_graph, ParamGraphError};
use crate::train::{EditItem, TrainError};

mod classifiers;
mod inr;

#[cfg(test)]
mod tests;

pub use classifiers::{gen_tiny_classifiers, gen_tiny_classifiers_with, ArchFamily, ArchPool, ClassifierData, CLASSIFIER_INPUT_DIM};
pub use inr::{
    fit_sinusoid_inr, gen_edit_dataset, gen_edit_dataset_with, gen_sinusoid_inrs, gen_sinusoid_inrs_with, inr_grid, EditDescription, InrFit, DEFAULT_INR_WIDTHS, INR_FIT_GRID, INR_FIT_TOLERANCE,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("prediction and target lengths differ ({pred} vs {target})")]
    LengthMismatch { pred: usize, target: usize },
    #[error("need at least {min} values, got {got}")]
    TooFew { min: usize, got: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(&'static str),
    #[error("non-finite target in item {0}")]
    NonFiniteTarget(usize),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    ParamGraph(#[from] ParamGraphError),
    #[error(transparent)]
    Graph(#[from] crate::compute_graph::CompGraphError),
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<(), TaskError> {
    if pred.len() != target.len() {
        return Err(TaskError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    if pred.len() < 2 {
        return Err(TaskError::TooFew { min: 2, got: pred.len() });
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn eval_r2(pred: &[f64], target: &[f64]) -> Result<f64, TaskError> {
    check_pair(pred, target)?;
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(TaskError::DegenerateTarget);
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Kendall tau-b (tie-corrected). A constant prediction carries no ranking
/// information and scores 0; a constant target is degenerate.
pub fn eval_kendall_tau(pred: &[f64], target: &[f64]) -> Result<f64, TaskError> {
    check_pair(pred, target)?;
    let n = pred.len();
    let (mut concordant, mut discordant, mut tie_pred, mut tie_target) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dp = pred[i] - pred[j];
            let dt = target[i] - target[j];
            if dp == 0.0 {
                tie_pred += 1;
            }
            if dt == 0.0 {
                tie_target += 1;
            }
            if dp != 0.0 && dt != 0.0 {
                if (dp > 0.0) == (dt > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as i64;
    if tie_target == pairs {
        return Err(TaskError::DegenerateTarget);
    }
    if tie_pred == pairs {
        return Ok(0.0);
    }
    let denom = crate::math::sqrt(((pairs - tie_pred) as f64) * ((pairs - tie_target) as f64));
    Ok((concordant - discordant) as f64 / denom)
}

/// Mean squared error over all entries.
pub fn eval_mse(pred: &[f64], target: &[f64]) -> Result<f64, TaskError> {
    if pred.len() != target.len() {
        return Err(TaskError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TaskKind {
    /// Regress `(a, b)` of `x -> a sin(b x)` from INR weights.
    Inr,
    /// Predict held-out classifier accuracy.
    Acc,
    /// Double the amplitude of an INR by editing its weights.
    Edit,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Inr => "inr",
            TaskKind::Acc => "acc",
            TaskKind::Edit => "edit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inr" => Some(TaskKind::Inr),
            "acc" => Some(TaskKind::Acc),
            "edit" => Some(TaskKind::Edit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkItem {
    pub spec: ArchSpec,
    pub params: ParamStore,
    pub target: Vec<f64>,
    /// Generation did not reach its quality bar; kept but excluded from
    /// metrics.
    #[cfg_attr(feature = "serde", serde(default))]
    pub fit_failed: bool,
    /// Architecture family label, for reporting.
    #[cfg_attr(feature = "serde", serde(default))]
    pub family: String,
}

/// Index lists into the item array.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Seeded shuffle, then `train_frac` and `val_frac` of the items in
    /// that order; the rest is test.
    pub fn random(n: usize, train_frac: f64, val_frac: f64, seed: u64) -> Self {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::rng::stream(seed));
        let n_train = libm::round(n as f64 * train_frac) as usize;
        let n_val = (libm::round(n as f64 * val_frac) as usize).min(n - n_train.min(n));
        let n_train = n_train.min(n);
        let mut train = idx[..n_train].to_vec();
        let mut val = idx[n_train..n_train + n_val].to_vec();
        let mut test = idx[n_train + n_val..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        Self { train, val, test }
    }

    /// Disjoint and covering `0..n`.
    pub fn validate(&self, n: usize) -> Result<(), TaskError> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(TaskError::InvalidSplit("index out of range"));
            }
            if seen[i] {
                return Err(TaskError::InvalidSplit("index listed twice"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(TaskError::InvalidSplit("split does not cover every item"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkDataset {
    pub task: TaskKind,
    pub items: Vec<NetworkItem>,
    pub split: Split,
    pub seed: u64,
}

/// How a network is presented to a graph metanet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GraphView {
    /// Parameter graph with messages along the network's direction.
    #[default]
    Param,
    /// Parameter graph with a backward copy of every edge.
    ParamUndirected,
    Computation,
}

pub fn graph_input(spec: &ArchSpec, params: &ParamStore, view: GraphView) -> Result<GraphInput, TaskError> {
    Ok(match view {
        GraphView::Param => embed_param_graph(&build_param_graph(spec, params)?),
        GraphView::ParamUndirected => embed_param_graph(&build_param_graph(spec, params)?).undirected(),
        GraphView::Computation => embed_comp_graph(&crate::compute_graph::build_computation_graph(spec, params)?),
    })
}

impl NetworkDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        self.split.validate(self.items.len())?;
        for (i, it) in self.items.iter().enumerate() {
            if it.target.iter().any(|t| !t.is_finite()) {
                return Err(TaskError::NonFiniteTarget(i));
            }
        }
        Ok(())
    }

    /// Items of `indices` that are usable for metrics (fit succeeded).
    pub fn usable<'a>(&'a self, indices: &'a [usize]) -> impl Iterator<Item = &'a NetworkItem> + 'a {
        indices.iter().map(|&i| &self.items[i]).filter(|it| !it.fit_failed)
    }

    /// `(graph, target)` pairs for a graph metanet.
    pub fn graph_items(&self, indices: &[usize], view: GraphView) -> Result<Vec<(GraphInput, Vec<f64>)>, TaskError> {
        self.usable(indices).map(|it| Ok((graph_input(&it.spec, &it.params, view)?, it.target.clone()))).collect()
    }

    /// `(flat parameter vector, target)` pairs for the baselines; the
    /// DeepSets baseline reads the vector as a multiset.
    pub fn flat_items(&self, indices: &[usize]) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.usable(indices).map(|it| (it.params.to_flat(), it.target.clone())).collect()
    }

    /// Longest flat parameter vector in the dataset.
    pub fn max_param_count(&self) -> usize {
        self.items.iter().map(|it| it.params.scalar_count()).max().unwrap_or(0)
    }

    /// Edit-task items: the grid is shared, targets are the scaled source
    /// function on it.
    pub fn edit_items(&self, indices: &[usize], grid: &[f64], view: GraphView) -> Result<Vec<(EditItem, Vec<f64>)>, TaskError> {
        let grid = crate::tensor::Tensor::new(vec![grid.len(), 1], grid.to_vec()).map_err(|_| TaskError::InvalidSplit("grid"))?;
        self.usable(indices)
            .map(|it| {
                Ok((
                    EditItem {
                        graph: graph_input(&it.spec, &it.params, view)?,
                        spec: it.spec.clone(),
                        params: it.params.clone(),
                        grid: grid.clone(),
                    },
                    it.target.clone(),
                ))
            })
            .collect()
    }
}
