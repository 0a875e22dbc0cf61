//! Training run configuration.
//!
//! Resolution order, later wins: task defaults, the TOML file, flags.
//!
//! ```toml
//! seed = 3
//!
//! [train]
//! epochs = 200
//! batch_size = 16
//! lr = 0.001
//! loss = "mse"          # or "bce_with_sigmoid"
//! optimizer = "adam"    # or "sgd"
//!
//! [model]
//! hidden = 32
//! layers = 3
//! global_dim = 0
//! readout = "edge_mean_pool"   # "per_edge", "global"
//! view = "param"               # "param_undirected", "computation"
//! gamma_mode = "per_parameter" # edit task only; or "per_tensor"
//! ```

use neurograph_core::gnn::{GnnConfig, ReadoutKind};
use neurograph_core::tasks::{GraphView, TaskKind};
use neurograph_core::train::{GammaMode, LossKind, OptimizerName, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: usize,
    pub layers: usize,
    pub global_dim: usize,
    pub readout: ReadoutKind,
    pub view: GraphView,
    pub gamma_mode: GammaMode,
}

/// Fully resolved settings of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelSection,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub loss: Option<LossKind>,
    pub optimizer: Option<OptimizerName>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelOverrides {
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub global_dim: Option<usize>,
    pub readout: Option<ReadoutKind>,
    pub view: Option<GraphView>,
    pub gamma_mode: Option<GammaMode>,
}

/// Partial configuration, as read from a file or assembled from flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub seed: Option<u64>,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub model: ModelOverrides,
}

impl Overrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }
}

macro_rules! apply {
    ($dst:expr, $src:expr, $($field:ident),+) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v; })+
    };
}

impl RunConfig {
    /// Settings that work for each task at desk scale.
    pub fn defaults(task: TaskKind) -> Self {
        let (readout, view, hidden, lr, epochs) = match task {
            TaskKind::Inr => (ReadoutKind::EdgeMeanPool, GraphView::Param, 32, 1e-3, 200),
            TaskKind::Acc => (ReadoutKind::EdgeMeanPool, GraphView::Param, 32, 1e-3, 300),
            TaskKind::Edit => (ReadoutKind::PerEdge, GraphView::ParamUndirected, 16, 1e-2, 500),
        };
        Self {
            task,
            seed: 0,
            train: TrainConfig {
                epochs,
                lr,
                ..TrainConfig::default()
            },
            model: ModelSection {
                hidden,
                layers: 3,
                global_dim: 0,
                readout,
                view,
                gamma_mode: GammaMode::PerParameter,
            },
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        apply!(self.train, o.train, epochs, batch_size, lr, loss, optimizer);
        apply!(self.model, o.model, hidden, layers, global_dim, readout, view, gamma_mode);
        self.train.seed = self.seed;
    }

    /// Defaults, then each layer of overrides in order.
    pub fn resolve(task: TaskKind, layers: &[&Overrides]) -> Result<Self> {
        let mut cfg = Self::defaults(task);
        cfg.train.seed = cfg.seed;
        for o in layers {
            cfg.apply(o);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.train.epochs == 0 {
            return bad("train.epochs must be positive");
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive");
        }
        if !(self.train.lr.is_finite() && self.train.lr >= 0.0) {
            return bad("train.lr must be a finite non-negative number");
        }
        if self.model.hidden == 0 || self.model.layers == 0 {
            return bad("model.hidden and model.layers must be positive");
        }
        if self.model.readout == ReadoutKind::Global && self.model.global_dim == 0 {
            return bad("the global readout needs model.global_dim > 0");
        }
        match (self.task, self.model.readout) {
            (TaskKind::Edit, ReadoutKind::PerEdge) => {}
            (TaskKind::Edit, _) => return bad("the edit task needs the per_edge readout"),
            (_, ReadoutKind::PerEdge) => return bad("per_edge readout only applies to the edit task"),
            _ => {}
        }
        if self.task == TaskKind::Edit && self.model.view == GraphView::Computation {
            return bad("the edit task needs a parameter-graph view");
        }
        Ok(())
    }

    pub fn gnn_config(&self, out_dim: usize) -> GnnConfig {
        GnnConfig {
            hidden: self.model.hidden,
            layers: self.model.layers,
            global_dim: self.model.global_dim,
            readout: self.model.readout,
            out_dim,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_over_defaults() {
        let file = Overrides::from_toml("seed = 4\n[train]\nepochs = 7\nlr = 0.5\n[model]\nhidden = 9\n").unwrap();
        let flags = Overrides {
            train: TrainOverrides {
                lr: Some(0.25),
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = RunConfig::resolve(TaskKind::Inr, &[&file, &flags]).unwrap();
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.epochs, cfg.train.lr, cfg.model.hidden), (4, 4, 7, 0.25, 9));
        assert_eq!(cfg.train.batch_size, RunConfig::defaults(TaskKind::Inr).train.batch_size);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Overrides::from_toml("[train]\nepoch = 3\n").is_err());
        assert!(Overrides::from_toml("colour = 1\n").is_err());
        assert!(Overrides::from_toml("[model]\nreadout = \"sum\"\n").is_err());
        assert_eq!(Overrides::from_toml("[nope]\n").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig::defaults(TaskKind::Edit);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn inconsistent_settings_fail_validation() {
        let o = Overrides::from_toml("[model]\nreadout = \"per_edge\"\n").unwrap();
        assert!(RunConfig::resolve(TaskKind::Acc, &[&o]).is_err());
        let o = Overrides::from_toml("[train]\nbatch_size = 0\n").unwrap();
        assert!(RunConfig::resolve(TaskKind::Inr, &[&o]).is_err());
    }
}
