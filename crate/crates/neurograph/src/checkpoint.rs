//! Model checkpoints: a JSON header followed by every weight as a
//! little-endian `f64`, in the model's flat order.
//!
//! Layout: 8 magic bytes, header length as little-endian `u64`, header
//! bytes, then `num_params * 8` bytes of weights.

use std::fs;
use std::path::Path;

use neurograph_core::arch::ArchSpec;
use neurograph_core::gnn::{GnnConfig, GnnModel};
use neurograph_core::tasks::{GraphView, TaskKind};
use neurograph_core::train::{EditModel, GammaMode, Trainable};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NGRAPHCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub task: TaskKind,
    pub view: GraphView,
    /// Widths, layer count and readout mode of the metanet.
    pub model: GnnConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditHeader>,
    pub num_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditHeader {
    pub gamma_mode: GammaMode,
    /// Architecture whose parameters the edit scales are laid out for.
    pub template: ArchSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Gmn(GnnModel),
    Edit(EditModel),
}

impl TrainedModel {
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            TrainedModel::Gmn(m) => m.to_flat(),
            TrainedModel::Edit(m) => m.to_flat(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn gmn(task: TaskKind, view: GraphView, config: GnnConfig, model: GnnModel) -> Self {
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            task,
            view,
            model: config,
            edit: None,
            num_params: model.num_params(),
        };
        Self {
            header,
            model: TrainedModel::Gmn(model),
        }
    }

    pub fn edit(view: GraphView, config: GnnConfig, template: ArchSpec, model: EditModel) -> Self {
        let header = CheckpointHeader {
            version: FORMAT_VERSION,
            task: TaskKind::Edit,
            view,
            model: config,
            edit: Some(EditHeader {
                gamma_mode: model.mode,
                template,
            }),
            num_params: model.num_params(),
        };
        Self {
            header,
            model: TrainedModel::Edit(model),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("headers always serialize");
        let flat = self.model.to_flat();
        let mut out = Vec::with_capacity(16 + header.len() + 8 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for w in flat {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Input(format!("checkpoint: {msg}"));
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic bytes"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..).ok_or_else(|| bad("truncated"))?;
        if body.len() < len {
            return Err(bad("truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&body[..len]).map_err(|e| bad(&e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported version {}", header.version)));
        }
        let data = &body[len..];
        if data.len() != 8 * header.num_params {
            return Err(bad(&format!("expected {} weights, found {} bytes", header.num_params, data.len())));
        }
        let flat: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let mut gnn = GnnModel::random(&header.model, 0);
        let model = match &header.edit {
            None => {
                check_count(gnn.num_params(), flat.len())?;
                gnn.set_flat(&flat);
                TrainedModel::Gmn(gnn)
            }
            Some(edit) => {
                let mut m = EditModel::new(gnn, &edit.template, edit.gamma_mode)?;
                check_count(m.num_params(), flat.len())?;
                m.set_flat(&flat);
                TrainedModel::Edit(m)
            }
        };
        Ok(Self { header, model })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn check_count(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Input(format!("checkpoint holds {got} weights but its header describes {expected}")));
    }
    Ok(())
}
