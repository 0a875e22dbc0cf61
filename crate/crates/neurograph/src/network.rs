//! Network documents: an architecture plus, optionally, its parameters.
//!
//! ```json
//! {"layers": [{"type": "linear", "in_dim": 2, "out_dim": 3, "has_bias": true}],
//!  "input_shape": [2],
//!  "params": {"0.weight": {"shape": [3, 2], "data": [...]}, "0.bias": {...}}}
//! ```

use std::fs;
use std::path::Path;

use neurograph_core::arch::{init_params, validate_arch, ArchSpec, LayerSpec, ParamStore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDoc {
    pub layers: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<ParamStore>,
}

impl NetworkDoc {
    pub fn new(spec: &ArchSpec, params: Option<&ParamStore>) -> Self {
        Self {
            layers: spec.layers.clone(),
            input_shape: spec.input_shape.clone(),
            params: params.cloned(),
        }
    }

    pub fn spec(&self) -> ArchSpec {
        ArchSpec::new(self.input_shape.clone(), self.layers.clone())
    }

    /// Validated architecture and parameters. Missing parameters are drawn
    /// with `init_params(spec, seed)`.
    pub fn resolve(&self, seed: u64) -> Result<(ArchSpec, ParamStore)> {
        let spec = self.spec();
        validate_arch(&spec)?;
        let params = match &self.params {
            Some(p) => {
                p.check_against(&spec)?;
                p.clone()
            }
            None => init_params(&spec, seed),
        };
        Ok((spec, params))
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network documents always serialize")
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_network(path: &Path) -> Result<NetworkDoc> {
    NetworkDoc::from_json(&read_text(path)?, path)
}

pub fn write_network(path: &Path, spec: &ArchSpec, params: &ParamStore) -> Result<()> {
    write_text(path, &NetworkDoc::new(spec, Some(params)).to_json())
}
