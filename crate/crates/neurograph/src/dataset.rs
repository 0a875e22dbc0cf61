//! Dataset directories: one network document per item under `items/`, plus
//! `manifest.json` with targets, split, seed and generator settings.

use std::path::Path;

use neurograph_core::exec::Executor;
use neurograph_core::tasks::{
    gen_edit_dataset_with, gen_sinusoid_inrs_with, gen_tiny_classifiers_with, ArchPool, EditDescription, NetworkDataset, NetworkItem, Split,
    TaskKind, DEFAULT_INR_WIDTHS,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{read_network, read_text, write_network, write_text};

pub const MANIFEST: &str = "manifest.json";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n: usize,
    /// Layer widths of generated INRs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<ArchPool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<EditDescription>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub file: String,
    pub target: Vec<f64>,
    #[serde(default)]
    pub fit_failed: bool,
    #[serde(default)]
    pub family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub task: TaskKind,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub split: Split,
    pub items: Vec<ManifestItem>,
}

/// A dataset together with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDataset {
    pub dataset: NetworkDataset,
    pub generator: GeneratorConfig,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenOptions {
    pub widths: Option<Vec<usize>>,
    pub pool: Option<ArchPool>,
}

pub fn generate<E: Executor>(task: TaskKind, n: usize, seed: u64, opts: &GenOptions, exec: &E) -> Result<StoredDataset> {
    let widths = opts.widths.clone().unwrap_or_else(|| DEFAULT_INR_WIDTHS.to_vec());
    let (dataset, generator) = match task {
        TaskKind::Inr => (
            gen_sinusoid_inrs_with(n, seed, &widths, exec)?,
            GeneratorConfig {
                n,
                widths: Some(widths),
                pool: None,
                edit: None,
            },
        ),
        TaskKind::Edit => {
            let (ds, desc) = gen_edit_dataset_with(n, seed, &widths, exec)?;
            (
                ds,
                GeneratorConfig {
                    n,
                    widths: Some(widths),
                    pool: None,
                    edit: Some(desc),
                },
            )
        }
        TaskKind::Acc => {
            let pool = opts.pool.clone().unwrap_or_default();
            (
                gen_tiny_classifiers_with(n, seed, &pool, exec)?,
                GeneratorConfig {
                    n,
                    widths: None,
                    pool: Some(pool),
                    edit: None,
                },
            )
        }
    };
    Ok(StoredDataset { dataset, generator })
}

fn item_file(i: usize) -> String {
    format!("items/{i:05}.json")
}

pub fn write_dataset(dir: &Path, stored: &StoredDataset) -> Result<()> {
    let ds = &stored.dataset;
    let mut items = Vec::with_capacity(ds.items.len());
    for (i, it) in ds.items.iter().enumerate() {
        let file = item_file(i);
        write_network(&dir.join(&file), &it.spec, &it.params)?;
        items.push(ManifestItem {
            file,
            target: it.target.clone(),
            fit_failed: it.fit_failed,
            family: it.family.clone(),
        });
    }
    let manifest = Manifest {
        version: DATASET_VERSION,
        task: ds.task,
        seed: ds.seed,
        generator: stored.generator.clone(),
        split: ds.split.clone(),
        items,
    };
    write_text(&dir.join(MANIFEST), &serde_json::to_string_pretty(&manifest).expect("manifests always serialize"))
}

pub fn read_dataset(dir: &Path) -> Result<StoredDataset> {
    if !dir.is_dir() {
        return Err(Error::Input(format!("{} is not a dataset directory", dir.display())));
    }
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::Input(format!("{} has no {MANIFEST}", dir.display())));
    }
    let manifest: Manifest = serde_json::from_str(&read_text(&path)?).map_err(|e| Error::json(&path, e))?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Input(format!("unsupported dataset version {}", manifest.version)));
    }
    let mut items = Vec::with_capacity(manifest.items.len());
    for m in &manifest.items {
        let file = Path::new(&m.file);
        if file.is_absolute() || file.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return Err(Error::Input(format!("item path {:?} escapes the dataset directory", m.file)));
        }
        let doc = read_network(&dir.join(file))?;
        if doc.params.is_none() {
            return Err(Error::Input(format!("{} has no parameters", m.file)));
        }
        let (spec, params) = doc.resolve(0)?;
        items.push(NetworkItem {
            spec,
            params,
            target: m.target.clone(),
            fit_failed: m.fit_failed,
            family: m.family.clone(),
        });
    }
    let dataset = NetworkDataset {
        task: manifest.task,
        items,
        split: manifest.split,
        seed: manifest.seed,
    };
    dataset.validate()?;
    Ok(StoredDataset {
        dataset,
        generator: manifest.generator,
    })
}

#[cfg(test)]
mod tests {
    use neurograph_core::exec::Sequential;

    use super::*;

    #[test]
    fn write_then_read_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let stored = generate(TaskKind::Edit, 10, 4, &GenOptions { widths: Some(vec![1, 6, 1]), pool: None }, &Sequential).unwrap();
        write_dataset(dir.path(), &stored).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), stored);
        assert!(dir.path().join("items/00009.json").exists());
    }

    #[test]
    fn missing_or_tampered_data_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 2);
        let stored = generate(TaskKind::Acc, 4, 1, &GenOptions::default(), &Sequential).unwrap();
        write_dataset(dir.path(), &stored).unwrap();
        let path = dir.path().join(MANIFEST);
        let text = read_text(&path).unwrap().replace("items/00002.json", "../00002.json");
        write_text(&path, &text).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 2);
    }
}
