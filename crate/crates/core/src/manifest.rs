//! JSON manifests describing a label set stored as TLT1 files.
//!
//! ```json
//! {"height": 8, "width": 8, "labels": [
//!   {"name": "depth", "kind": "continuous", "channels": 1,
//!    "values": "depth.values.tlt", "mask": "depth.mask.tlt"}
//! ]}
//! ```
//!
//! Tensor paths are resolved relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelKind, LabelMap, LabelSet};
use crate::tlt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub name: String,
    pub kind: LabelKind,
    pub channels: usize,
    pub values: String,
    pub mask: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<LabelEntry>,
}

fn base_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads and validates the label set a manifest points at.
pub fn load_label_set(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let manifest = read_manifest(path)?;
    let dir = base_dir(path);
    let mut labels = Vec::with_capacity(manifest.labels.len());
    for entry in &manifest.labels {
        let values = tlt::load(dir.join(&entry.values))?;
        let mask = tlt::load(dir.join(&entry.mask))?;
        if values.rank() != 3 || values.dims()[2] != entry.channels {
            return Err(Error::Manifest(format!(
                "label `{}` declares {} channels but values have dims {:?}",
                entry.name,
                entry.channels,
                values.dims()
            )));
        }
        if values.dims()[..2] != [manifest.height, manifest.width] {
            return Err(Error::DimensionMismatch {
                label: entry.name.clone(),
                expected: (manifest.height, manifest.width),
                found: (values.dims()[0], values.dims()[1]),
            });
        }
        labels.push(LabelMap::new(entry.name.clone(), entry.kind, values, mask)?);
    }
    LabelSet::new(labels)
}

/// Writes every label as `<name>.values.tlt` / `<name>.mask.tlt` next to
/// the manifest and then the manifest itself.
pub fn save_label_set(set: &LabelSet, path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let dir = base_dir(path);
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir).map_err(|source| Error::Path {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut entries = Vec::with_capacity(set.len());
    for l in set.labels() {
        let values = format!("{}.values.tlt", l.name);
        let mask = format!("{}.mask.tlt", l.name);
        tlt::save(l.values(), dir.join(&values))?;
        tlt::save(l.mask(), dir.join(&mask))?;
        entries.push(LabelEntry {
            name: l.name.clone(),
            kind: l.kind,
            channels: l.channels(),
            values,
            mask,
        });
    }
    let manifest = Manifest {
        height: set.height(),
        width: set.width(),
        labels: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, text).map_err(|source| Error::Path {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}
