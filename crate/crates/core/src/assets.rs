//! Bundled design spaces, constraint files and synthetic models.
//!
//! `manifest.json` lists every bundled file with its SHA-256 and provenance;
//! loading fails on the first hash mismatch. The same files are embedded in
//! the library so the bundle is usable without the source tree.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constraints::ConstraintTree;
use crate::error::{Error, Result};
use crate::eval::SyntheticModel;
use crate::space::ParameterSpace;

pub const MANIFEST: &str = "manifest.json";

const EMBEDDED: &[(&str, &str)] = &[
    (MANIFEST, include_str!("../assets/manifest.json")),
    (
        "spaces/boom.json",
        include_str!("../assets/spaces/boom.json"),
    ),
    (
        "spaces/rocket.json",
        include_str!("../assets/spaces/rocket.json"),
    ),
    ("spaces/el2.json", include_str!("../assets/spaces/el2.json")),
    (
        "constraints/boom.json",
        include_str!("../assets/constraints/boom.json"),
    ),
    (
        "models/boom.json",
        include_str!("../assets/models/boom.json"),
    ),
    (
        "models/rocket.json",
        include_str!("../assets/models/rocket.json"),
    ),
    ("models/el2.json", include_str!("../assets/models/el2.json")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Space,
    Constraints,
    Model,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetEntry {
    pub path: String,
    pub sha256: String,
    pub kind: AssetKind,
    pub processor: String,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetManifest {
    pub version: u32,
    pub files: Vec<AssetEntry>,
}

/// Space, constraints and model for one processor.
#[derive(Debug, Clone)]
pub struct ProcessorAssets {
    pub space: Arc<ParameterSpace>,
    pub constraints: Arc<ConstraintTree>,
    pub model: SyntheticModel,
}

#[derive(Debug, Clone)]
pub struct Assets {
    pub manifest: AssetManifest,
    pub processors: BTreeMap<String, ProcessorAssets>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Assets {
    pub fn processor(&self, name: &str) -> Result<&ProcessorAssets> {
        self.processors.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown processor `{name}` (bundled: {})",
                self.processors
                    .keys()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })
    }

    fn build<F>(read: F) -> Result<Self>
    where
        F: Fn(&str) -> Result<Vec<u8>>,
    {
        let manifest_bytes = read(MANIFEST)?;
        let manifest: AssetManifest =
            serde_json::from_slice(&manifest_bytes).map_err(|e| Error::Parse {
                path: MANIFEST.into(),
                message: e.to_string(),
            })?;

        let mut texts: BTreeMap<&str, String> = BTreeMap::new();
        for f in &manifest.files {
            let bytes = read(&f.path)?;
            let actual = sha256_hex(&bytes);
            if actual != f.sha256 {
                return Err(Error::HashMismatch {
                    path: f.path.clone(),
                    expected: f.sha256.clone(),
                    actual,
                });
            }
            let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
                path: f.path.clone().into(),
                message: e.to_string(),
            })?;
            texts.insert(f.path.as_str(), text);
        }

        let parse_err = |path: &str, e: Error| Error::Parse {
            path: path.into(),
            message: e.to_string(),
        };
        let mut processors = BTreeMap::new();
        let mut names: Vec<&str> = Vec::new();
        for f in &manifest.files {
            if !names.contains(&f.processor.as_str()) {
                names.push(f.processor.as_str());
            }
        }
        for name in names {
            let find = |kind| {
                manifest
                    .files
                    .iter()
                    .find(|f| f.processor == name && f.kind == kind)
            };
            let (Some(space_entry), Some(model_entry)) =
                (find(AssetKind::Space), find(AssetKind::Model))
            else {
                return Err(Error::InvalidArgument(format!(
                    "manifest lacks a space or model for `{name}`"
                )));
            };
            let space = Arc::new(
                ParameterSpace::from_json_str(&texts[space_entry.path.as_str()])
                    .map_err(|e| parse_err(&space_entry.path, e))?,
            );
            let constraints = match find(AssetKind::Constraints) {
                Some(c) => ConstraintTree::parse_str(&texts[c.path.as_str()], &space)
                    .map_err(|e| parse_err(&c.path, e))?,
                None => ConstraintTree::unconstrained(&space),
            };
            let model = SyntheticModel::from_json_str(&texts[model_entry.path.as_str()])
                .map_err(|e| parse_err(&model_entry.path, e))?;
            model
                .bind(space.clone())
                .map_err(|e| parse_err(&model_entry.path, e))?;
            processors.insert(
                name.to_owned(),
                ProcessorAssets {
                    space,
                    constraints: Arc::new(constraints),
                    model,
                },
            );
        }
        Ok(Self {
            manifest,
            processors,
        })
    }

    /// The copies compiled into the library.
    pub fn bundled() -> Result<Self> {
        Self::build(|path| {
            EMBEDDED
                .iter()
                .find(|(p, _)| *p == path)
                .map(|(_, t)| t.as_bytes().to_vec())
                .ok_or_else(|| Error::InvalidArgument(format!("`{path}` is not embedded")))
        })
    }
}

/// Loads and verifies the asset tree under `root`.
pub fn load_assets(root: &Path) -> Result<Assets> {
    Assets::build(|path| Ok(std::fs::read(root.join(path))?))
}

/// Directory of the bundled assets in the source tree.
pub fn source_asset_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/assets"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_assets_load() {
        let a = Assets::bundled().unwrap();
        let boom = a.processor("boom").unwrap();
        assert_eq!(boom.space.len(), 10);
        assert!(boom
            .constraints
            .exact(&boom.space, &boom.space.default_configuration()));
        assert_eq!(a.processor("rocketchip").unwrap().space.len(), 7);
        assert_eq!(a.processor("el2-veer").unwrap().space.len(), 5);
        assert!(a.processor("nope").is_err());
    }

    #[test]
    fn embedded_copies_match_source_tree() {
        let disk = load_assets(source_asset_dir()).unwrap();
        assert_eq!(disk.manifest, Assets::bundled().unwrap().manifest);
        for (path, text) in EMBEDDED {
            assert_eq!(
                std::fs::read_to_string(source_asset_dir().join(path)).unwrap(),
                *text
            );
        }
    }
}
