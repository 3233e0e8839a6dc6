//! Line-delimited manifest: one header record, then one record per sample
//! in index order.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::GenerationConfig;
use crate::error::{Error, Result};
use crate::face_model::FaceRig;

use super::{read_sample, write_atomic, SampleFailure, SampleRecord};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub rig_hash: String,
    pub global_seed: u64,
    pub sample_count: u64,
    pub config: GenerationConfig,
    pub failures: Vec<SampleFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub samples: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(config: &GenerationConfig, rig: &FaceRig, global_seed: u64, samples: Vec<SampleRecord>, failures: Vec<SampleFailure>) -> Self {
        Self {
            header: ManifestHeader {
                format_version: MANIFEST_VERSION,
                config_hash: config.content_hash(),
                rig_hash: rig.content_hash(),
                global_seed,
                sample_count: samples.len() as u64,
                config: config.clone(),
                failures,
            },
            samples,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Writes the manifest atomically; call only after every sample is on disk.
pub fn write_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    write_atomic(&root.join(MANIFEST_FILE), manifest.to_jsonl().as_bytes())
}

/// Parses the manifest and checks its internal consistency.
pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::format(&path, "empty manifest"))?;
    let header: ManifestHeader =
        serde_json::from_str(first).map_err(|e| Error::format(&path, format!("header: {e}")))?;
    if header.format_version != MANIFEST_VERSION {
        return Err(Error::format(&path, format!("unsupported manifest version {}", header.format_version)));
    }
    if header.config.content_hash() != header.config_hash {
        return Err(Error::format(&path, "config hash does not match the stored config"));
    }
    let samples = lines
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1))))
        .collect::<Result<Vec<SampleRecord>>>()?;
    if samples.len() as u64 != header.sample_count {
        return Err(Error::format(&path, format!("header declares {} samples, found {}", header.sample_count, samples.len())));
    }
    let mut seeds = HashSet::new();
    for s in &samples {
        if !seeds.insert(s.seed) {
            return Err(Error::format(&path, format!("duplicate sample seed {}", s.seed)));
        }
        if s.scene.seed != s.seed {
            return Err(Error::format(&path, format!("sample {} scene seed differs from its record", s.index)));
        }
    }
    Ok(DatasetManifest { header, samples })
}

/// Reads the manifest and parses every layer it references. When `rig` is
/// given its hash must match the one recorded.
pub fn validate_dataset(root: &Path, rig: Option<&FaceRig>) -> Result<DatasetManifest> {
    let manifest = read_manifest(root)?;
    if let Some(rig) = rig {
        if rig.content_hash() != manifest.header.rig_hash {
            return Err(Error::format(root.join(MANIFEST_FILE), "rig hash does not match the manifest"));
        }
    }
    let (w, h) = (manifest.header.config.image.width_px, manifest.header.config.image.height_px);
    for record in &manifest.samples {
        let bundle = read_sample(root, record)?;
        if (bundle.width, bundle.height) != (w, h) {
            return Err(Error::format(root.join(super::sample_dir(record.index)), "resolution differs from the config"));
        }
        if bundle.mask.iter().any(|&c| crate::classes::SemanticClass::from_id(c).is_none()) {
            return Err(Error::format(root.join(super::sample_dir(record.index)), "mask holds an unknown class id"));
        }
    }
    Ok(manifest)
}
