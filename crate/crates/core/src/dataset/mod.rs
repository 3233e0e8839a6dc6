//! Dataset persistence: per-sample layer files, a line-delimited manifest
//! written last, and the parallel generator.

pub mod formats;
mod manifest;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::GenerationConfig;
use crate::desk::ModelAssets;
use crate::error::{Error, Result};
use crate::raster::{render_scene, LabelBundle};
use crate::scene::{assemble_scene, SceneDescription};
use crate::seed::sample_seed;

pub use manifest::{read_manifest, validate_dataset, write_manifest, DatasetManifest, ManifestHeader, MANIFEST_FILE, MANIFEST_VERSION};
pub use sweep::{sweep_plan, write_sweep, AblationVariant, SweepEntry};

/// Writes `bytes` to a sibling temp file and renames it into place, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "path has no file name"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub const LAYERS: [&str; 8] = ["color", "albedo", "mask", "depth", "normals", "uvs", "vertices", "landmarks"];

fn layer_file(layer: &str) -> &'static str {
    match layer {
        "color" => "color.png",
        "albedo" => "albedo.png",
        "mask" => "mask.png",
        "depth" => "depth.bin",
        "normals" => "normals.bin",
        "uvs" => "uvs.bin",
        "vertices" => "vertices.bin",
        "landmarks" => "landmarks.txt",
        "dense_landmarks" => "dense_landmarks.txt",
        _ => unreachable!("unknown layer {layer}"),
    }
}

/// Manifest entry for one written sample; paths are relative to the
/// dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: u64,
    pub seed: u64,
    pub scene: SceneDescription,
    pub files: BTreeMap<String, String>,
}

/// Relative directory of sample `index`.
pub fn sample_dir(index: u64) -> String {
    format!("samples/{index:06}")
}

/// Writes every layer of `bundle` under `root/sample_dir(index)`. A missing
/// sample directory is created only when `create_dirs` is set.
pub fn write_sample(
    root: &Path,
    index: u64,
    seed: u64,
    scene: &SceneDescription,
    bundle: &LabelBundle,
    create_dirs: bool,
) -> Result<SampleRecord> {
    let rel = sample_dir(index);
    let dir = root.join(&rel);
    if !dir.is_dir() {
        if create_dirs {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        } else {
            return Err(Error::io(&dir, std::io::Error::new(std::io::ErrorKind::NotFound, "sample directory does not exist")));
        }
    }
    let (w, h) = (bundle.width, bundle.height);
    let mut files = BTreeMap::new();
    let mut path_of = |layer: &str| {
        files.insert(layer.to_string(), format!("{rel}/{}", layer_file(layer)));
        dir.join(layer_file(layer))
    };
    formats::write_rgb_png(&path_of("color"), w, h, &bundle.color)?;
    formats::write_rgb_png(&path_of("albedo"), w, h, &bundle.albedo)?;
    formats::write_gray_png(&path_of("mask"), w, h, &bundle.mask)?;
    write_atomic(&path_of("depth"), &formats::encode_depth(w, h, &bundle.depth))?;
    let flat3 = |v: &[[f32; 3]]| v.iter().flatten().copied().collect::<Vec<_>>();
    write_atomic(&path_of("normals"), &formats::encode_plane("normals", w, h, 3, &flat3(&bundle.normals)))?;
    let uvs: Vec<f32> = bundle.uvs.iter().flatten().copied().collect();
    write_atomic(&path_of("uvs"), &formats::encode_plane("uvs", w, h, 2, &uvs))?;
    write_atomic(&path_of("vertices"), &formats::encode_plane("vertices", w, h, 3, &flat3(&bundle.vertex_map)))?;
    write_atomic(&path_of("landmarks"), formats::encode_landmarks(&bundle.landmarks).as_bytes())?;
    if !bundle.dense_landmarks.is_empty() {
        write_atomic(&path_of("dense_landmarks"), formats::encode_landmarks(&bundle.dense_landmarks).as_bytes())?;
    }
    Ok(SampleRecord { index, seed, scene: scene.clone(), files })
}

/// Reads every layer a record references and checks they agree in size.
/// Depth comes back within its 16-bit quantization; all else is exact.
pub fn read_sample(root: &Path, record: &SampleRecord) -> Result<LabelBundle> {
    let path = |layer: &str| -> Result<PathBuf> {
        record
            .files
            .get(layer)
            .map(|rel| root.join(rel))
            .ok_or_else(|| Error::format(root, format!("sample {} has no {layer} layer", record.index)))
    };
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let (w, h, color) = formats::read_rgb_png(&path("color")?)?;
    let mut sizes = vec![(w, h)];
    let (aw, ah, albedo) = formats::read_rgb_png(&path("albedo")?)?;
    let (mw, mh, mask) = formats::read_gray_png(&path("mask")?)?;
    let p = path("depth")?;
    let (dw, dh, depth) = formats::decode_depth(&read(&p)?, &p)?;
    let plane = |layer: &str, tag: &str, c: u32| -> Result<(u32, u32, Vec<f32>)> {
        let p = path(layer)?;
        formats::decode_plane(&read(&p)?, tag, c, &p)
    };
    let (nw, nh, normals) = plane("normals", "normals", 3)?;
    let (uw, uh, uvs) = plane("uvs", "uvs", 2)?;
    let (vw, vh, vertices) = plane("vertices", "vertices", 3)?;
    sizes.extend([(aw, ah), (mw, mh), (dw, dh), (nw, nh), (uw, uh), (vw, vh)]);
    if sizes.iter().any(|s| *s != (w, h)) {
        return Err(Error::format(root.join(sample_dir(record.index)), "layer resolutions disagree"));
    }
    let text = |layer: &str| -> Result<Vec<crate::raster::Landmark>> {
        let p = path(layer)?;
        let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        formats::decode_landmarks(&s, &p)
    };
    let landmarks = text("landmarks")?;
    let dense_landmarks = if record.files.contains_key("dense_landmarks") { text("dense_landmarks")? } else { Vec::new() };
    let tri = |v: Vec<f32>| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    Ok(LabelBundle {
        width: w,
        height: h,
        color,
        albedo,
        mask,
        depth,
        normals: tri(normals),
        uvs: uvs.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        vertex_map: tri(vertices),
        landmarks,
        dense_landmarks,
    })
}

/// Parameters of one generation run. Optional fields override the
/// generation config.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub count: u64,
    pub global_seed: u64,
    pub workers: usize,
    pub resolution: Option<(u32, u32)>,
    pub hair_enabled: Option<bool>,
    pub clothing_enabled: Option<bool>,
}

impl RunConfig {
    pub fn new(output_dir: impl Into<PathBuf>, count: u64, global_seed: u64) -> Self {
        Self {
            output_dir: output_dir.into(),
            count,
            global_seed,
            workers: 1,
            resolution: None,
            hair_enabled: None,
            clothing_enabled: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("sample count must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::config("worker count must be at least 1"));
        }
        if let Some((w, h)) = self.resolution {
            if w < 16 || h < 16 {
                return Err(Error::config("resolution must be at least 16x16"));
            }
        }
        Ok(())
    }

    /// The generation config with this run's overrides applied.
    pub fn effective_config(&self, base: &GenerationConfig) -> GenerationConfig {
        let mut config = base.clone();
        if let Some((w, h)) = self.resolution {
            config.image.width_px = w;
            config.image.height_px = h;
        }
        if let Some(v) = self.hair_enabled {
            config.ablation.hair_enabled = v;
        }
        if let Some(v) = self.clothing_enabled {
            config.ablation.clothing_enabled = v;
        }
        config
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFailure {
    pub index: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct GenerationReport {
    pub manifest: DatasetManifest,
    pub failures: Vec<SampleFailure>,
}

/// Renders one sample and writes its layers.
pub fn generate_sample(root: &Path, config: &GenerationConfig, assets: &ModelAssets, global_seed: u64, index: u64) -> Result<SampleRecord> {
    let seed = sample_seed(global_seed, index);
    let scene = assemble_scene(config, assets, seed)?;
    let bundle = render_scene(&scene, &assets.rig, config)?;
    write_sample(root, index, seed, &scene, &bundle, true)
}

/// Generates `run.count` samples on a pool of `run.workers` threads. Each
/// sample depends only on its index, results are collected in index order
/// and the manifest is written last, so the output tree is independent of
/// the worker count.
pub fn generate_dataset(run: &RunConfig, base: &GenerationConfig, assets: &ModelAssets) -> Result<GenerationReport> {
    use rayon::prelude::*;

    run.validate()?;
    let config = run.effective_config(base);
    config.validate()?;
    let root = &run.output_dir;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<std::result::Result<SampleRecord, SampleFailure>> = pool.install(|| {
        (0..run.count)
            .into_par_iter()
            .map(|i| {
                generate_sample(root, &config, assets, run.global_seed, i).map_err(|e| SampleFailure {
                    index: i,
                    seed: sample_seed(run.global_seed, i),
                    error: e.to_string(),
                })
            })
            .collect()
    });
    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => samples.push(s),
            Err(f) => failures.push(f),
        }
    }
    let manifest = DatasetManifest::new(&config, &assets.rig, run.global_seed, samples, failures.clone());
    write_manifest(root, &manifest)?;
    Ok(GenerationReport { manifest, failures })
}
