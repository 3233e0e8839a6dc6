use std::path::Path;
use std::sync::OnceLock;

use facesynth_core::dataset::{
    generate_dataset, read_manifest, read_sample, validate_dataset, RunConfig, MANIFEST_FILE,
};
use facesynth_core::desk::{desk_assets, ModelAssets};
use facesynth_core::raster::render_scene;
use facesynth_core::{GenerationConfig, SemanticClass};

fn assets() -> &'static ModelAssets {
    static ASSETS: OnceLock<ModelAssets> = OnceLock::new();
    ASSETS.get_or_init(|| desk_assets().unwrap())
}

fn run(dir: &Path, count: u64, seed: u64) -> RunConfig {
    let mut run = RunConfig::new(dir, count, seed);
    run.resolution = Some((48, 48));
    run
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn single_sample_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let config = GenerationConfig::default();
    generate_dataset(&run(a.path(), 1, 42), &config, assets()).unwrap();
    generate_dataset(&run(b.path(), 1, 42), &config, assets()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta.len(), 9);
    assert_eq!(ta, tb);
}

#[test]
fn written_samples_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = GenerationConfig::default();
    config.image.dense_landmarks = true;
    let report = generate_dataset(&run(dir.path(), 3, 5), &config, assets()).unwrap();
    let effective = run(dir.path(), 3, 5).effective_config(&config);
    for record in &report.manifest.samples {
        let stored = read_sample(dir.path(), record).unwrap();
        let fresh = render_scene(&record.scene, &assets().rig, &effective).unwrap();
        assert_eq!(stored.color, fresh.color);
        assert_eq!(stored.mask, fresh.mask);
        assert_eq!(stored.normals, fresh.normals);
        assert_eq!(stored.vertex_map, fresh.vertex_map);
        assert_eq!(stored.landmarks, fresh.landmarks);
        assert_eq!(stored.dense_landmarks, fresh.dense_landmarks);
        let finite: Vec<f32> = fresh.depth.iter().copied().filter(|d| d.is_finite()).collect();
        let (lo, hi) = finite.iter().fold((f32::MAX, f32::MIN), |(a, b), &d| (a.min(d), b.max(d)));
        let step = f64::from(hi - lo) / 65534.0;
        for (s, f) in stored.depth.iter().zip(&fresh.depth) {
            if f.is_finite() {
                assert!(f64::from((s - f).abs()) <= 0.5 * step + 1e-6);
            } else {
                assert!(s.is_infinite());
            }
        }
    }
}

#[test]
fn hair_toggle_removes_hair_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = run(dir.path(), 100, 11);
    r.hair_enabled = Some(false);
    let report = generate_dataset(&r, &GenerationConfig::default(), assets()).unwrap();
    for record in &report.manifest.samples {
        assert!(!record.scene.flags.hair_enabled);
        let bundle = read_sample(dir.path(), record).unwrap();
        assert!(!bundle.mask.contains(&SemanticClass::Hair.id()));
    }
}

#[test]
fn manifest_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let report = generate_dataset(&run(dir.path(), 4, 9), &GenerationConfig::default(), assets()).unwrap();
    let manifest = validate_dataset(dir.path(), Some(&assets().rig)).unwrap();
    assert_eq!(manifest, report.manifest);
    assert_eq!(manifest.header.sample_count, 4);

    // a rig other than the one that generated the data is rejected
    let other = facesynth_core::desk::desk_template_rig();
    assert!(validate_dataset(dir.path(), Some(&other)).is_err());

    // corrupt one layer, then remove another
    let record = &manifest.samples[2];
    std::fs::write(dir.path().join(&record.files["depth"]), b"FSDP").unwrap();
    assert!(validate_dataset(dir.path(), None).is_err());
    std::fs::remove_file(dir.path().join(&record.files["mask"])).unwrap();
    let err = validate_dataset(dir.path(), None).unwrap_err().to_string();
    assert!(err.contains("mask"), "{err}");
}

#[test]
fn manifest_is_written_last_and_atomically() {
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&run(dir.path(), 2, 1), &GenerationConfig::default(), assets()).unwrap();
    let names: Vec<String> =
        std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    assert!(names.iter().all(|n| !n.contains(".tmp")), "{names:?}");

    let manifest_time = std::fs::metadata(dir.path().join(MANIFEST_FILE)).unwrap().modified().unwrap();
    for (name, _) in read_tree(dir.path()) {
        let t = std::fs::metadata(dir.path().join(&name)).unwrap().modified().unwrap();
        assert!(t <= manifest_time, "{name} written after the manifest");
    }

    // an interrupted run leaves no manifest to read
    std::fs::remove_file(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(read_manifest(dir.path()).is_err());
}

#[test]
fn invalid_runs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = GenerationConfig::default();
    assert!(generate_dataset(&RunConfig::new(dir.path(), 0, 1), &config, assets()).is_err());
    let mut r = run(dir.path(), 1, 1);
    r.resolution = Some((8, 64));
    assert!(generate_dataset(&r, &config, assets()).unwrap_err().is_validation());
}
