use std::sync::OnceLock;

use facesynth_core::desk::{desk_assets, ModelAssets};
use facesynth_core::raster::{render_scene, Camera};
use facesynth_core::scene::assemble_scene;
use facesynth_core::{GenerationConfig, SemanticClass};
use rayon::prelude::*;

fn assets() -> &'static ModelAssets {
    static ASSETS: OnceLock<ModelAssets> = OnceLock::new();
    ASSETS.get_or_init(|| desk_assets().unwrap())
}

fn config(size: u32) -> GenerationConfig {
    let mut c = GenerationConfig::default();
    c.image.width_px = size;
    c.image.height_px = size;
    c
}

#[test]
fn scenes_are_deterministic_across_threads() {
    let config = config(64);
    let sequential: Vec<_> = (0..64u64).map(|s| assemble_scene(&config, assets(), s).unwrap()).collect();
    let parallel: Vec<_> = (0..64u64).into_par_iter().map(|s| assemble_scene(&config, assets(), s).unwrap()).collect();
    assert_eq!(sequential, parallel);
}

#[test]
fn asset_settings_do_not_move_the_camera() {
    let base = config(64);
    let mut other = base.clone();
    other.assets.hair_probability = 0.0;
    other.assets.hair_styles = 3;
    other.ablation.clothing_enabled = false;
    for seed in 0..50 {
        let a = assemble_scene(&base, assets(), seed).unwrap();
        let b = assemble_scene(&other, assets(), seed).unwrap();
        assert_eq!(a.camera, b.camera);
        assert_eq!(a.identity, b.identity);
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.environment, b.environment);
    }
}

#[test]
fn layers_are_coherent() {
    let config = config(96);
    for seed in 0..20 {
        let scene = assemble_scene(&config, assets(), seed).unwrap();
        let bundle = render_scene(&scene, &assets().rig, &config).unwrap();
        let camera = Camera::from_scene(&scene.camera, 96, 96).unwrap();
        for i in 0..bundle.pixel_count() {
            if bundle.mask[i] == SemanticClass::Background.id() {
                assert!(bundle.depth[i].is_infinite());
                continue;
            }
            assert!(bundle.depth[i].is_finite() && bundle.depth[i] > 0.0);
            let n = bundle.normals[i];
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-3, "normal length {len}");
            assert!(bundle.uvs[i].iter().all(|u| (0.0..=1.0).contains(u)));
            let p = bundle.vertex_map[i].map(f64::from);
            let [x, y] = camera.image_point(&camera.to_camera(p));
            let (px, py) = ((i % 96) as f64 + 0.5, (i / 96) as f64 + 0.5);
            assert!((x - px).abs() <= 1.0 && (y - py).abs() <= 1.0, "seed {seed} pixel {i}: reprojects to ({x}, {y})");
        }
    }
}

#[test]
fn visible_jaw_landmarks_are_on_the_face() {
    let config = config(128);
    let mut checked = 0;
    for seed in 0..40 {
        let scene = assemble_scene(&config, assets(), seed).unwrap();
        let bundle = render_scene(&scene, &assets().rig, &config).unwrap();
        for l in bundle.landmarks[..17].iter().filter(|l| l.visible) {
            let (x, y) = (l.x.floor() as usize, l.y.floor() as usize);
            assert_ne!(bundle.mask[y * 128 + x], SemanticClass::Background.id(), "seed {seed}");
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn doubling_resolution_doubles_landmarks() {
    let (small, large) = (config(64), config(128));
    for seed in 0..10 {
        let scene = assemble_scene(&small, assets(), seed).unwrap();
        let a = render_scene(&scene, &assets().rig, &small).unwrap();
        let b = render_scene(&scene, &assets().rig, &large).unwrap();
        for (p, q) in a.landmarks.iter().zip(&b.landmarks) {
            assert_eq!(2.0 * p.x, q.x);
            assert_eq!(2.0 * p.y, q.y);
        }
    }
}

#[test]
fn rendering_is_deterministic() {
    let config = config(64);
    let scene = assemble_scene(&config, assets(), 3).unwrap();
    let a = render_scene(&scene, &assets().rig, &config).unwrap();
    let b = render_scene(&scene, &assets().rig, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn default_framing_keeps_faces_a_reasonable_size() {
    let config = config(64);
    let coverage: Vec<f64> = (0..100u64)
        .into_par_iter()
        .map(|s| render_scene(&assemble_scene(&config, assets(), s).unwrap(), &assets().rig, &config).unwrap().coverage())
        .collect();
    let mean = coverage.iter().sum::<f64>() / coverage.len() as f64;
    assert!((0.2..=0.9).contains(&mean), "mean coverage {mean}");
    assert!(coverage.iter().all(|&c| c > 0.0));
}
