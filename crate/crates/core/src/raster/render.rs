use crate::classes::SemanticClass;
use crate::config::GenerationConfig;
use crate::error::{Error, Result};
use crate::face_model::{posed_mesh_with_transforms, v3, FaceRig, LandmarkAnchor, Mesh};
use crate::scene::{attach_proxies, ProxyLibrary, SceneDescription};
use crate::seed::derive_seed;

use super::rasterize::{rasterize, shade_color, RasterMesh};
use super::{Camera, LabelBundle, Landmark};

/// Projects surface anchors and tests them against the rendered depth. An
/// anchor is visible when it is in front of the camera, inside the frame
/// and no farther than the depth at its pixel plus a tolerance of a pixel
/// footprint and a couple of millimetres.
pub fn extract_landmarks(mesh: &Mesh, anchors: &[LandmarkAnchor], camera: &Camera, depth: &[f32]) -> Result<Vec<Landmark>> {
    if depth.len() != camera.pixel_count() {
        return Err(Error::param(format!(
            "depth layer has {} pixels, camera expects {}",
            depth.len(),
            camera.pixel_count()
        )));
    }
    let faces = mesh.faces.len();
    anchors
        .iter()
        .map(|a| {
            if a.face as usize >= faces {
                return Err(Error::param(format!("anchor face {} out of range", a.face)));
            }
            let pc = camera.to_camera(mesh.surface_point(a.face, a.bary));
            let [x, y] = camera.image_point(&pc);
            let (w, h) = (f64::from(camera.width), f64::from(camera.height));
            let on_screen = pc.z > 0.0 && x >= 0.0 && y >= 0.0 && x < w && y < h;
            let visible = on_screen && {
                let rendered = f64::from(depth[y as usize * camera.width as usize + x as usize]);
                let tolerance = 0.002 + 1.5 * pc.z / camera.focal_px;
                rendered.is_finite() && pc.z <= rendered + tolerance
            };
            Ok(Landmark { x, y, depth: pc.z, visible })
        })
        .collect()
}

/// Class of each vertex: the most frequent class among its incident faces,
/// ties going to the higher class id.
pub fn vertex_classes(rig: &FaceRig) -> Vec<SemanticClass> {
    let mut counts = vec![[0u16; SemanticClass::COUNT]; rig.vertex_count()];
    for (f, class) in rig.faces().iter().zip(rig.semantic_regions()) {
        for &v in f {
            counts[v as usize][class.id() as usize] += 1;
        }
    }
    counts
        .iter()
        .map(|c| {
            let best = (0..SemanticClass::COUNT).rev().max_by_key(|&k| (c[k], k)).unwrap_or(1);
            SemanticClass::from_id(best as u8).unwrap_or(SemanticClass::Skin)
        })
        .collect()
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

fn mul3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| a[i] * b[i])
}

fn unit(seed: u64, tag: &str) -> f64 {
    (derive_seed(seed, tag) >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-vertex albedo of the head from its vertex classes, the skin tone and
/// the hair and beard slots.
pub fn head_albedo(rig: &FaceRig, scene: &SceneDescription) -> Vec<[f64; 3]> {
    let skin = lerp3([0.87, 0.7, 0.6], [0.3, 0.19, 0.13], scene.skin_tone);
    let hair = crate::scene::proxies_hair_color(scene.assets.melanin, scene.assets.grayness);
    let iris = lerp3([0.35, 0.55, 0.75], [0.2, 0.12, 0.06], unit(scene.seed, "iris").max(scene.skin_tone));
    let (lo, hi) = crate::face_model::bounds_of(rig.template_vertices());
    let center = (v3(lo) + v3(hi)) * 0.5;
    let half = (v3(hi) - v3(lo)) * 0.5;
    let eyes: Vec<usize> = ["left_eye", "right_eye"].iter().filter_map(|n| rig.joint_index(n)).collect();
    let beard = scene.assets.beard.map(|id| 0.45 + 0.4 * unit(u64::from(id), "beard/density"));

    vertex_classes(rig)
        .iter()
        .zip(rig.template_vertices())
        .map(|(class, p)| match class {
            SemanticClass::LeftEye | SemanticClass::RightEye => {
                let toward = eyes.iter().map(|&j| v3(rig.template_joints()[j])).min_by(|a, b| {
                    (a - v3(*p)).norm().total_cmp(&(b - v3(*p)).norm())
                });
                match toward {
                    Some(c) if (v3(*p) - c).normalize().z > 0.9 => iris,
                    _ => [0.92, 0.9, 0.88],
                }
            }
            SemanticClass::LeftBrow | SemanticClass::RightBrow => lerp3(hair, skin, 0.25),
            SemanticClass::UpperLip | SemanticClass::LowerLip => mul3(skin, [0.86, 0.58, 0.58]),
            SemanticClass::InnerMouth => [0.32, 0.08, 0.09],
            SemanticClass::Nose => mul3(skin, [0.98, 0.95, 0.95]),
            _ => {
                let u = (v3(*p) - center).component_div(&half);
                match beard {
                    Some(density) if u.y < -0.3 && u.z > 0.2 => lerp3(skin, hair, density),
                    _ => skin,
                }
            }
        })
        .collect()
}

fn background_color(scene: &SceneDescription) -> [u8; 3] {
    let id = u64::from(scene.environment.id);
    let base = 0.2 + 0.5 * unit(id, "backdrop/value");
    let tint = [unit(id, "backdrop/r"), unit(id, "backdrop/g"), unit(id, "backdrop/b")];
    tint.map(|t| super::rasterize::quantize(base * (0.8 + 0.4 * t)))
}

/// Renders the full label bundle for one scene.
pub fn render_scene(scene: &SceneDescription, rig: &FaceRig, config: &GenerationConfig) -> Result<LabelBundle> {
    let (width, height) = (config.image.width_px, config.image.height_px);
    let (mesh, _) = posed_mesh_with_transforms(rig, &scene.identity, &scene.expression, &scene.pose)?;
    let proxies = attach_proxies(scene, rig, &ProxyLibrary::from_config(&config.assets))?;
    let camera = Camera::from_scene(&scene.camera, width, height)?;

    let albedo = head_albedo(rig, scene);
    let proxy_normals: Vec<Vec<[f64; 3]>> =
        proxies.iter().map(|p| crate::face_model::vertex_normals(&p.vertices, &p.faces)).collect();
    let proxy_albedo: Vec<Vec<[f64; 3]>> = proxies.iter().map(|p| vec![p.albedo; p.vertices.len()]).collect();
    let proxy_classes: Vec<Vec<SemanticClass>> = proxies.iter().map(|p| vec![p.class; p.faces.len()]).collect();

    let mut meshes = vec![RasterMesh {
        positions: &mesh.vertices,
        normals: &mesh.normals,
        uvs: rig.vertex_uvs(),
        albedo: &albedo,
        faces: &mesh.faces,
        classes: rig.semantic_regions(),
    }];
    for (i, p) in proxies.iter().enumerate() {
        meshes.push(RasterMesh {
            positions: &p.vertices,
            normals: &proxy_normals[i],
            uvs: &p.uvs,
            albedo: &proxy_albedo[i],
            faces: &p.faces,
            classes: &proxy_classes[i],
        });
    }
    let mut bundle = rasterize(&meshes, &camera)?.bundle;

    let env = &scene.environment;
    let elevation = 35f64.to_radians();
    let world_light = v3([elevation.cos() * env.rotation.sin(), elevation.sin(), elevation.cos() * env.rotation.cos()]);
    let l = camera.world_to_camera.rotation * world_light;
    let ambient = (0.3 * env.intensity).clamp(0.0, 1.0);
    bundle.color = shade_color(&bundle, [l.x, l.y, l.z], ambient, background_color(scene));

    bundle.landmarks = extract_landmarks(&mesh, rig.landmarks(), &camera, &bundle.depth)?;
    if config.image.dense_landmarks {
        bundle.dense_landmarks = extract_landmarks(&mesh, rig.dense_landmarks(), &camera, &bundle.depth)?;
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::RigidTransform;
    use std::sync::Arc;

    #[test]
    fn vertex_anchor_projects_like_its_vertex() {
        let vertices = vec![[-0.2, -0.2, 1.0], [0.3, -0.1, 1.1], [0.0, 0.3, 0.9]];
        let mesh = Mesh::new(vertices.clone(), Arc::new(vec![[0, 1, 2]]));
        let camera = Camera::new(RigidTransform::identity(), 64.0, [32.0, 32.0], 64, 64).unwrap();
        let depth = vec![0.5f32; 64 * 64];
        let far = vec![10.0f32; 64 * 64];
        let anchor = LandmarkAnchor { face: 0, bary: [0.0, 1.0, 0.0] };
        let l = extract_landmarks(&mesh, &[anchor], &camera, &far).unwrap()[0];
        let p = super::super::project(&camera, &vertices[1..2])[0];
        assert_eq!((l.x, l.y), (p.x, p.y));
        assert!(l.visible);
        // a nearer surface at that pixel hides it
        assert!(!extract_landmarks(&mesh, &[anchor], &camera, &depth).unwrap()[0].visible);
    }

    #[test]
    fn offscreen_and_behind_are_invisible() {
        let mesh = Mesh::new(
            vec![[5.0, 0.0, 1.0], [6.0, 0.0, 1.0], [5.0, 1.0, 1.0], [0.0, 0.0, -1.0]],
            Arc::new(vec![[0, 1, 2], [3, 1, 2]]),
        );
        let camera = Camera::new(RigidTransform::identity(), 64.0, [32.0, 32.0], 64, 64).unwrap();
        let far = vec![10.0f32; 64 * 64];
        let anchors = [LandmarkAnchor { face: 0, bary: [1.0, 0.0, 0.0] }, LandmarkAnchor { face: 1, bary: [1.0, 0.0, 0.0] }];
        let out = extract_landmarks(&mesh, &anchors, &camera, &far).unwrap();
        assert!(!out[0].visible && out[0].x > 64.0);
        assert!(!out[1].visible && out[1].depth < 0.0);
        let bad = [LandmarkAnchor { face: 5, bary: [1.0, 0.0, 0.0] }];
        assert!(extract_landmarks(&mesh, &bad, &camera, &far).is_err());
        assert!(extract_landmarks(&mesh, &anchors, &camera, &far[1..]).is_err());
    }

    #[test]
    fn vertex_class_majority() {
        let rig = crate::desk::desk_template_rig();
        let classes = vertex_classes(&rig);
        assert_eq!(classes.len(), rig.vertex_count());
        for c in SemanticClass::FACIAL.iter().filter(|c| **c != SemanticClass::Background) {
            assert!(classes.contains(c), "{c:?}");
        }
    }
}
