//! Procedural stand-ins for groomed hair, garments and accessories. Each
//! proxy is built in the bind pose and then follows the joints it hangs on.

use std::f64::consts::PI;

use crate::classes::SemanticClass;
use crate::config::AssetConfig;
use crate::error::{Error, Result};
use crate::face_model::{
    arr3, bind_pose_mesh, bounds_of, forward_kinematics, joint_locations, v3, FaceRig, Mesh,
    RigidTransform, Vec3,
};
use crate::seed::derive_seed;

use super::SceneDescription;

/// Attachment geometry carrying one semantic class and a flat albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMesh {
    pub class: SemanticClass,
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
    pub albedo: [f64; 3],
}

/// Collection sizes for every proxy slot; ids index into these.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyLibrary {
    pub hair_styles: u32,
    pub outfits: u32,
    pub headwear: u32,
    pub facewear: u32,
    pub eyewear: u32,
}

impl ProxyLibrary {
    pub fn from_config(config: &AssetConfig) -> Self {
        Self {
            hair_styles: config.hair_styles,
            outfits: config.outfits,
            headwear: config.headwear,
            facewear: config.facewear,
            eyewear: config.eyewear,
        }
    }
}

fn check_id(slot: &str, id: u32, size: u32) -> Result<u32> {
    if id < size {
        Ok(id)
    } else {
        Err(Error::config(format!("unknown {slot} proxy id {id} (collection has {size})")))
    }
}

/// Stable pseudo-random value in [0, 1) for style variation.
fn variant(id: u32, tag: &str) -> f64 {
    (derive_seed(u64::from(id), tag) >> 11) as f64 / (1u64 << 53) as f64
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    std::array::from_fn(|i| a[i] + (b[i] - a[i]) * t)
}

pub(crate) fn hair_color(melanin: f64, grayness: f64) -> [f64; 3] {
    let pigment = lerp3([0.78, 0.62, 0.38], [0.07, 0.05, 0.04], melanin);
    lerp3(pigment, [0.78, 0.78, 0.76], grayness)
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Head frame of the rig template: bounds center and half extents.
struct HeadFrame {
    center: Vec3,
    half: Vec3,
}

impl HeadFrame {
    fn new(rig: &FaceRig) -> Self {
        let (lo, hi) = bounds_of(rig.template_vertices());
        let (lo, hi) = (v3(lo), v3(hi));
        Self {
            center: (lo + hi) * 0.5,
            half: ((hi - lo) * 0.5).map(|x| x.max(1e-9)),
        }
    }

    /// Unit direction of a template point seen from the head center.
    fn direction(&self, p: [f64; 3]) -> Vec3 {
        (v3(p) - self.center).component_div(&self.half).normalize()
    }

    fn scale(&self) -> f64 {
        self.half.x / 0.075
    }
}

struct Posing<'a> {
    rig: &'a FaceRig,
    bind: Mesh,
    joints: Vec<[f64; 3]>,
    transforms: Vec<RigidTransform>,
    frame: HeadFrame,
}

impl Posing<'_> {
    fn joint(&self, name: &str) -> usize {
        self.rig
            .joint_index(name)
            .or_else(|| (0..self.rig.joint_count()).find(|&j| self.rig.parent(j).is_none()))
            .unwrap_or(0)
    }

    /// Offset surface over the template faces accepted by `keep`, skinned
    /// with the weights of the skin underneath.
    fn shell(&self, class: SemanticClass, offset: f64, albedo: [f64; 3], keep: impl Fn(&Vec3) -> bool) -> ProxyMesh {
        let template = self.rig.template_vertices();
        let n = template.len();
        let inside: Vec<bool> = template.iter().map(|p| keep(&self.frame.direction(*p))).collect();
        let mut remap = vec![u32::MAX; n];
        let mut source = Vec::new();
        let mut faces = Vec::new();
        for f in self.rig.faces().iter() {
            if f.iter().all(|&v| inside[v as usize]) {
                faces.push(f.map(|v| {
                    let slot = &mut remap[v as usize];
                    if *slot == u32::MAX {
                        *slot = source.len() as u32;
                        source.push(v as usize);
                    }
                    *slot
                }));
            }
        }
        let weights = self.rig.skinning_weights();
        let vertices = source
            .iter()
            .map(|&v| {
                let p = v3(self.bind.vertices[v]) + v3(self.bind.normals[v]) * offset;
                let mut acc = Vec3::zeros();
                for (k, t) in self.transforms.iter().enumerate() {
                    let w = weights[k * n + v];
                    if w != 0.0 {
                        acc += t.apply(&p) * w;
                    }
                }
                arr3(&acc)
            })
            .collect();
        let uvs = source.iter().map(|&v| self.rig.vertex_uvs()[v]).collect();
        ProxyMesh { class, vertices, faces, uvs, albedo }
    }

    fn rigid(&self, joint: usize, mut mesh: ProxyMesh) -> ProxyMesh {
        let t = &self.transforms[joint];
        for p in &mut mesh.vertices {
            *p = arr3(&t.apply(&v3(*p)));
        }
        mesh
    }
}

/// Lowest normalized height of the hair cap at longitude `lambda`.
fn hairline(lambda: f64, front: f64) -> f64 {
    0.15 + (front - 0.15) * smoothstep((lambda.cos() - 0.3) / 0.55)
}

fn torso(p: &Posing, id: u32) -> ProxyMesh {
    let h = p.frame.half;
    let neck = v3(p.joints[p.joint("neck")]);
    let collar = 0.9 + 0.3 * variant(id, "outfit/collar");
    let segments = 16;
    let rings = [
        (neck.y + 0.1 * h.y, 0.75 * collar * h.x, 0.6 * collar * h.z, neck.z),
        (neck.y - 0.5 * h.y, 2.0 * h.x, 1.0 * h.z, neck.z - 0.1 * h.z),
        (neck.y - 2.6 * h.y, 2.6 * h.x, 1.3 * h.z, neck.z - 0.2 * h.z),
    ];
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    for (r, &(y, ax, az, cz)) in rings.iter().enumerate() {
        for s in 0..segments {
            let a = 2.0 * PI * s as f64 / segments as f64;
            vertices.push([neck.x + ax * a.sin(), y, cz + az * a.cos()]);
            uvs.push([s as f64 / segments as f64, r as f64 / (rings.len() - 1) as f64]);
        }
    }
    let mut faces = Vec::new();
    let at = |r: usize, s: usize| (r * segments + s % segments) as u32;
    for r in 0..rings.len() - 1 {
        for s in 0..segments {
            faces.push([at(r, s), at(r + 1, s), at(r + 1, s + 1)]);
            faces.push([at(r, s), at(r + 1, s + 1), at(r, s + 1)]);
        }
    }
    let shade = variant(id, "outfit/color");
    let albedo = lerp3([0.15, 0.2, 0.45], [0.75, 0.3, 0.2], shade);
    ProxyMesh { class: SemanticClass::Clothing, vertices, faces, uvs, albedo }
}

fn eyeglasses(p: &Posing, id: u32) -> ProxyMesh {
    let h = p.frame.half;
    let s = 0.9 + 0.25 * variant(id, "eyewear/size");
    let eyes = [p.joints[p.joint("left_eye")], p.joints[p.joint("right_eye")]];
    let forward = 0.3 * h.z;
    let (lw, lh, rim) = (0.32 * h.x * s, 0.15 * h.y * s, 0.055 * h.x);
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces = Vec::new();
    let mut quad = |vs: [[f64; 3]; 4], vertices: &mut Vec<[f64; 3]>| {
        let b = vertices.len() as u32;
        vertices.extend(vs);
        faces.push([b, b + 1, b + 2]);
        faces.push([b, b + 2, b + 3]);
    };
    for e in eyes {
        let (cx, cy, z) = (e[0], e[1], e[2] + forward);
        let outer = [[-lw, -lh], [lw, -lh], [lw, lh], [-lw, lh]];
        let inner = outer.map(|[x, y]| [x - x.signum() * rim, y - y.signum() * rim]);
        for i in 0..4 {
            let j = (i + 1) % 4;
            let pt = |q: [f64; 2]| [cx + q[0], cy + q[1], z];
            quad([pt(outer[i]), pt(outer[j]), pt(inner[j]), pt(inner[i])], &mut vertices);
        }
        // temple arm running back from the outer edge
        let side = cx.signum() * (cx.abs() + lw);
        let ty = cy + 0.5 * lh;
        quad(
            [[side, ty - 0.4 * rim, z], [side, ty - 0.4 * rim, z - 1.1 * h.z], [side, ty + 0.4 * rim, z - 1.1 * h.z], [side, ty + 0.4 * rim, z]],
            &mut vertices,
        );
    }
    let (l, r) = (eyes[0], eyes[1]);
    let bridge_y = 0.5 * (l[1] + r[1]) + 0.35 * lh;
    let z = 0.5 * (l[2] + r[2]) + forward;
    let (x0, x1) = (r[0] + lw - rim, l[0] - lw + rim);
    quad(
        [[x0, bridge_y - 0.5 * rim, z], [x1, bridge_y - 0.5 * rim, z], [x1, bridge_y + 0.5 * rim, z], [x0, bridge_y + 0.5 * rim, z]],
        &mut vertices,
    );
    let uvs = (0..vertices.len()).map(|i| [(i % 4) as f64 / 3.0, 0.5]).collect();
    let tint = variant(id, "eyewear/color");
    let albedo = lerp3([0.05, 0.05, 0.06], [0.55, 0.35, 0.15], tint);
    ProxyMesh { class: SemanticClass::Eyewear, vertices, faces, uvs, albedo }
}

/// Builds the attachment meshes for every occupied slot of `scene`.
pub fn attach_proxies(scene: &SceneDescription, rig: &FaceRig, library: &ProxyLibrary) -> Result<Vec<ProxyMesh>> {
    let a = &scene.assets;
    let hair = a.hair_style.map(|id| check_id("hair", id, library.hair_styles)).transpose()?;
    let outfit = a.outfit.map(|id| check_id("outfit", id, library.outfits)).transpose()?;
    let headwear = a.headwear.map(|id| check_id("headwear", id, library.headwear)).transpose()?;
    let facewear = a.facewear.map(|id| check_id("facewear", id, library.facewear)).transpose()?;
    let eyewear = a.eyewear.map(|id| check_id("eyewear", id, library.eyewear)).transpose()?;
    if [hair, outfit, headwear, facewear, eyewear].iter().all(Option::is_none) {
        return Ok(Vec::new());
    }

    let bind = bind_pose_mesh(rig, &scene.identity, &scene.expression)?;
    let joints = joint_locations(rig, &scene.identity)?;
    let transforms = forward_kinematics(rig, &scene.pose, &joints)?;
    let posing = Posing { rig, bind, joints, transforms, frame: HeadFrame::new(rig) };
    let s = posing.frame.scale();
    let mut out = Vec::new();

    let hair_thickness = hair.map_or(0.0, |id| (0.004 + 0.008 * variant(id, "hair/thickness")) * s);
    if let Some(id) = hair {
        let front = 0.56 + 0.14 * variant(id, "hair/front");
        let color = hair_color(a.melanin, a.grayness);
        out.push(posing.shell(SemanticClass::Hair, hair_thickness, color, |u| {
            u.y >= hairline(u.x.atan2(u.z), front)
        }));
    }
    if let Some(id) = headwear {
        let rim = 0.25 + 0.15 * variant(id, "headwear/rim");
        let color = lerp3([0.1, 0.1, 0.12], [0.85, 0.75, 0.3], variant(id, "headwear/color"));
        out.push(posing.shell(SemanticClass::Headwear, hair_thickness + 0.006 * s, color, |u| u.y >= rim));
    }
    if let Some(id) = facewear {
        let top = -0.12 - 0.06 * variant(id, "facewear/top");
        let color = lerp3([0.92, 0.94, 0.96], [0.45, 0.65, 0.85], variant(id, "facewear/color"));
        out.push(posing.shell(SemanticClass::Facewear, 0.008 * s, color, |u| {
            u.z >= 0.35 && (-0.9..=top).contains(&u.y)
        }));
    }
    if let Some(id) = outfit {
        let neck = posing.joint("neck");
        out.push(posing.rigid(neck, torso(&posing, id)));
    }
    if let Some(id) = eyewear {
        let head = posing.joint("head");
        out.push(posing.rigid(head, eyeglasses(&posing, id)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desk::desk_template_rig;
    use crate::face_model::{ExpressionParams, IdentityParams, PoseParams};
    use crate::scene::{AssetSlots, Environment, GazeParams, GenerationFlags, SceneCamera};

    fn scene(rig: &FaceRig, assets: AssetSlots) -> SceneDescription {
        SceneDescription {
            seed: 0,
            identity: IdentityParams::zeros(rig.identity_dim()),
            expression: ExpressionParams::zeros(rig.expression_dim()),
            pose: PoseParams::zeros(rig.joint_count()),
            gaze: GazeParams { yaw: 0.0, pitch: 0.0 },
            assets,
            skin_tone: 0.3,
            camera: SceneCamera {
                position: [0.0, 0.0, 0.6],
                look_at: [0.0; 3],
                focal_mm: 50.0,
                sensor_width_mm: 36.0,
                aperture_f: 4.0,
            },
            environment: Environment { id: 0, rotation: 0.0, intensity: 1.0 },
            flags: GenerationFlags { hair_enabled: true, clothing_enabled: true },
        }
    }

    fn library() -> ProxyLibrary {
        ProxyLibrary::from_config(&AssetConfig::default())
    }

    #[test]
    fn no_slots_no_meshes() {
        let rig = desk_template_rig();
        assert!(attach_proxies(&scene(&rig, AssetSlots::bare()), &rig, &library()).unwrap().is_empty());
    }

    #[test]
    fn hair_sits_above_the_scalp() {
        let rig = desk_template_rig();
        for id in [0, 17, 511] {
            let slots = AssetSlots { hair_style: Some(id), ..AssetSlots::bare() };
            let meshes = attach_proxies(&scene(&rig, slots), &rig, &library()).unwrap();
            assert_eq!(meshes.len(), 1);
            assert_eq!(meshes[0].class, SemanticClass::Hair);
            assert!(!meshes[0].faces.is_empty());
            let v = rig.template_vertices();
            let centroid = v.iter().map(|p| p[1]).sum::<f64>() / v.len() as f64;
            let min_y = meshes[0].vertices.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            assert!(min_y > centroid, "{min_y} vs {centroid}");
        }
    }

    #[test]
    fn eyewear_straddles_the_eye_joints() {
        let rig = desk_template_rig();
        let slots = AssetSlots { eyewear: Some(3), ..AssetSlots::bare() };
        let meshes = attach_proxies(&scene(&rig, slots), &rig, &library()).unwrap();
        assert_eq!(meshes.len(), 1);
        let frame = &meshes[0];
        assert_eq!(frame.class, SemanticClass::Eyewear);
        let joints = rig.template_joints();
        let (l, r) = (joints[rig.joint_index("left_eye").unwrap()], joints[rig.joint_index("right_eye").unwrap()]);
        let xs = frame.vertices.iter().map(|p| p[0]);
        let (min_x, max_x) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        assert!(min_x < r[0] && max_x > l[0]);
        // each lens ring is centered on its eye joint
        for (ring, eye) in [(0, l), (1, r)] {
            let verts = &frame.vertices[ring * 20..ring * 20 + 16];
            let cx = verts.iter().map(|p| p[0]).sum::<f64>() / 16.0;
            let cy = verts.iter().map(|p| p[1]).sum::<f64>() / 16.0;
            assert!((cx - eye[0]).abs() < 1e-9 && (cy - eye[1]).abs() < 1e-9);
            assert!(verts.iter().all(|p| p[2] > eye[2]));
        }
    }

    #[test]
    fn proxies_follow_head_rotation() {
        let rig = desk_template_rig();
        let slots = AssetSlots { eyewear: Some(0), hair_style: Some(2), ..AssetSlots::bare() };
        let mut sc = scene(&rig, slots);
        let rest = attach_proxies(&sc, &rig, &library()).unwrap();
        let head = rig.joint_index("head").unwrap();
        sc.pose.0[head] = [0.0, 0.4, 0.0];
        let turned = attach_proxies(&sc, &rig, &library()).unwrap();
        for (a, b) in rest.iter().zip(&turned) {
            // rigid motion preserves pairwise distances
            let d = |m: &ProxyMesh, i: usize, j: usize| (v3(m.vertices[i]) - v3(m.vertices[j])).norm();
            let n = a.vertices.len();
            for (i, j) in [(0, n - 1), (1, n / 2), (n / 3, n / 4)] {
                assert!((d(a, i, j) - d(b, i, j)).abs() < 1e-9);
            }
            assert_ne!(a.vertices, b.vertices);
        }
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let rig = desk_template_rig();
        let slots = AssetSlots { eyewear: Some(11), ..AssetSlots::bare() };
        let err = attach_proxies(&scene(&rig, slots), &rig, &library()).unwrap_err();
        assert!(matches!(err, Error::Configuration(_)));
    }
}
