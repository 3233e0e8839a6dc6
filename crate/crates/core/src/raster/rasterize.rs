use crate::classes::SemanticClass;
use crate::error::{Error, Result};
use crate::face_model::{v3, Vec3};

use super::{Camera, LabelBundle};

/// Triangle id of pixels no triangle covers.
pub const NO_TRIANGLE: u32 = u32::MAX;

/// Triangles closer than this (camera z) are dropped rather than clipped.
const NEAR_PLANE: f64 = 1e-6;

/// A mesh with per-vertex attributes (world space) and per-face classes.
#[derive(Debug, Clone, Copy)]
pub struct RasterMesh<'a> {
    pub positions: &'a [[f64; 3]],
    pub normals: &'a [[f64; 3]],
    pub uvs: &'a [[f64; 2]],
    pub albedo: &'a [[f64; 3]],
    pub faces: &'a [[u32; 3]],
    pub classes: &'a [SemanticClass],
}

impl RasterMesh<'_> {
    fn validate(&self, index: usize) -> Result<()> {
        let n = self.positions.len();
        if self.normals.len() != n || self.uvs.len() != n || self.albedo.len() != n {
            return Err(Error::param(format!("mesh {index}: per-vertex attribute lengths differ")));
        }
        if self.classes.len() != self.faces.len() {
            return Err(Error::param(format!("mesh {index}: one class per face required")));
        }
        if self.faces.iter().flatten().any(|&v| v as usize >= n) {
            return Err(Error::param(format!("mesh {index}: face index out of range")));
        }
        if self.positions.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::param(format!("mesh {index}: non-finite vertex")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RasterDiagnostics {
    pub triangles: usize,
    /// Zero-area triangles in screen space.
    pub degenerate: usize,
    /// Triangles with a vertex at or behind the near plane.
    pub clipped: usize,
}

#[derive(Debug, Clone)]
pub struct RasterOutput {
    /// All layers except color, which stays black.
    pub bundle: LabelBundle,
    /// Winning triangle per pixel, numbered across meshes in input order.
    pub triangle_ids: Vec<u32>,
    pub diagnostics: RasterDiagnostics,
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Top or left edge of a positively wound triangle in y-down coordinates.
fn top_left(a: [f64; 2], b: [f64; 2]) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn covers(w: f64, owns_edge: bool) -> bool {
    w > 0.0 || (w == 0.0 && owns_edge)
}

#[derive(Clone, Copy)]
struct Fragment {
    mesh: u32,
    face: u32,
    /// Perspective-correct barycentrics in the face's original vertex order.
    bary: [f64; 3],
}

/// Z-buffers `meshes` through `camera`. A pixel is covered when its center
/// lies inside a triangle (top-left rule on edges); the nearest camera z
/// wins and exact depth ties go to the lower triangle id. No culling.
pub fn rasterize(meshes: &[RasterMesh], camera: &Camera) -> Result<RasterOutput> {
    for (i, m) in meshes.iter().enumerate() {
        m.validate(i)?;
    }
    let (w, h) = (camera.width as usize, camera.height as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut ids = vec![NO_TRIANGLE; w * h];
    let mut frags: Vec<Option<Fragment>> = vec![None; w * h];
    let mut diag = RasterDiagnostics::default();
    let mut base = 0u32;

    for (mi, mesh) in meshes.iter().enumerate() {
        let cam_pts: Vec<Vec3> = mesh.positions.iter().map(|p| camera.to_camera(*p)).collect();
        for (fi, face) in mesh.faces.iter().enumerate() {
            diag.triangles += 1;
            let tri_id = base + fi as u32;
            let pc = face.map(|v| cam_pts[v as usize]);
            if pc.iter().any(|p| p.z <= NEAR_PLANE) {
                diag.clipped += 1;
                continue;
            }
            let mut s = pc.map(|p| camera.image_point(&p));
            let mut z = pc.map(|p| p.z);
            let mut order = [0usize, 1, 2];
            let mut area = edge(s[0], s[1], s[2]);
            if !(area.abs() > 1e-12) {
                diag.degenerate += 1;
                continue;
            }
            if area < 0.0 {
                s.swap(1, 2);
                z.swap(1, 2);
                order.swap(1, 2);
                area = -area;
            }
            let owns = [top_left(s[1], s[2]), top_left(s[2], s[0]), top_left(s[0], s[1])];
            let min_x = s.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let max_x = s.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            let min_y = s.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
            let max_y = s.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
            let x0 = ((min_x - 0.5).ceil().max(0.0)) as usize;
            let y0 = ((min_y - 0.5).ceil().max(0.0)) as usize;
            let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
            let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let (x1, y1) = (x1 as usize, y1 as usize);
            for py in y0..=y1 {
                for px in x0..=x1 {
                    let p = [px as f64 + 0.5, py as f64 + 0.5];
                    let e = [edge(s[1], s[2], p), edge(s[2], s[0], p), edge(s[0], s[1], p)];
                    if !(0..3).all(|k| covers(e[k], owns[k])) {
                        continue;
                    }
                    let b = e.map(|x| x / area);
                    let inv_z = b[0] / z[0] + b[1] / z[1] + b[2] / z[2];
                    let depth = 1.0 / inv_z;
                    let idx = py * w + px;
                    if depth < zbuf[idx] {
                        zbuf[idx] = depth;
                        ids[idx] = tri_id;
                        let mut bary = [0.0; 3];
                        for k in 0..3 {
                            bary[order[k]] = b[k] / z[k] / inv_z;
                        }
                        frags[idx] = Some(Fragment { mesh: mi as u32, face: fi as u32, bary });
                    }
                }
            }
        }
        base += mesh.faces.len() as u32;
    }

    let n = w * h;
    let mut bundle = LabelBundle {
        width: camera.width,
        height: camera.height,
        color: vec![[0; 3]; n],
        albedo: vec![[0; 3]; n],
        mask: vec![SemanticClass::Background.id(); n],
        depth: vec![f32::INFINITY; n],
        normals: vec![[0.0; 3]; n],
        uvs: vec![[0.0; 2]; n],
        vertex_map: vec![[0.0; 3]; n],
        landmarks: Vec::new(),
        dense_landmarks: Vec::new(),
    };
    let rot = camera.world_to_camera.rotation;
    for (idx, frag) in frags.iter().enumerate() {
        let Some(f) = frag else { continue };
        let mesh = &meshes[f.mesh as usize];
        let face = mesh.faces[f.face as usize];
        let interp3 = |attr: &[[f64; 3]]| -> Vec3 {
            (0..3).fold(Vec3::zeros(), |acc, k| acc + v3(attr[face[k] as usize]) * f.bary[k])
        };
        let mut normal = rot * interp3(mesh.normals);
        if !(normal.norm() > 1e-12) {
            let [a, b, c] = face.map(|v| v3(mesh.positions[v as usize]));
            normal = rot * (b - a).cross(&(c - a));
        }
        let normal = normal.normalize();
        let uv = (0..3).fold([0.0; 2], |acc, k| {
            let t = mesh.uvs[face[k] as usize];
            [acc[0] + t[0] * f.bary[k], acc[1] + t[1] * f.bary[k]]
        });
        let albedo = interp3(mesh.albedo);
        let point = interp3(mesh.positions);

        bundle.mask[idx] = mesh.classes[f.face as usize].id();
        bundle.depth[idx] = zbuf[idx] as f32;
        bundle.normals[idx] = [normal.x as f32, normal.y as f32, normal.z as f32];
        bundle.uvs[idx] = uv.map(|t| t.clamp(0.0, 1.0) as f32);
        bundle.albedo[idx] = [albedo.x, albedo.y, albedo.z].map(quantize);
        bundle.vertex_map[idx] = [point.x as f32, point.y as f32, point.z as f32];
    }
    Ok(RasterOutput { bundle, triangle_ids: ids, diagnostics: diag })
}

pub(crate) fn quantize(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lambertian term with ambient floor: `albedo · (a + max(0, n·l)(1 − a))`.
pub fn shade_pixel(albedo: [f64; 3], normal: [f64; 3], light: [f64; 3], ambient: f64) -> [f64; 3] {
    let ndl = (normal[0] * light[0] + normal[1] * light[1] + normal[2] * light[2]).max(0.0);
    let k = ambient + ndl * (1.0 - ambient);
    albedo.map(|c| (c * k).clamp(0.0, 1.0))
}

/// Shades every foreground pixel; background pixels keep `background`.
/// `light` is a camera-space unit vector pointing toward the light.
pub fn shade_color(bundle: &LabelBundle, light: [f64; 3], ambient: f64, background: [u8; 3]) -> Vec<[u8; 3]> {
    bundle
        .mask
        .iter()
        .enumerate()
        .map(|(i, &class)| {
            if class == SemanticClass::Background.id() {
                return background;
            }
            let albedo = bundle.albedo[i].map(|c| f64::from(c) / 255.0);
            let normal = bundle.normals[i].map(f64::from);
            shade_pixel(albedo, normal, light, ambient).map(quantize)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::RigidTransform;

    fn camera(size: u32) -> Camera {
        let c = f64::from(size) / 2.0;
        Camera::new(RigidTransform::identity(), f64::from(size), [c, c], size, size).unwrap()
    }

    struct Soup {
        positions: Vec<[f64; 3]>,
        normals: Vec<[f64; 3]>,
        uvs: Vec<[f64; 2]>,
        albedo: Vec<[f64; 3]>,
        faces: Vec<[u32; 3]>,
        classes: Vec<SemanticClass>,
    }

    impl Soup {
        fn new(tris: &[([[f64; 3]; 3], SemanticClass)]) -> Self {
            let positions: Vec<[f64; 3]> = tris.iter().flat_map(|(t, _)| t.iter().copied()).collect();
            let n = positions.len();
            Soup {
                normals: vec![[0.0, 0.0, -1.0]; n],
                uvs: (0..n).map(|i| [(i % 3) as f64 / 2.0, 0.5]).collect(),
                albedo: vec![[0.5, 0.25, 1.0]; n],
                faces: (0..tris.len() as u32).map(|i| [3 * i, 3 * i + 1, 3 * i + 2]).collect(),
                classes: tris.iter().map(|(_, c)| *c).collect(),
                positions,
            }
        }

        fn mesh(&self) -> RasterMesh<'_> {
            RasterMesh {
                positions: &self.positions,
                normals: &self.normals,
                uvs: &self.uvs,
                albedo: &self.albedo,
                faces: &self.faces,
                classes: &self.classes,
            }
        }
    }

    #[test]
    fn full_screen_triangle() {
        let z = 2.0;
        let soup = Soup::new(&[([[-3.0, -3.0, z], [9.0, -3.0, z], [-3.0, 9.0, z]], SemanticClass::Nose)]);
        let out = rasterize(&[soup.mesh()], &camera(32)).unwrap();
        assert!(out.bundle.depth.iter().all(|&d| d == 2.0));
        assert!(out.bundle.mask.iter().all(|&c| c == SemanticClass::Nose.id()));
        for n in &out.bundle.normals {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            assert!((len - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn nearer_triangle_wins_regardless_of_order() {
        let tri = |z: f64| [[-3.0, -3.0, z], [9.0, -3.0, z], [-3.0, 9.0, z]];
        for flip in [false, true] {
            let mut tris = vec![(tri(2.0), SemanticClass::Skin), (tri(1.0), SemanticClass::Hair)];
            if flip {
                tris.reverse();
            }
            let soup = Soup::new(&tris);
            let out = rasterize(&[soup.mesh()], &camera(16)).unwrap();
            assert!(out.bundle.mask.iter().all(|&c| c == SemanticClass::Hair.id()));
            assert!(out.bundle.depth.iter().all(|&d| d == 1.0));
        }
    }

    #[test]
    fn depth_ties_go_to_the_lower_id() {
        let tri = [[-3.0, -3.0, 1.0], [9.0, -3.0, 1.0], [-3.0, 9.0, 1.0]];
        let soup = Soup::new(&[(tri, SemanticClass::Skin), (tri, SemanticClass::Hair)]);
        let out = rasterize(&[soup.mesh()], &camera(16)).unwrap();
        assert!(out.triangle_ids.iter().all(|&t| t == 0));
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // a quad split along its diagonal through pixel centers
        let z = 1.0;
        let (a, b, c, d) = ([-0.5, -0.5, z], [0.5, -0.5, z], [0.5, 0.5, z], [-0.5, 0.5, z]);
        let soup = Soup::new(&[([a, b, c], SemanticClass::Skin), ([a, c, d], SemanticClass::Nose)]);
        let cam = camera(16);
        let out = rasterize(&[soup.mesh()], &cam).unwrap();
        // render each half alone and check the union is a partition
        let first = Soup::new(&[([a, b, c], SemanticClass::Skin)]);
        let second = Soup::new(&[([a, c, d], SemanticClass::Nose)]);
        let o1 = rasterize(&[first.mesh()], &cam).unwrap();
        let o2 = rasterize(&[second.mesh()], &cam).unwrap();
        for i in 0..out.triangle_ids.len() {
            let c1 = o1.triangle_ids[i] != NO_TRIANGLE;
            let c2 = o2.triangle_ids[i] != NO_TRIANGLE;
            assert!(!(c1 && c2), "pixel {i} covered twice");
            assert_eq!(c1 || c2, out.triangle_ids[i] != NO_TRIANGLE);
        }
        assert_eq!(out.triangle_ids.iter().filter(|&&t| t != NO_TRIANGLE).count(), 256);
    }

    #[test]
    fn perspective_correct_interpolation() {
        // a slanted quad: the vertex map must follow the true surface
        let soup = Soup::new(&[
            ([[-1.0, -1.0, 1.0], [1.0, -1.0, 3.0], [1.0, 1.0, 3.0]], SemanticClass::Skin),
            ([[-1.0, -1.0, 1.0], [1.0, 1.0, 3.0], [-1.0, 1.0, 1.0]], SemanticClass::Skin),
        ]);
        let cam = camera(32);
        let out = rasterize(&[soup.mesh()], &cam).unwrap();
        for (i, p) in out.bundle.vertex_map.iter().enumerate() {
            if out.bundle.mask[i] == 0 {
                continue;
            }
            // surface z = 2 + x on the plane
            assert!((f64::from(p[2]) - (2.0 + f64::from(p[0]))).abs() < 1e-5);
            let d = f64::from(out.bundle.depth[i]);
            assert!((d - f64::from(p[2])).abs() < 1e-5);
            let [x, y] = cam.image_point(&v3(p.map(f64::from)));
            let (px, py) = ((i % 32) as f64 + 0.5, (i / 32) as f64 + 0.5);
            assert!((x - px).abs() < 1e-3 && (y - py).abs() < 1e-3);
        }
    }

    #[test]
    fn degenerate_and_behind_camera_are_counted() {
        let soup = Soup::new(&[
            ([[0.0, 0.0, 1.0], [0.1, 0.1, 1.0], [0.2, 0.2, 1.0]], SemanticClass::Skin),
            ([[0.0, 0.0, -1.0], [1.0, 0.0, -1.0], [0.0, 1.0, -1.0]], SemanticClass::Skin),
        ]);
        let out = rasterize(&[soup.mesh()], &camera(16)).unwrap();
        assert_eq!(out.diagnostics.degenerate, 1);
        assert_eq!(out.diagnostics.clipped, 1);
        assert!(out.bundle.mask.iter().all(|&c| c == 0));
        assert!(out.bundle.depth.iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn invalid_meshes_are_rejected() {
        let mut soup = Soup::new(&[([[0.0, 0.0, 1.0], [0.1, 0.0, 1.0], [0.0, 0.1, 1.0]], SemanticClass::Skin)]);
        soup.faces[0][2] = 7;
        assert!(rasterize(&[soup.mesh()], &camera(16)).is_err());
    }

    #[test]
    fn shading_formula() {
        let n = [0.0, 0.0, -1.0];
        assert_eq!(shade_pixel([0.3, 0.6, 0.9], n, [1.0, 0.0, 0.0], 1.0), [0.3, 0.6, 0.9]);
        assert_eq!(shade_pixel([0.3, 0.6, 0.9], n, [1.0, 0.0, 0.0], 0.0), [0.0; 3]);
        let half = [0.0, (0.75f64).sqrt(), -0.5];
        let c = shade_pixel([1.0; 3], n, half, 0.2);
        assert!(c.iter().all(|x| (x - 0.6).abs() < 1e-12));
    }

    #[test]
    fn shade_color_keeps_albedo_under_full_ambient() {
        let soup = Soup::new(&[([[-3.0, -3.0, 1.0], [9.0, -3.0, 1.0], [-3.0, 9.0, 1.0]], SemanticClass::Skin)]);
        let out = rasterize(&[soup.mesh()], &camera(16)).unwrap();
        let color = shade_color(&out.bundle, [0.0, 0.0, -1.0], 1.0, [9, 9, 9]);
        assert_eq!(color, out.bundle.albedo);
    }
}
