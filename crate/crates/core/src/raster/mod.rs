//! Deterministic label rendering: a pinhole camera, a z-buffered triangle
//! rasterizer with perspective-correct attributes, Lambertian shading and
//! landmark projection.

mod rasterize;
mod render;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face_model::{v3, RigidTransform, Vec3};
use crate::scene::SceneCamera;

pub use rasterize::{rasterize, shade_color, shade_pixel, RasterDiagnostics, RasterMesh, RasterOutput, NO_TRIANGLE};
pub use render::{extract_landmarks, head_albedo, render_scene, vertex_classes};

/// Pinhole camera looking along +z in its own frame, x right and y down.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: RigidTransform,
    pub focal_px: f64,
    pub principal: [f64; 2],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(world_to_camera: RigidTransform, focal_px: f64, principal: [f64; 2], width: u32, height: u32) -> Result<Self> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(Error::param(format!("focal length must be positive, got {focal_px}")));
        }
        if width < 16 || height < 16 {
            return Err(Error::param(format!("resolution {width}x{height} is below 16x16")));
        }
        if principal.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("principal point must be finite"));
        }
        Ok(Self { world_to_camera, focal_px, principal, width, height })
    }

    /// Camera at `position` aimed at `target` with world +y as up, principal
    /// point at the image center.
    pub fn look_at(position: [f64; 3], target: [f64; 3], focal_px: f64, width: u32, height: u32) -> Result<Self> {
        let eye = v3(position);
        let forward = v3(target) - eye;
        if !(forward.norm() > 1e-12) {
            return Err(Error::param("camera position coincides with its target"));
        }
        let forward = forward.normalize();
        let mut right = forward.cross(&Vec3::y());
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::z());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let transform = RigidTransform { rotation, translation: -(rotation * eye) };
        Self::new(transform, focal_px, [0.5 * f64::from(width), 0.5 * f64::from(height)], width, height)
    }

    /// Converts the physical focal length to pixels through the sensor width.
    pub fn from_scene(camera: &SceneCamera, width: u32, height: u32) -> Result<Self> {
        let focal_px = camera.focal_mm / camera.sensor_width_mm * f64::from(width);
        Self::look_at(camera.position, camera.look_at, focal_px, width, height)
    }

    pub fn to_camera(&self, p: [f64; 3]) -> Vec3 {
        self.world_to_camera.apply(&v3(p))
    }

    /// Pixel coordinates of a camera-space point.
    pub fn image_point(&self, pc: &Vec3) -> [f64; 2] {
        [
            self.principal[0] + self.focal_px * (pc.x / pc.z),
            self.principal[1] + self.focal_px * (pc.y / pc.z),
        ]
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    /// Camera-space z; non-positive means behind the camera.
    pub depth: f64,
}

pub fn project(camera: &Camera, points: &[[f64; 3]]) -> Vec<Projected> {
    points
        .iter()
        .map(|p| {
            let pc = camera.to_camera(*p);
            let [x, y] = camera.image_point(&pc);
            Projected { x, y, depth: pc.z }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub visible: bool,
}

/// Per-pixel ground truth for one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBundle {
    pub width: u32,
    pub height: u32,
    pub color: Vec<[u8; 3]>,
    pub albedo: Vec<[u8; 3]>,
    /// Class ids.
    pub mask: Vec<u8>,
    /// Camera-space z, `+inf` on background.
    pub depth: Vec<f32>,
    /// Camera-space unit normals, zero on background.
    pub normals: Vec<[f32; 3]>,
    pub uvs: Vec<[f32; 2]>,
    /// World-space surface points, zero on background.
    pub vertex_map: Vec<[f32; 3]>,
    pub landmarks: Vec<Landmark>,
    pub dense_landmarks: Vec<Landmark>,
}

impl LabelBundle {
    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Fraction of pixels that are not background.
    pub fn coverage(&self) -> f64 {
        self.mask.iter().filter(|&&c| c != 0).count() as f64 / self.mask.len() as f64
    }
}
