use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::rig::FaceRig;
use super::transform::{arr3, euler_to_rotation, v3, RigidTransform, Vec3};
use crate::error::{Error, Result};

/// Identity coefficients (β).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams(pub Vec<f64>);

/// Expression coefficients (ψ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionParams(pub Vec<f64>);

/// Per-joint local Euler rotations in radians (θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams(pub Vec<[f64; 3]>);

impl IdentityParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

impl ExpressionParams {
    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }
}

impl PoseParams {
    pub fn zeros(joints: usize) -> Self {
        Self(vec![[0.0; 3]; joints])
    }
}

/// Posed (or bind-pose) vertex positions sharing the rig topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Arc<Vec<[u32; 3]>>,
    pub normals: Vec<[f64; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Arc<Vec<[u32; 3]>>) -> Self {
        let normals = vertex_normals(&vertices, &faces);
        Self {
            vertices,
            faces,
            normals,
        }
    }

    /// Surface point of a barycentric anchor on face `face`.
    pub fn surface_point(&self, face: u32, bary: [f64; 3]) -> [f64; 3] {
        let f = self.faces[face as usize];
        let mut p = Vec3::zeros();
        for (c, w) in f.iter().zip(bary) {
            p += v3(self.vertices[*c as usize]) * w;
        }
        arr3(&p)
    }

    /// Axis-aligned bounds (min, max).
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        bounds_of(&self.vertices)
    }
}

pub(crate) fn bounds_of(points: &[[f64; 3]]) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    (lo, hi)
}

/// Area-weighted vertex normals; isolated or degenerate vertices get +z.
pub fn vertex_normals(vertices: &[[f64; 3]], faces: &[[u32; 3]]) -> Vec<[f64; 3]> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| v3(vertices[i as usize]));
        let n = (b - a).cross(&(c - a));
        for i in f {
            acc[*i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 1e-300 && len.is_finite() {
                arr3(&(n / len))
            } else {
                [0.0, 0.0, 1.0]
            }
        })
        .collect()
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::param(format!("{what} contains non-finite values")))
    }
}

fn check_identity(rig: &FaceRig, beta: &IdentityParams) -> Result<()> {
    if beta.0.len() != rig.identity_dim() {
        return Err(Error::param(format!(
            "identity has {} coefficients, rig expects {}",
            beta.0.len(),
            rig.identity_dim()
        )));
    }
    check_finite(&beta.0, "identity")
}

/// Bind-pose vertices `T̄ + β_i S_i + ψ_i E_i`.
pub fn bind_pose_mesh(
    rig: &FaceRig,
    beta: &IdentityParams,
    psi: &ExpressionParams,
) -> Result<Mesh> {
    check_identity(rig, beta)?;
    if psi.0.len() != rig.expression_dim() {
        return Err(Error::param(format!(
            "expression has {} coefficients, rig expects {}",
            psi.0.len(),
            rig.expression_dim()
        )));
    }
    check_finite(&psi.0, "expression")?;

    let n = rig.vertex_count();
    let mut flat: Vec<f64> = rig.template_vertices().iter().flatten().copied().collect();
    let mut accumulate = |coeff: f64, component: &[f64]| {
        if coeff != 0.0 {
            for (x, d) in flat.iter_mut().zip(component) {
                *x += coeff * d;
            }
        }
    };
    for (i, &b) in beta.0.iter().enumerate() {
        accumulate(b, rig.identity_component(i));
    }
    for (i, &p) in psi.0.iter().enumerate() {
        accumulate(p, rig.expression_component(i));
    }
    let vertices = (0..n)
        .map(|v| [flat[3 * v], flat[3 * v + 1], flat[3 * v + 2]])
        .collect();
    Ok(Mesh::new(vertices, rig.faces().clone()))
}

/// Identity-adjusted joint locations `J̄ + W̃ (β_i S_i)`, where `W̃` is the
/// skinning-weight matrix with each joint's row normalized to sum to one, so
/// a joint moves by the weighted mean displacement of the vertices it drives.
pub fn joint_locations(rig: &FaceRig, beta: &IdentityParams) -> Result<Vec<[f64; 3]>> {
    check_identity(rig, beta)?;
    let n = rig.vertex_count();
    let mut displacement = vec![0.0; n * 3];
    for (i, &b) in beta.0.iter().enumerate() {
        if b != 0.0 {
            for (d, s) in displacement.iter_mut().zip(rig.identity_component(i)) {
                *d += b * s;
            }
        }
    }
    let joints = rig
        .template_joints()
        .iter()
        .enumerate()
        .map(|(k, base)| {
            let row = &rig.skinning_weights()[k * n..(k + 1) * n];
            let mass: f64 = row.iter().sum();
            let mut moved = *base;
            if mass > 0.0 {
                for (v, w) in row.iter().enumerate() {
                    if *w != 0.0 {
                        for a in 0..3 {
                            moved[a] += w / mass * displacement[3 * v + a];
                        }
                    }
                }
            }
            moved
        })
        .collect();
    Ok(joints)
}

/// Global joint transforms: each joint rotates by its local Euler angles
/// about its own location, composed onto its parent's global transform.
pub fn forward_kinematics(
    rig: &FaceRig,
    pose: &PoseParams,
    joints: &[[f64; 3]],
) -> Result<Vec<RigidTransform>> {
    let k = rig.joint_count();
    if pose.0.len() != k || joints.len() != k {
        return Err(Error::param(format!(
            "pose has {} joints and locations {}, rig expects {k}",
            pose.0.len(),
            joints.len()
        )));
    }
    let mut global = vec![RigidTransform::identity(); k];
    for &j in rig.joint_order() {
        let local = RigidTransform::about_point(euler_to_rotation(pose.0[j])?, v3(joints[j]));
        global[j] = match rig.parent(j) {
            Some(p) => global[p].compose(&local),
            None => local,
        };
    }
    Ok(global)
}

/// `x_v -> Σ_k W_kv (G_k x_v)` with `weights` laid out `[joint][vertex]`.
pub fn linear_blend_skinning(
    vertices: &[[f64; 3]],
    transforms: &[RigidTransform],
    weights: &[f64],
) -> Result<Vec<[f64; 3]>> {
    let n = vertices.len();
    if weights.len() != transforms.len() * n {
        return Err(Error::param(format!(
            "weights length {} does not match {} joints x {n} vertices",
            weights.len(),
            transforms.len()
        )));
    }
    let out = vertices
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let x = v3(*x);
            let mut acc = Vec3::zeros();
            for (k, t) in transforms.iter().enumerate() {
                let w = weights[k * n + v];
                if w != 0.0 {
                    acc += t.apply(&x) * w;
                }
            }
            arr3(&acc)
        })
        .collect();
    Ok(out)
}

/// The full generating function `L(T(β, ψ), θ, J(β); W)`, also returning the
/// joint transforms used so attachments can follow them.
pub fn posed_mesh_with_transforms(
    rig: &FaceRig,
    beta: &IdentityParams,
    psi: &ExpressionParams,
    theta: &PoseParams,
) -> Result<(Mesh, Vec<RigidTransform>)> {
    let bind = bind_pose_mesh(rig, beta, psi)?;
    let joints = joint_locations(rig, beta)?;
    let transforms = forward_kinematics(rig, theta, &joints)?;
    let vertices = linear_blend_skinning(&bind.vertices, &transforms, rig.skinning_weights())?;
    Ok((Mesh::new(vertices, bind.faces), transforms))
}

pub fn posed_mesh(
    rig: &FaceRig,
    beta: &IdentityParams,
    psi: &ExpressionParams,
    theta: &PoseParams,
) -> Result<Mesh> {
    posed_mesh_with_transforms(rig, beta, psi, theta).map(|(m, _)| m)
}
