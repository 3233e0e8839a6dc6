use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classes::SemanticClass;
use crate::error::{Error, Result};
use crate::seed::content_hash;

pub const RIG_FORMAT_VERSION: u32 = 1;
pub const SPARSE_LANDMARK_COUNT: usize = 68;
pub const DENSE_LANDMARK_COUNT: usize = 679;

/// A surface point expressed as a barycentric combination of one face's corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnchor {
    pub face: u32,
    pub bary: [f64; 3],
}

/// Linear coupling of one expression component to gaze pitch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyelidCoupling {
    pub component: usize,
    pub per_radian: f64,
}

/// On-disk form of a [`FaceRig`]. Bases are flattened as `[component][vertex][xyz]`,
/// skinning weights as `[joint][vertex]`; the root joint's parent is `-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigData {
    pub format_version: u32,
    pub vertex_count: usize,
    pub identity_dim: usize,
    pub expression_dim: usize,
    pub joint_count: usize,
    pub template_vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub vertex_uvs: Vec<[f64; 2]>,
    pub identity_basis: Vec<f64>,
    pub expression_basis: Vec<f64>,
    pub skinning_weights: Vec<f64>,
    pub template_joints: Vec<[f64; 3]>,
    pub joint_parents: Vec<i64>,
    pub joint_names: Vec<String>,
    pub semantic_regions: Vec<SemanticClass>,
    #[serde(default)]
    pub landmarks: Vec<LandmarkAnchor>,
    #[serde(default)]
    pub dense_landmarks: Vec<LandmarkAnchor>,
    #[serde(default)]
    pub eyelid_coupling: Vec<EyelidCoupling>,
    #[serde(default)]
    pub expression_names: Vec<String>,
}

/// Validated, immutable face rig.
#[derive(Debug, Clone)]
pub struct FaceRig {
    data: RigData,
    faces: Arc<Vec<[u32; 3]>>,
    parents: Vec<Option<usize>>,
    /// Joints ordered so every parent precedes its children.
    joint_order: Vec<usize>,
}

fn check(cond: bool, rule: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::rig(rule.to_string()))
    }
}

impl FaceRig {
    /// Validates every rig invariant and renormalizes each vertex's skinning
    /// weights to sum to one.
    pub fn new(mut data: RigData) -> Result<Self> {
        check(
            data.format_version == RIG_FORMAT_VERSION,
            &format!(
                "format_version must be {RIG_FORMAT_VERSION}, found {}",
                data.format_version
            ),
        )?;
        let n = data.vertex_count;
        let k = data.joint_count;
        check(n >= 3, "vertex_count must be at least 3")?;
        check(data.identity_dim >= 1, "identity_dim must be at least 1")?;
        check(data.expression_dim >= 1, "expression_dim must be at least 1")?;
        check(k >= 1, "joint_count must be at least 1")?;
        check(
            data.template_vertices.len() == n,
            "template_vertices length must equal vertex_count",
        )?;
        check(data.vertex_uvs.len() == n, "vertex_uvs length must equal vertex_count")?;
        check(
            data.identity_basis.len() == data.identity_dim * n * 3,
            "identity_basis length must equal identity_dim * vertex_count * 3",
        )?;
        check(
            data.expression_basis.len() == data.expression_dim * n * 3,
            "expression_basis length must equal expression_dim * vertex_count * 3",
        )?;
        check(
            data.skinning_weights.len() == k * n,
            "skinning_weights length must equal joint_count * vertex_count",
        )?;
        check(data.template_joints.len() == k, "template_joints length must equal joint_count")?;
        check(data.joint_parents.len() == k, "joint_parents length must equal joint_count")?;
        check(
            data.joint_names.is_empty() || data.joint_names.len() == k,
            "joint_names must be empty or have joint_count entries",
        )?;
        check(!data.faces.is_empty(), "faces must not be empty")?;
        check(
            data.semantic_regions.len() == data.faces.len(),
            "semantic_regions must have one class per face",
        )?;

        let finite3 = |v: &[[f64; 3]]| v.iter().flatten().all(|x| x.is_finite());
        check(finite3(&data.template_vertices), "template_vertices must be finite")?;
        check(finite3(&data.template_joints), "template_joints must be finite")?;
        check(
            data.vertex_uvs.iter().flatten().all(|x| x.is_finite()),
            "vertex_uvs must be finite",
        )?;
        check(
            data.identity_basis.iter().all(|x| x.is_finite()),
            "identity_basis must be finite",
        )?;
        check(
            data.expression_basis.iter().all(|x| x.is_finite()),
            "expression_basis must be finite",
        )?;
        check(
            data.faces.iter().flatten().all(|&i| (i as usize) < n),
            "face indices must be smaller than vertex_count",
        )?;

        check(
            data.skinning_weights.iter().all(|w| w.is_finite() && *w >= 0.0),
            "skinning weights must be finite and non-negative",
        )?;
        for v in 0..n {
            let sum: f64 = (0..k).map(|j| data.skinning_weights[j * n + v]).sum();
            check(
                sum > 0.0,
                &format!("skinning weights of vertex {v} must not all be zero"),
            )?;
            for j in 0..k {
                data.skinning_weights[j * n + v] /= sum;
            }
        }

        let parents = parse_parents(&data.joint_parents)?;
        let joint_order = topological_order(&parents)?;

        let faces_len = data.faces.len();
        for (name, anchors, required) in [
            ("landmarks", &data.landmarks, SPARSE_LANDMARK_COUNT),
            ("dense_landmarks", &data.dense_landmarks, DENSE_LANDMARK_COUNT),
        ] {
            check(
                anchors.is_empty() || anchors.len() == required,
                &format!("{name} must be empty or hold exactly {required} anchors"),
            )?;
            for (i, a) in anchors.iter().enumerate() {
                check(
                    (a.face as usize) < faces_len,
                    &format!("{name}[{i}] references a face out of range"),
                )?;
                let sum: f64 = a.bary.iter().sum();
                check(
                    a.bary.iter().all(|b| b.is_finite() && *b >= 0.0) && (sum - 1.0).abs() <= 1e-9,
                    &format!("{name}[{i}] barycentric weights must be non-negative and sum to 1"),
                )?;
            }
        }
        for c in &data.eyelid_coupling {
            check(
                c.component < data.expression_dim && c.per_radian.is_finite(),
                "eyelid_coupling component must index the expression basis",
            )?;
        }

        let faces = Arc::new(data.faces.clone());
        Ok(Self {
            data,
            faces,
            parents,
            joint_order,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let data: RigData =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        Self::new(data)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.data).expect("rig data serializes")
    }

    /// Fingerprint of the rig contents.
    pub fn content_hash(&self) -> String {
        content_hash(self.to_json().as_bytes())
    }

    pub fn data(&self) -> &RigData {
        &self.data
    }

    pub fn into_data(self) -> RigData {
        self.data
    }

    pub fn vertex_count(&self) -> usize {
        self.data.vertex_count
    }

    pub fn identity_dim(&self) -> usize {
        self.data.identity_dim
    }

    pub fn expression_dim(&self) -> usize {
        self.data.expression_dim
    }

    pub fn joint_count(&self) -> usize {
        self.data.joint_count
    }

    pub fn template_vertices(&self) -> &[[f64; 3]] {
        &self.data.template_vertices
    }

    pub fn faces(&self) -> &Arc<Vec<[u32; 3]>> {
        &self.faces
    }

    pub fn vertex_uvs(&self) -> &[[f64; 2]] {
        &self.data.vertex_uvs
    }

    /// Identity blendshape `i` as a flat `[vertex][xyz]` slice.
    pub fn identity_component(&self, i: usize) -> &[f64] {
        let len = self.data.vertex_count * 3;
        &self.data.identity_basis[i * len..(i + 1) * len]
    }

    pub fn expression_component(&self, i: usize) -> &[f64] {
        let len = self.data.vertex_count * 3;
        &self.data.expression_basis[i * len..(i + 1) * len]
    }

    /// Weight of joint `joint` on vertex `vertex`.
    pub fn weight(&self, joint: usize, vertex: usize) -> f64 {
        self.data.skinning_weights[joint * self.data.vertex_count + vertex]
    }

    pub fn skinning_weights(&self) -> &[f64] {
        &self.data.skinning_weights
    }

    pub fn template_joints(&self) -> &[[f64; 3]] {
        &self.data.template_joints
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub(crate) fn joint_order(&self) -> &[usize] {
        &self.joint_order
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.data.joint_names.iter().position(|n| n == name)
    }

    pub fn semantic_regions(&self) -> &[SemanticClass] {
        &self.data.semantic_regions
    }

    pub fn landmarks(&self) -> &[LandmarkAnchor] {
        &self.data.landmarks
    }

    pub fn dense_landmarks(&self) -> &[LandmarkAnchor] {
        &self.data.dense_landmarks
    }

    pub fn eyelid_coupling(&self) -> &[EyelidCoupling] {
        &self.data.eyelid_coupling
    }

    /// Returns a copy of this rig with a different identity basis.
    pub fn with_identity_basis(&self, dim: usize, basis: Vec<f64>) -> Result<FaceRig> {
        let mut data = self.data.clone();
        data.identity_dim = dim;
        data.identity_basis = basis;
        FaceRig::new(data)
    }
}

fn parse_parents(raw: &[i64]) -> Result<Vec<Option<usize>>> {
    let k = raw.len();
    check(raw[0] == -1, "joint 0 must be the root (parent -1)")?;
    raw.iter()
        .enumerate()
        .map(|(j, &p)| match (j, p) {
            (0, _) => Ok(None),
            (_, p) if p >= 0 && (p as usize) < k && p as usize != j => Ok(Some(p as usize)),
            _ => Err(Error::rig(format!(
                "joint {j} parent {p} must be another joint index (only joint 0 is a root)"
            ))),
        })
        .collect()
}

/// Orders joints parents-first, failing if the parent graph has a cycle.
pub(crate) fn topological_order(parents: &[Option<usize>]) -> Result<Vec<usize>> {
    let k = parents.len();
    let mut children = vec![Vec::new(); k];
    let mut roots = Vec::new();
    for (j, p) in parents.iter().enumerate() {
        match p {
            Some(p) => children[*p].push(j),
            None => roots.push(j),
        }
    }
    let mut order = Vec::with_capacity(k);
    let mut stack: Vec<usize> = roots.into_iter().rev().collect();
    while let Some(j) = stack.pop() {
        order.push(j);
        stack.extend(children[j].iter().rev());
    }
    if order.len() != k {
        return Err(Error::rig("joint parent graph contains a cycle"));
    }
    Ok(order)
}
