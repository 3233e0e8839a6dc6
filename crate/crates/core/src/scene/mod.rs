//! Procedural scene sampling: one complete [`SceneDescription`] per image.
//! Every field draws from its own stream derived from the scene seed and a
//! stable tag, so adding or reconfiguring one field never perturbs another.

mod proxies;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CameraConfig, GenerationConfig};
use crate::desk::ModelAssets;
use crate::error::{Error, Result};
use crate::face_model::{
    bind_pose_mesh, EyelidCoupling, ExpressionParams, FaceRig, IdentityParams, PoseParams,
};
use crate::learning::sample_identity;
use crate::seed::stream;

pub use proxies::{attach_proxies, ProxyLibrary, ProxyMesh};
pub(crate) use proxies::hair_color as proxies_hair_color;

/// Expression sources: a library of independent poses and an animated
/// keyframe sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionLibrary {
    pub entries: Vec<Vec<f64>>,
    pub sequence: Vec<Vec<f64>>,
}

impl ExpressionLibrary {
    pub fn validate(&self, expression_dim: usize) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::config("expression library has no entries"));
        }
        for v in self.entries.iter().chain(&self.sequence) {
            if v.len() != expression_dim {
                return Err(Error::config(format!(
                    "expression library vector has {} coefficients, rig expects {expression_dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("expression library contains non-finite values"));
            }
        }
        Ok(())
    }
}

/// Shared eye rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeParams {
    pub yaw: f64,
    pub pitch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetSlots {
    pub hair_style: Option<u32>,
    pub eyebrow: u32,
    pub beard: Option<u32>,
    pub eyelashes: u32,
    pub melanin: f64,
    pub grayness: f64,
    pub outfit: Option<u32>,
    pub headwear: Option<u32>,
    pub facewear: Option<u32>,
    pub eyewear: Option<u32>,
}

impl AssetSlots {
    /// Slots with every optional asset removed.
    pub fn bare() -> Self {
        Self {
            hair_style: None,
            eyebrow: 0,
            beard: None,
            eyelashes: 0,
            melanin: 0.5,
            grayness: 0.0,
            outfit: None,
            headwear: None,
            facewear: None,
            eyewear: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    pub focal_mm: f64,
    pub sensor_width_mm: f64,
    pub aperture_f: f64,
}

/// Analytic stand-in for an environment map: one key light plus ambient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub id: u32,
    /// Rotation about the vertical axis in radians.
    pub rotation: f64,
    pub intensity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationFlags {
    pub hair_enabled: bool,
    pub clothing_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub seed: u64,
    pub identity: IdentityParams,
    /// Expression after eyelid coupling.
    pub expression: ExpressionParams,
    /// Pose after gaze.
    pub pose: PoseParams,
    pub gaze: GazeParams,
    pub assets: AssetSlots,
    /// 0 is the lightest complexion, 1 the darkest.
    pub skin_tone: f64,
    pub camera: SceneCamera,
    pub environment: Environment,
    pub flags: GenerationFlags,
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, range: [f64; 2]) -> f64 {
    let u: f64 = rng.random();
    range[0] + (range[1] - range[0]) * u
}

/// Draws a sequence keyframe with probability `sequence_probability`,
/// otherwise a library entry; both uniformly.
pub fn sample_expression<R: Rng + ?Sized>(
    library: &ExpressionLibrary,
    sequence_probability: f64,
    rng: &mut R,
) -> Result<ExpressionParams> {
    if library.entries.is_empty() {
        return Err(Error::config("expression library has no entries"));
    }
    let from_sequence = rng.random::<f64>() < sequence_probability;
    let pool = if from_sequence {
        if library.sequence.is_empty() {
            return Err(Error::config("expression sequence is empty but sequence_probability > 0"));
        }
        &library.sequence
    } else {
        &library.entries
    };
    Ok(ExpressionParams(pool[rng.random_range(0..pool.len())].clone()))
}

fn eye_joints(rig: &FaceRig) -> Result<(usize, usize)> {
    match (rig.joint_index("left_eye"), rig.joint_index("right_eye")) {
        (Some(l), Some(r)) => Ok((l, r)),
        _ => Err(Error::config("rig has no left_eye/right_eye joints")),
    }
}

/// Sets both eye joints to `(pitch, yaw, 0)`; other joints are untouched.
pub fn apply_gaze(theta: &PoseParams, gaze: GazeParams, rig: &FaceRig) -> Result<PoseParams> {
    let (l, r) = eye_joints(rig)?;
    if theta.0.len() != rig.joint_count() {
        return Err(Error::param(format!(
            "pose has {} joints, rig expects {}",
            theta.0.len(),
            rig.joint_count()
        )));
    }
    let mut out = theta.clone();
    out.0[l] = [gaze.pitch, gaze.yaw, 0.0];
    out.0[r] = [gaze.pitch, gaze.yaw, 0.0];
    Ok(out)
}

/// Moves each coupled eyelid component linearly with gaze pitch, clamped
/// to `range`.
pub fn eyelid_pose(
    psi: &ExpressionParams,
    gaze: GazeParams,
    coupling: &[EyelidCoupling],
    range: [f64; 2],
) -> Result<ExpressionParams> {
    let mut out = psi.clone();
    for c in coupling {
        let slot = out.0.get_mut(c.component).ok_or_else(|| {
            Error::param(format!("eyelid coupling component {} out of range", c.component))
        })?;
        if gaze.pitch != 0.0 {
            *slot = (*slot + c.per_radian * gaze.pitch).clamp(range[0], range[1]);
        }
    }
    Ok(out)
}

/// Places a camera uniformly (by volume) in a spherical shell sector in
/// front of the head, aimed at a jittered point inside `head_bounds`.
pub fn sample_camera<R: Rng + ?Sized>(
    config: &CameraConfig,
    head_bounds: ([f64; 3], [f64; 3]),
    rng: &mut R,
) -> SceneCamera {
    let (lo, hi) = head_bounds;
    let center: [f64; 3] = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]));
    let half: [f64; 3] = std::array::from_fn(|a| 0.5 * (hi[a] - lo[a]));

    let az = uniform(rng, config.azimuth_deg).to_radians();
    let [e0, e1] = config.elevation_deg.map(|e| e.to_radians().sin());
    let el = uniform(rng, [e0, e1]).asin();
    let [d0, d1] = config.distance_m.map(|d| d.powi(3));
    let dist = uniform(rng, [d0, d1]).cbrt();
    let dir = [el.cos() * az.sin(), el.sin(), el.cos() * az.cos()];
    let position = std::array::from_fn(|a| center[a] + dist * dir[a]);

    let j = config.look_at_jitter;
    let look_at = std::array::from_fn(|a| center[a] + half[a] * uniform(rng, [-j, j]));
    SceneCamera {
        position,
        look_at,
        focal_mm: uniform(rng, config.focal_mm),
        sensor_width_mm: config.sensor_width_mm,
        aperture_f: uniform(rng, config.aperture_f),
    }
}

fn optional_slot(p: f64, size: u32, rng: &mut crate::seed::Rng) -> Option<u32> {
    let present = rng.random::<f64>() < p;
    let id = rng.random_range(0..size);
    present.then_some(id)
}

fn sample_assets(config: &GenerationConfig, seed: u64) -> AssetSlots {
    let a = &config.assets;
    let slot = |tag: &str, p: f64, size: u32| optional_slot(p, size, &mut stream(seed, tag));
    let id = |tag: &str, size: u32| stream(seed, tag).random_range(0..size);
    let mut slots = AssetSlots {
        hair_style: slot("assets/hair", a.hair_probability, a.hair_styles),
        eyebrow: id("assets/eyebrow", a.eyebrows),
        beard: slot("assets/beard", a.beard_probability, a.beards),
        eyelashes: id("assets/eyelashes", a.eyelashes),
        melanin: stream(seed, "assets/melanin").random(),
        grayness: stream(seed, "assets/grayness").random::<f64>().powi(3),
        outfit: slot("assets/outfit", a.outfit_probability, a.outfits),
        headwear: slot("assets/headwear", a.headwear_probability, a.headwear),
        facewear: slot("assets/facewear", a.facewear_probability, a.facewear),
        eyewear: slot("assets/eyewear", a.eyewear_probability, a.eyewear),
    };
    if !config.ablation.hair_enabled {
        slots.hair_style = None;
        slots.beard = None;
    }
    if !config.ablation.clothing_enabled {
        slots.outfit = None;
        slots.headwear = None;
        slots.facewear = None;
    }
    slots
}

/// Samples a complete scene. Pure in `(config, assets, seed)`.
pub fn assemble_scene(
    config: &GenerationConfig,
    assets: &ModelAssets,
    seed: u64,
) -> Result<SceneDescription> {
    config.validate()?;
    let rig = &assets.rig;
    assets.library.validate(rig.expression_dim())?;
    if assets.distribution.dim() != rig.identity_dim() {
        return Err(Error::config(format!(
            "identity distribution has dimension {}, rig expects {}",
            assets.distribution.dim(),
            rig.identity_dim()
        )));
    }

    let truncation = (config.identity.truncation_sigma > 0.0).then_some(config.identity.truncation_sigma);
    let identity = sample_identity(&assets.distribution, &mut stream(seed, "identity"), truncation);

    let expression = sample_expression(
        &assets.library,
        config.expression.sequence_probability,
        &mut stream(seed, "expression"),
    )?;
    let mut rng = stream(seed, "gaze");
    let gaze = GazeParams {
        yaw: uniform(&mut rng, [-config.gaze.max_yaw_deg, config.gaze.max_yaw_deg]).to_radians(),
        pitch: uniform(&mut rng, [-config.gaze.max_pitch_deg, config.gaze.max_pitch_deg]).to_radians(),
    };
    let expression = eyelid_pose(&expression, gaze, rig.eyelid_coupling(), config.expression.range)?;

    let mut pose = PoseParams::zeros(rig.joint_count());
    for (name, bounds) in [("neck", config.pose.neck_max_deg), ("head", config.pose.head_max_deg)] {
        if let Some(j) = rig.joint_index(name) {
            let mut rng = stream(seed, &format!("pose/{name}"));
            pose.0[j] = bounds.map(|b| uniform(&mut rng, [-b, b]).to_radians());
        }
    }
    let pose = apply_gaze(&pose, gaze, rig)?;

    let bind = bind_pose_mesh(rig, &identity, &expression)?;
    let camera = sample_camera(&config.camera, bind.bounds(), &mut stream(seed, "camera"));

    let mut rng = stream(seed, "environment");
    let environment = Environment {
        id: rng.random_range(0..config.environment.count),
        rotation: uniform(&mut rng, [-std::f64::consts::PI, std::f64::consts::PI]),
        intensity: uniform(&mut rng, config.environment.intensity),
    };

    Ok(SceneDescription {
        seed,
        identity,
        expression,
        pose,
        gaze,
        assets: sample_assets(config, seed),
        skin_tone: stream(seed, "skin").random(),
        camera,
        environment,
        flags: GenerationFlags {
            hair_enabled: config.ablation.hair_enabled,
            clothing_enabled: config.ablation.clothing_enabled,
        },
    })
}
