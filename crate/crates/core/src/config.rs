//! The generation config document (TOML). Every key carries its unit in
//! its name; missing sections fall back to the defaults below.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentationConfig;
use crate::error::{Error, Result};
use crate::seed::content_hash;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub version: u32,
    pub image: ImageConfig,
    pub identity: IdentityConfig,
    pub expression: ExpressionConfig,
    pub gaze: GazeConfig,
    pub pose: PoseConfig,
    pub camera: CameraConfig,
    pub environment: EnvironmentConfig,
    pub assets: AssetConfig,
    pub ablation: AblationConfig,
    pub augmentation: AugmentationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageConfig {
    pub width_px: u32,
    pub height_px: u32,
    pub dense_landmarks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityConfig {
    /// Clamp on each whitened coordinate; `0` disables truncation.
    pub truncation_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpressionConfig {
    /// Probability of drawing from the animated sequence instead of the library.
    pub sequence_probability: f64,
    pub range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GazeConfig {
    pub max_yaw_deg: f64,
    pub max_pitch_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseConfig {
    /// Symmetric bound per Euler axis (x, y, z).
    pub neck_max_deg: [f64; 3],
    pub head_max_deg: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub distance_m: [f64; 2],
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub focal_mm: [f64; 2],
    pub aperture_f: [f64; 2],
    pub sensor_width_mm: f64,
    /// Look-at jitter as a fraction of the head's half-extent per axis, in [0, 1].
    pub look_at_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvironmentConfig {
    pub count: u32,
    pub intensity: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssetConfig {
    pub hair_styles: u32,
    pub eyebrows: u32,
    pub beards: u32,
    pub eyelashes: u32,
    pub outfits: u32,
    pub headwear: u32,
    pub facewear: u32,
    pub eyewear: u32,
    pub hair_probability: f64,
    pub beard_probability: f64,
    pub outfit_probability: f64,
    pub headwear_probability: f64,
    pub facewear_probability: f64,
    pub eyewear_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Disables scalp hair and beards.
    pub hair_enabled: bool,
    /// Disables outfits, headwear and facewear.
    pub clothing_enabled: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            image: ImageConfig::default(),
            identity: IdentityConfig::default(),
            expression: ExpressionConfig::default(),
            gaze: GazeConfig::default(),
            pose: PoseConfig::default(),
            camera: CameraConfig::default(),
            environment: EnvironmentConfig::default(),
            assets: AssetConfig::default(),
            ablation: AblationConfig::default(),
            augmentation: AugmentationConfig::default(),
        }
    }
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            width_px: 256,
            height_px: 256,
            dense_landmarks: false,
        }
    }
}

impl Default for IdentityConfig {
    fn default() -> Self {
        Self {
            truncation_sigma: crate::learning::DEFAULT_TRUNCATION_SIGMA,
        }
    }
}

impl Default for ExpressionConfig {
    fn default() -> Self {
        Self {
            sequence_probability: 0.25,
            range: [-1.0, 1.0],
        }
    }
}

impl Default for GazeConfig {
    fn default() -> Self {
        Self {
            max_yaw_deg: 30.0,
            max_pitch_deg: 20.0,
        }
    }
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            neck_max_deg: [10.0, 15.0, 5.0],
            head_max_deg: [15.0, 20.0, 10.0],
        }
    }
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            distance_m: [0.35, 1.2],
            azimuth_deg: [-60.0, 60.0],
            elevation_deg: [-25.0, 25.0],
            focal_mm: [35.0, 120.0],
            aperture_f: [1.8, 16.0],
            sensor_width_mm: 36.0,
            look_at_jitter: 0.3,
        }
    }
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            count: 448,
            intensity: [0.5, 1.5],
        }
    }
}

impl Default for AssetConfig {
    fn default() -> Self {
        Self {
            hair_styles: 512,
            eyebrows: 162,
            beards: 142,
            eyelashes: 42,
            outfits: 30,
            headwear: 36,
            facewear: 7,
            eyewear: 11,
            hair_probability: 0.9,
            beard_probability: 0.3,
            outfit_probability: 0.95,
            headwear_probability: 0.15,
            facewear_probability: 0.05,
            eyewear_probability: 0.15,
        }
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            hair_enabled: true,
            clothing_enabled: true,
        }
    }
}

pub(crate) fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if r[0].is_finite() && r[1].is_finite() && r[0] <= r[1] {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a finite [min, max] range, got {r:?}")))
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.image.width_px < 16 || self.image.height_px < 16 {
            return Err(Error::config("image resolution must be at least 16x16"));
        }
        let t = self.identity.truncation_sigma;
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::config("identity.truncation_sigma must be finite and >= 0"));
        }
        check_probability("expression.sequence_probability", self.expression.sequence_probability)?;
        check_range("expression.range", self.expression.range)?;
        for (name, v) in [
            ("gaze.max_yaw_deg", self.gaze.max_yaw_deg),
            ("gaze.max_pitch_deg", self.gaze.max_pitch_deg),
        ] {
            if !(0.0..=45.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 45], got {v}")));
            }
        }
        for v in self.pose.neck_max_deg.iter().chain(&self.pose.head_max_deg) {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::config("pose bounds must be finite and >= 0"));
            }
        }
        let c = &self.camera;
        check_range("camera.distance_m", c.distance_m)?;
        check_range("camera.azimuth_deg", c.azimuth_deg)?;
        check_range("camera.elevation_deg", c.elevation_deg)?;
        check_range("camera.focal_mm", c.focal_mm)?;
        check_range("camera.aperture_f", c.aperture_f)?;
        if c.distance_m[0] <= 0.0 || c.focal_mm[0] <= 0.0 || c.sensor_width_mm <= 0.0 || !c.sensor_width_mm.is_finite() {
            return Err(Error::config("camera distance, focal length and sensor width must be positive"));
        }
        if c.elevation_deg[0] < -89.0 || c.elevation_deg[1] > 89.0 {
            return Err(Error::config("camera.elevation_deg must stay within [-89, 89]"));
        }
        if !(0.0..=1.0).contains(&c.look_at_jitter) {
            return Err(Error::config("camera.look_at_jitter must lie in [0, 1]"));
        }
        check_range("environment.intensity", self.environment.intensity)?;
        let a = &self.assets;
        if self.environment.count == 0
            || [a.hair_styles, a.eyebrows, a.beards, a.eyelashes, a.outfits, a.headwear, a.facewear, a.eyewear]
                .contains(&0)
        {
            return Err(Error::config("collection sizes must be at least 1"));
        }
        for (name, p) in [
            ("assets.hair_probability", a.hair_probability),
            ("assets.beard_probability", a.beard_probability),
            ("assets.outfit_probability", a.outfit_probability),
            ("assets.headwear_probability", a.headwear_probability),
            ("assets.facewear_probability", a.facewear_probability),
            ("assets.eyewear_probability", a.eyewear_probability),
        ] {
            check_probability(name, p)?;
        }
        self.augmentation.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: GenerationConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Fingerprint over the canonical serialization.
    pub fn content_hash(&self) -> String {
        content_hash(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = GenerationConfig::default();
        c.validate().unwrap();
        let back = GenerationConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_document_fills_defaults() {
        let c = GenerationConfig::from_toml("version = 1\n[image]\nwidth_px = 128\nheight_px = 128\n").unwrap();
        assert_eq!(c.image.width_px, 128);
        assert_eq!(c.camera, CameraConfig::default());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(GenerationConfig::from_toml("version = 2").is_err());
        assert!(GenerationConfig::from_toml("bogus = 1").is_err());
        assert!(GenerationConfig::from_toml("[camera]\nfocal_mm = [50.0, 20.0]").is_err());
        assert!(GenerationConfig::from_toml("[image]\nwidth_px = 8").is_err());
        assert!(GenerationConfig::from_toml("[gaze]\nmax_yaw_deg = 60.0").is_err());
        let err = GenerationConfig::from_toml("[assets]\nbeard_probability = 1.5").unwrap_err();
        assert!(err.to_string().contains("beard_probability"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = GenerationConfig::default();
        let mut b = a.clone();
        assert_eq!(a.content_hash(), b.content_hash());
        b.ablation.hair_enabled = false;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
