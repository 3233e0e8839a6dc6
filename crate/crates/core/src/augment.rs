//! Training-time augmentation: a geometric warp shared by images and labels,
//! followed by appearance changes that only touch images.
//!
//! Application order is fixed: warp, blur, gain/offset, noise, grayscale.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Landmark;
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationMode {
    None,
    AppearanceOnly,
    #[default]
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub mode: AugmentationMode,
    /// Symmetric rotation bound about the image center.
    pub rotation_deg: f64,
    /// Per-corner displacement bound as a fraction of image width.
    pub perspective_jitter: f64,
    pub blur_sigma_max_px: f64,
    /// Symmetric bound on the additive brightness offset (unit intensity).
    pub brightness: f64,
    pub contrast_gain: [f64; 2],
    pub noise_sigma_max: f64,
    pub grayscale_probability: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            mode: AugmentationMode::Full,
            rotation_deg: 30.0,
            perspective_jitter: 0.05,
            blur_sigma_max_px: 2.0,
            brightness: 0.2,
            contrast_gain: [0.7, 1.3],
            noise_sigma_max: 0.03,
            grayscale_probability: 0.1,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::config(format!("augmentation.{name} must be finite and >= 0, got {v}")))
            }
        };
        finite_nonneg("rotation_deg", self.rotation_deg)?;
        finite_nonneg("blur_sigma_max_px", self.blur_sigma_max_px)?;
        finite_nonneg("brightness", self.brightness)?;
        finite_nonneg("noise_sigma_max", self.noise_sigma_max)?;
        if !(0.0..0.25).contains(&self.perspective_jitter) {
            return Err(Error::config("augmentation.perspective_jitter must lie in [0, 0.25)"));
        }
        crate::config::check_range("augmentation.contrast_gain", self.contrast_gain)?;
        if self.contrast_gain[0] < 0.0 {
            return Err(Error::config("augmentation.contrast_gain must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.grayscale_probability) {
            return Err(Error::config("augmentation.grayscale_probability must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// One concrete augmentation. The homography maps source pixel coordinates
/// to destination pixel coordinates (continuous, pixel `i` spans `[i, i+1)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub homography: Matrix3<f64>,
    pub rotation_rad: f64,
    pub brightness: f64,
    pub gain: f64,
    pub blur_sigma_px: f64,
    pub noise_sigma: f64,
    pub noise_seed: u64,
    pub grayscale: bool,
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        Self {
            homography: Matrix3::identity(),
            rotation_rad: 0.0,
            brightness: 0.0,
            gain: 1.0,
            blur_sigma_px: 0.0,
            noise_sigma: 0.0,
            noise_seed: 0,
            grayscale: false,
        }
    }

    pub fn is_geometric_identity(&self) -> bool {
        self.homography == Matrix3::identity()
    }

    pub fn validate(&self) -> Result<()> {
        let det = self.homography.determinant();
        if !det.is_finite() || det.abs() <= 1e-9 {
            return Err(Error::param(format!("homography is singular (det {det})")));
        }
        Ok(())
    }
}

/// Rotation by `angle` about `(cx, cy)` as a homography.
pub fn rotation_homography(angle: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0.0, 0.0, 1.0)
}

/// Homography taking each `src[i]` to `dst[i]`.
pub fn homography_from_points(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Result<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for i in 0..4 {
        let ([x, y], [u, v]) = (src[i], dst[i]);
        let r = 2 * i;
        a.set_row(r, &SMatrix::<f64, 1, 8>::from_row_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]));
        a.set_row(r + 1, &SMatrix::<f64, 1, 8>::from_row_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]));
        b[r] = u;
        b[r + 1] = v;
    }
    let h = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::param("degenerate point correspondence for homography"))?;
    Ok(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
}

/// Draws a spec for a `width`×`height` image.
pub fn sample_augmentation<R: Rng + ?Sized>(
    config: &AugmentationConfig,
    width: u32,
    height: u32,
    rng: &mut R,
) -> Result<AugmentationSpec> {
    let mut spec = AugmentationSpec::identity();
    if config.mode == AugmentationMode::None {
        return Ok(spec);
    }
    let (w, h) = (f64::from(width), f64::from(height));
    // geometry is always drawn so appearance draws do not depend on the mode
    let r = config.rotation_deg.to_radians();
    let angle = rng.random_range(-1.0..=1.0) * r;
    let j = config.perspective_jitter * w;
    let corners = [[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]];
    let jittered = corners.map(|[x, y]| [x + rng.random_range(-1.0..=1.0) * j, y + rng.random_range(-1.0..=1.0) * j]);

    spec.blur_sigma_px = rng.random::<f64>() * config.blur_sigma_max_px;
    spec.gain = config.contrast_gain[0] + rng.random::<f64>() * (config.contrast_gain[1] - config.contrast_gain[0]);
    spec.brightness = rng.random_range(-1.0..=1.0) * config.brightness;
    spec.noise_sigma = rng.random::<f64>() * config.noise_sigma_max;
    spec.noise_seed = rng.random();
    spec.grayscale = rng.random::<f64>() < config.grayscale_probability;

    if config.mode == AugmentationMode::Full {
        let rotation = rotation_homography(angle, 0.5 * w, 0.5 * h);
        let perspective = if j > 0.0 {
            homography_from_points(corners, jittered)?
        } else {
            Matrix3::identity()
        };
        spec.rotation_rad = angle;
        spec.homography = perspective * rotation;
        spec.validate()?;
    }
    Ok(spec)
}

/// Linear RGB image with channels in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF32 {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
}

impl ImageF32 {
    pub fn filled(width: u32, height: u32, value: [f32; 3]) -> Self {
        Self { width, height, pixels: vec![value; (width * height) as usize] }
    }

    pub fn from_rgb8(width: u32, height: u32, pixels: &[[u8; 3]]) -> Self {
        Self {
            width,
            height,
            pixels: pixels.iter().map(|p| p.map(|c| f32::from(c) / 255.0)).collect(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<[u8; 3]> {
        self.pixels
            .iter()
            .map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    fn at(&self, x: i64, y: i64) -> [f32; 3] {
        let x = x.clamp(0, i64::from(self.width) - 1);
        let y = y.clamp(0, i64::from(self.height) - 1);
        self.pixels[(y * i64::from(self.width) + x) as usize]
    }
}

fn map_point(h: &Matrix3<f64>, x: f64, y: f64) -> (f64, f64) {
    let p = h * Vector3::new(x, y, 1.0);
    (p.x / p.z, p.y / p.z)
}

fn inverse(h: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    h.try_inverse().ok_or_else(|| Error::param("homography is not invertible"))
}

fn warp_image(image: &ImageF32, h: &Matrix3<f64>) -> Result<ImageF32> {
    let inv = inverse(h)?;
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            let (sx, sy) = map_point(&inv, f64::from(x) + 0.5, f64::from(y) + 0.5);
            let (fx, fy) = (sx - 0.5, sy - 0.5);
            let (x0, y0) = (fx.floor(), fy.floor());
            let (tx, ty) = ((fx - x0) as f32, (fy - y0) as f32);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let (a, b, c, d) = (image.at(x0, y0), image.at(x0 + 1, y0), image.at(x0, y0 + 1), image.at(x0 + 1, y0 + 1));
            out.pixels[(y * image.width + x) as usize] = std::array::from_fn(|k| {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bottom = c[k] + (d[k] - c[k]) * tx;
                top + (bottom - top) * ty
            });
        }
    }
    Ok(out)
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let raw: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| (w / total) as f32).collect()
}

fn blur(image: &ImageF32, sigma: f64) -> ImageF32 {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as i64;
    let pass = |src: &ImageF32, horizontal: bool| {
        let mut out = src.clone();
        for y in 0..i64::from(src.height) {
            for x in 0..i64::from(src.width) {
                let mut acc = [0.0f32; 3];
                for (k, w) in kernel.iter().enumerate() {
                    let o = k as i64 - r;
                    let p = if horizontal { src.at(x + o, y) } else { src.at(x, y + o) };
                    for c in 0..3 {
                        acc[c] += w * p[c];
                    }
                }
                out.pixels[(y * i64::from(src.width) + x) as usize] = acc;
            }
        }
        out
    };
    pass(&pass(image, true), false)
}

/// Applies `spec` to an image. Components at their identity value are
/// skipped, so the identity spec returns the input unchanged.
pub fn apply_to_image(spec: &AugmentationSpec, image: &ImageF32) -> Result<ImageF32> {
    if image.pixels.is_empty() || image.pixels.len() != (image.width * image.height) as usize {
        return Err(Error::param("image is empty or its size does not match its dimensions"));
    }
    let mut out = if spec.is_geometric_identity() {
        image.clone()
    } else {
        warp_image(image, &spec.homography)?
    };
    if spec.blur_sigma_px > 0.0 {
        out = blur(&out, spec.blur_sigma_px);
    }
    if spec.gain != 1.0 || spec.brightness != 0.0 {
        let (g, b) = (spec.gain as f32, spec.brightness as f32);
        for p in &mut out.pixels {
            *p = p.map(|c| (g * c + b).clamp(0.0, 1.0));
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = rng_from_seed(spec.noise_seed);
        for p in &mut out.pixels {
            for c in p.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *c = (*c + (spec.noise_sigma * n) as f32).clamp(0.0, 1.0);
            }
        }
    }
    if spec.grayscale {
        for p in &mut out.pixels {
            let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            *p = [y; 3];
        }
    }
    Ok(out)
}

/// Warps a class mask (nearest neighbor) and maps landmarks through the
/// homography. Landmarks leaving the frame keep their coordinates and are
/// marked invisible.
pub fn apply_to_labels(
    spec: &AugmentationSpec,
    width: u32,
    height: u32,
    mask: &[u8],
    landmarks: &[Landmark],
) -> Result<(Vec<u8>, Vec<Landmark>)> {
    if mask.len() != (width * height) as usize {
        return Err(Error::param(format!(
            "mask has {} pixels, expected {}x{}",
            mask.len(),
            width,
            height
        )));
    }
    if spec.is_geometric_identity() {
        return Ok((mask.to_vec(), landmarks.to_vec()));
    }
    let inv = inverse(&spec.homography)?;
    let mut out = vec![0u8; mask.len()];
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = map_point(&inv, f64::from(x) + 0.5, f64::from(y) + 0.5);
            let ix = (sx.floor() as i64).clamp(0, i64::from(width) - 1);
            let iy = (sy.floor() as i64).clamp(0, i64::from(height) - 1);
            out[(y * width + x) as usize] = mask[(iy * i64::from(width) + ix) as usize];
        }
    }
    let moved = landmarks
        .iter()
        .map(|l| {
            let (x, y) = map_point(&spec.homography, l.x, l.y);
            let inside = x >= 0.0 && y >= 0.0 && x < f64::from(width) && y < f64::from(height);
            Landmark { x, y, depth: l.depth, visible: l.visible && inside }
        })
        .collect();
    Ok((out, moved))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: u32, h: u32) -> ImageF32 {
        let pixels = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f32 / w as f32, (i / w) as f32 / h as f32);
                [x, y, 0.5 * (x + y)]
            })
            .collect();
        ImageF32 { width: w, height: h, pixels }
    }

    fn lm(x: f64, y: f64) -> Landmark {
        Landmark { x, y, depth: 1.0, visible: true }
    }

    #[test]
    fn mode_none_is_identity() {
        let config = AugmentationConfig { mode: AugmentationMode::None, ..Default::default() };
        let spec = sample_augmentation(&config, 64, 64, &mut rng_from_seed(1)).unwrap();
        assert_eq!(spec, AugmentationSpec::identity());
    }

    #[test]
    fn appearance_only_keeps_identity_geometry() {
        let config = AugmentationConfig { mode: AugmentationMode::AppearanceOnly, ..Default::default() };
        let mut rng = rng_from_seed(2);
        let specs: Vec<_> = (0..20).map(|_| sample_augmentation(&config, 64, 64, &mut rng).unwrap()).collect();
        assert!(specs.iter().all(|s| s.homography == Matrix3::identity()));
        assert!(specs.iter().any(|s| s.gain != 1.0 && s.blur_sigma_px > 0.0));
    }

    #[test]
    fn modes_share_appearance_draws() {
        let full = sample_augmentation(&AugmentationConfig::default(), 64, 64, &mut rng_from_seed(3)).unwrap();
        let config = AugmentationConfig { mode: AugmentationMode::AppearanceOnly, ..Default::default() };
        let app = sample_augmentation(&config, 64, 64, &mut rng_from_seed(3)).unwrap();
        assert_eq!((full.gain, full.noise_seed), (app.gain, app.noise_seed));
    }

    #[test]
    fn identity_spec_is_bit_identical() {
        let img = gradient(17, 9);
        assert_eq!(apply_to_image(&AugmentationSpec::identity(), &img).unwrap(), img);
        let mask: Vec<u8> = (0..17 * 9).map(|i| (i % 11) as u8).collect();
        let lms = vec![lm(3.25, 4.5), lm(-1.0, 2.0)];
        let (m, l) = apply_to_labels(&AugmentationSpec::identity(), 17, 9, &mask, &lms).unwrap();
        assert_eq!(m, mask);
        assert_eq!(l, lms);
    }

    #[test]
    fn gain_and_offset() {
        let img = ImageF32::filled(4, 4, [0.5; 3]);
        let spec = AugmentationSpec { brightness: 0.25, ..AugmentationSpec::identity() };
        let out = apply_to_image(&spec, &img).unwrap();
        assert!(out.pixels.iter().all(|p| *p == [0.75; 3]));
        let spec = AugmentationSpec { gain: 3.0, ..AugmentationSpec::identity() };
        assert!(apply_to_image(&spec, &img).unwrap().pixels.iter().all(|p| *p == [1.0; 3]));
    }

    #[test]
    fn grayscale_is_idempotent_on_gray() {
        let pixels: Vec<[u8; 3]> = (0..=255u8).map(|v| [v; 3]).collect();
        let img = ImageF32::from_rgb8(16, 16, &pixels);
        let spec = AugmentationSpec { grayscale: true, ..AugmentationSpec::identity() };
        let out = apply_to_image(&spec, &img).unwrap().to_rgb8();
        for (a, b) in out.iter().zip(&pixels) {
            assert!((i16::from(a[0]) - i16::from(b[0])).abs() <= 1);
        }
    }

    #[test]
    fn blur_preserves_constant_images_and_mean() {
        let img = ImageF32::filled(12, 12, [0.3, 0.6, 0.9]);
        let spec = AugmentationSpec { blur_sigma_px: 1.5, ..AugmentationSpec::identity() };
        let out = apply_to_image(&spec, &img).unwrap();
        for p in &out.pixels {
            for (a, b) in p.iter().zip([0.3, 0.6, 0.9]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn noise_is_seeded() {
        let img = ImageF32::filled(8, 8, [0.5; 3]);
        let spec = AugmentationSpec { noise_sigma: 0.05, noise_seed: 42, ..AugmentationSpec::identity() };
        let a = apply_to_image(&spec, &img).unwrap();
        assert_eq!(a, apply_to_image(&spec, &img).unwrap());
        assert_ne!(a, img);
    }

    #[test]
    fn quarter_turn_fixes_the_center() {
        let spec = AugmentationSpec {
            homography: rotation_homography(std::f64::consts::FRAC_PI_2, 32.0, 32.0),
            ..AugmentationSpec::identity()
        };
        let mask = vec![0u8; 64 * 64];
        let (_, out) = apply_to_labels(&spec, 64, 64, &mask, &[lm(32.0, 32.0), lm(40.0, 32.0)]).unwrap();
        assert!((out[0].x - 32.0).abs() < 1e-12 && (out[0].y - 32.0).abs() < 1e-12);
        // +x maps to +y in y-down pixel coordinates
        assert!((out[1].x - 32.0).abs() < 1e-12 && (out[1].y - 40.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_rotates_the_mask() {
        let (w, h) = (6u32, 6u32);
        let mask: Vec<u8> = (0..w * h).map(|i| i as u8).collect();
        let spec = AugmentationSpec {
            homography: rotation_homography(std::f64::consts::FRAC_PI_2, 3.0, 3.0),
            ..AugmentationSpec::identity()
        };
        let (out, _) = apply_to_labels(&spec, w, h, &mask, &[]).unwrap();
        // destination (x, y) samples source (y, w-1-x)
        for y in 0..h {
            for x in 0..w {
                assert_eq!(out[(y * w + x) as usize], mask[((w - 1 - x) * w + y) as usize]);
            }
        }
    }

    #[test]
    fn image_and_mask_share_geometry() {
        // an image whose channel encodes the mask id warps to the warped mask
        let (w, h) = (32u32, 32u32);
        let mask: Vec<u8> = (0..w * h).map(|i| ((i % w) / 4 + 10 * ((i / w) / 8)) as u8).collect();
        let spec = sample_augmentation(&AugmentationConfig::default(), w, h, &mut rng_from_seed(8)).unwrap();
        let geo = AugmentationSpec { homography: spec.homography, ..AugmentationSpec::identity() };
        let (warped_mask, _) = apply_to_labels(&geo, w, h, &mask, &[]).unwrap();
        let img = ImageF32 { width: w, height: h, pixels: mask.iter().map(|&m| [f32::from(m); 3]).collect() };
        let warped = apply_to_image(&geo, &img).unwrap();
        let agree = warped
            .pixels
            .iter()
            .zip(&warped_mask)
            .filter(|(p, m)| (p[0] - f32::from(**m)).abs() < 1e-3)
            .count();
        // bilinear and nearest agree away from label boundaries
        assert!(agree as f64 > 0.6 * (w * h) as f64, "{agree}");
    }

    #[test]
    fn homography_solve_hits_the_points() {
        let src = [[0.0, 0.0], [10.0, 0.0], [10.0, 8.0], [0.0, 8.0]];
        let dst = [[0.5, -0.3], [10.2, 0.4], [9.7, 8.6], [-0.4, 7.9]];
        let h = homography_from_points(src, dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let (x, y) = map_point(&h, s[0], s[1]);
            assert!((x - d[0]).abs() < 1e-9 && (y - d[1]).abs() < 1e-9);
        }
        let collinear = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]];
        assert!(homography_from_points(collinear, dst).is_err());
    }

    #[test]
    fn offscreen_landmarks_become_invisible() {
        let spec = AugmentationSpec {
            homography: Matrix3::new(1.0, 0.0, 50.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
            ..AugmentationSpec::identity()
        };
        let (_, out) = apply_to_labels(&spec, 64, 64, &[0; 64 * 64], &[lm(30.0, 5.0), lm(5.0, 5.0)]).unwrap();
        assert_eq!((out[0].x, out[0].visible), (80.0, false));
        assert_eq!((out[1].x, out[1].visible), (55.0, true));
    }

    #[test]
    fn config_validation() {
        AugmentationConfig::default().validate().unwrap();
        let bad = AugmentationConfig { contrast_gain: [1.3, 0.7], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig { rotation_deg: f64::NAN, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn landmark_round_trip(seed in any::<u64>(), x in 0.0f64..128.0, y in 0.0f64..128.0) {
            let spec = sample_augmentation(&AugmentationConfig::default(), 128, 128, &mut rng_from_seed(seed)).unwrap();
            let (bx, by) = map_point(&spec.homography, x, y);
            let (rx, ry) = map_point(&spec.homography.try_inverse().unwrap(), bx, by);
            prop_assert!((rx - x).abs() < 1e-6 && (ry - y).abs() < 1e-6);
        }

        #[test]
        fn landmarks_match_homogeneous_evaluation(seed in any::<u64>(), x in 0.0f64..64.0, y in 0.0f64..64.0) {
            let spec = sample_augmentation(&AugmentationConfig::default(), 64, 64, &mut rng_from_seed(seed)).unwrap();
            let (_, out) = apply_to_labels(&spec, 64, 64, &[0; 64 * 64], &[lm(x, y)]).unwrap();
            let h = spec.homography;
            let w = h[(2, 0)] * x + h[(2, 1)] * y + h[(2, 2)];
            let ex = (h[(0, 0)] * x + h[(0, 1)] * y + h[(0, 2)]) / w;
            let ey = (h[(1, 0)] * x + h[(1, 1)] * y + h[(1, 2)]) / w;
            prop_assert!((out[0].x - ex).abs() < 1e-9 && (out[0].y - ey).abs() < 1e-9);
        }
    }
}
