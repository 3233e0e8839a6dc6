//! Procedurally built desk-scale assets: a low-poly head rig with authored
//! regions, landmark anchors and expression blendshapes, a synthetic scan
//! corpus to learn the identity basis from, and an expression library.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::classes::SemanticClass;
use crate::error::Result;
use crate::face_model::{
    EyelidCoupling, FaceRig, LandmarkAnchor, RigData, DENSE_LANDMARK_COUNT, RIG_FORMAT_VERSION,
};
use crate::learning::{
    fit_identity_basis, fit_identity_distribution, IdentityDistribution, ScanCorpus,
};
use crate::scene::ExpressionLibrary;
use crate::seed::stream;

pub const DEFAULT_IDENTITY_DIM: usize = 50;
pub const EXPRESSION_NAMES: [&str; 25] = [
    "jaw_open",
    "smile_left",
    "smile_right",
    "frown_left",
    "frown_right",
    "brow_raise_left",
    "brow_raise_right",
    "brow_furrow",
    "blink_left",
    "blink_right",
    "eye_wide_left",
    "eye_wide_right",
    "squint_left",
    "squint_right",
    "cheek_puff_left",
    "cheek_puff_right",
    "lip_pucker",
    "lip_funnel",
    "mouth_left",
    "mouth_right",
    "upper_lip_raise",
    "lower_lip_depress",
    "nose_wrinkle",
    "jaw_sideways",
    "lip_press",
];
pub const JOINT_NAMES: [&str; 4] = ["neck", "head", "left_eye", "right_eye"];

const N_LON: usize = 52;
const N_LAT: usize = 48;
const RADII: [f64; 3] = [0.075, 0.105, 0.095];
const EYE_CENTER: (f64, f64) = (0.38, 0.225);
const EYE_RADII: (f64, f64) = (0.16, 0.06);
const EYEBALL_RADIUS: f64 = 0.014;
const EYEBALL_DEPTH: f64 = 0.010;
pub const CORPUS_SCANS: usize = 150;
const LIBRARY_ENTRIES: usize = 2000;
const SEQUENCE_KEYFRAMES: usize = 120;

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn gauss(a: f64, b: f64) -> f64 {
    (-(a * a + b * b)).exp()
}

/// Grid positions on `[lo, hi]` whose spacing follows the inverse of `density`.
fn warped_grid(lo: f64, hi: f64, count: usize, density: impl Fn(f64) -> f64) -> Vec<f64> {
    const STEPS: usize = 20_000;
    let h = (hi - lo) / STEPS as f64;
    let mut cdf = Vec::with_capacity(STEPS + 1);
    cdf.push(0.0);
    for s in 0..STEPS {
        let x = lo + (s as f64 + 0.5) * h;
        cdf.push(cdf[s] + density(x) * h);
    }
    let total = cdf[STEPS];
    (0..count)
        .map(|i| {
            let target = total * i as f64 / (count - 1) as f64;
            let s = cdf.partition_point(|c| *c < target).clamp(1, STEPS);
            let (c0, c1) = (cdf[s - 1], cdf[s]);
            let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
            lo + (s as f64 - 1.0 + frac) * h
        })
        .collect()
}

fn band(x: f64, lo: f64, hi: f64) -> f64 {
    let sharp = 12.0;
    1.0 / (1.0 + (-(x - lo) * sharp).exp()) / (1.0 + ((x - hi) * sharp).exp())
}

/// Unit direction for latitude `phi` and longitude `lambda`; the face looks along +z.
fn direction(phi: f64, lambda: f64) -> [f64; 3] {
    [phi.cos() * lambda.sin(), phi.sin(), phi.cos() * lambda.cos()]
}

/// Semantic class of a frontal face coordinate (`fx`, `fy` are the x/y of the
/// unit direction, `fz` its depth component).
pub(crate) fn region_at(fx: f64, fy: f64, fz: f64) -> SemanticClass {
    if fz < 0.2 {
        return SemanticClass::Skin;
    }
    let ax = fx.abs();
    let eye = ((ax - EYE_CENTER.0) / EYE_RADII.0).powi(2) + ((fy - EYE_CENTER.1) / EYE_RADII.1).powi(2);
    if eye < 1.0 {
        return if fx > 0.0 { SemanticClass::LeftEye } else { SemanticClass::RightEye };
    }
    if (0.15..=0.66).contains(&ax) && (fy - brow_y(ax)).abs() < 0.035 {
        return if fx > 0.0 { SemanticClass::LeftBrow } else { SemanticClass::RightBrow };
    }
    if (fx / 0.29).powi(2) + ((fy + 0.475) / 0.1).powi(2) < 1.0 {
        if (fx / 0.23).powi(2) + ((fy + 0.47) / 0.022).powi(2) < 1.0 {
            return SemanticClass::InnerMouth;
        }
        return if fy > -0.47 { SemanticClass::UpperLip } else { SemanticClass::LowerLip };
    }
    if (-0.24..=0.18).contains(&fy) && ax < 0.05 + 0.09 * ((0.18 - fy) / 0.42).clamp(0.0, 1.0) {
        return SemanticClass::Nose;
    }
    SemanticClass::Skin
}

fn brow_y(ax: f64) -> f64 {
    0.40 + 0.06 * (PI * ((ax - 0.15) / 0.51).clamp(0.0, 1.0)).sin()
}

/// Ellipse metric of the eye on the side of `fx` (< 1 inside).
fn eye_metric(fx: f64, fy: f64, grow: f64) -> f64 {
    ((fx.abs() - EYE_CENTER.0) / (EYE_RADII.0 * grow)).powi(2)
        + ((fy - EYE_CENTER.1) / (EYE_RADII.1 * grow)).powi(2)
}

/// Head surface before eyeball placement.
fn skin_point(phi: f64, lambda: f64) -> [f64; 3] {
    let d = direction(phi, lambda);
    let (fx, fy, fz) = (d[0], d[1], d[2]);
    let jaw = 1.0 - 0.22 * smoothstep((-fy - 0.1) / 0.9);
    let base = [RADII[0] * fx * jaw, RADII[1] * fy, RADII[2] * fz];
    let normal = normalize([fx / RADII[0], fy / RADII[1], fz / RADII[2]]);
    let front = smoothstep(fz / 0.3);
    let ax = fx.abs();
    let relief = 0.016 * gauss(fx / 0.07, fy / 0.2)
        + 0.012 * gauss(fx / 0.09, (fy + 0.14) / 0.07)
        + 0.004 * gauss((ax - 0.1) / 0.05, (fy + 0.18) / 0.05)
        + 0.005 * gauss(fx / 0.5, (fy - 0.4) / 0.08)
        + 0.004 * gauss((ax - 0.5) / 0.15, fy / 0.15)
        + 0.005 * gauss(fx / 0.25, (fy + 0.43) / 0.04)
        + 0.005 * gauss(fx / 0.22, (fy + 0.52) / 0.045)
        - 0.004 * gauss(fx / 0.2, (fy + 0.47) / 0.015)
        + 0.006 * gauss(fx / 0.2, (fy + 0.78) / 0.1)
        - 0.004 * gauss((ax - EYE_CENTER.0) / 0.2, (fy - EYE_CENTER.1) / 0.12);
    add(base, scale(normal, relief * front))
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale(a, 1.0 / n)
}

/// Per-vertex frontal coordinates kept around while building the rig.
#[derive(Debug, Clone, Copy)]
struct VertexFrame {
    fx: f64,
    fy: f64,
    fz: f64,
}

struct HeadGrid {
    lat: Vec<f64>,
    lon: Vec<f64>,
}

impl HeadGrid {
    fn new() -> Self {
        let lat_full = warped_grid(-FRAC_PI_2, FRAC_PI_2, N_LAT + 2, |p| 1.0 + 7.0 * band(p, -0.75, 0.55));
        let lon = warped_grid(-PI, PI, N_LON + 1, |l| 1.0 + 7.0 * band(l, -0.8, 0.8));
        Self {
            lat: lat_full[1..=N_LAT].to_vec(),
            lon,
        }
    }

    fn vertex(&self, row: usize, col: usize) -> u32 {
        (row * (N_LON + 1) + col) as u32
    }

    fn bottom_pole(&self) -> u32 {
        (N_LAT * (N_LON + 1)) as u32
    }

    fn top_pole(&self) -> u32 {
        self.bottom_pole() + 1
    }

    /// Face index of the lower/upper triangle of grid cell (row, col).
    fn cell_faces(&self, row: usize, col: usize) -> (u32, u32) {
        let base = 2 * (row * N_LON + col) as u32;
        (base, base + 1)
    }

    /// Anchor for a frontal face coordinate, located in parameter space.
    fn anchor(&self, fx: f64, fy: f64) -> LandmarkAnchor {
        let phi = fy.clamp(-0.999, 0.999).asin();
        let lambda = (fx / phi.cos()).clamp(-0.999, 0.999).asin();
        let row = self.lat.partition_point(|p| *p <= phi).clamp(1, N_LAT - 1) - 1;
        let col = self.lon.partition_point(|l| *l <= lambda).clamp(1, N_LON) - 1;
        let s = ((lambda - self.lon[col]) / (self.lon[col + 1] - self.lon[col])).clamp(0.0, 1.0);
        let t = ((phi - self.lat[row]) / (self.lat[row + 1] - self.lat[row])).clamp(0.0, 1.0);
        let (lower, upper) = self.cell_faces(row, col);
        if s >= t {
            LandmarkAnchor {
                face: lower,
                bary: [1.0 - s, s - t, t],
            }
        } else {
            LandmarkAnchor {
                face: upper,
                bary: [1.0 - t, s, t - s],
            }
        }
    }
}

/// Standard 68-point layout in frontal face coordinates; image-left (subject's
/// right, -x) first, matching the usual jaw/brows/nose/eyes/mouth ordering.
pub(crate) fn sparse_layout() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(68);
    for i in 0..17 {
        let t = PI * i as f64 / 16.0;
        pts.push((-0.9 * t.cos(), (0.2 - 1.0 * t.sin()).max(-0.8)));
    }
    for k in 0..5 {
        let ax = 0.62 - 0.11 * k as f64;
        pts.push((-ax, brow_y(ax)));
    }
    for k in 0..5 {
        let ax = 0.18 + 0.11 * k as f64;
        pts.push((ax, brow_y(ax)));
    }
    for fy in [0.2, 0.08, -0.04, -0.14] {
        pts.push((0.0, fy));
    }
    for fx in [-0.12, -0.06, 0.0, 0.06, 0.12] {
        pts.push((fx, -0.22));
    }
    let eye = |sign: f64| {
        let c = EYE_CENTER;
        let outer = [
            (c.0 + 0.15, c.1),
            (c.0 + 0.05, c.1 + 0.045),
            (c.0 - 0.06, c.1 + 0.045),
            (c.0 - 0.15, c.1),
            (c.0 - 0.06, c.1 - 0.045),
            (c.0 + 0.05, c.1 - 0.045),
        ];
        outer.map(|(x, y)| (sign * x, y))
    };
    pts.extend(eye(-1.0));
    let left = eye(1.0);
    // left eye starts at the inner corner
    pts.extend([left[3], left[2], left[1], left[0], left[5], left[4]]);
    pts.extend([
        (-0.28, -0.47),
        (-0.18, -0.42),
        (-0.08, -0.39),
        (0.0, -0.40),
        (0.08, -0.39),
        (0.18, -0.42),
        (0.28, -0.47),
        (0.18, -0.53),
        (0.08, -0.56),
        (0.0, -0.57),
        (-0.08, -0.56),
        (-0.18, -0.53),
        (-0.22, -0.47),
        (-0.08, -0.455),
        (0.0, -0.455),
        (0.08, -0.455),
        (0.22, -0.47),
        (0.08, -0.485),
        (0.0, -0.485),
        (-0.08, -0.485),
    ]);
    pts
}

/// Sunflower spiral over the frontal face ellipse.
fn dense_layout() -> Vec<(f64, f64)> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..DENSE_LANDMARK_COUNT)
        .map(|i| {
            let r = ((i as f64 + 0.5) / DENSE_LANDMARK_COUNT as f64).sqrt();
            let a = i as f64 * golden;
            (0.72 * r * a.cos(), -0.1 + 0.68 * r * a.sin())
        })
        .collect()
}

fn build_template() -> RigData {
    let grid = HeadGrid::new();
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut frames = Vec::new();
    for (row, &phi) in grid.lat.iter().enumerate() {
        for (col, &lambda) in grid.lon.iter().enumerate() {
            vertices.push(skin_point(phi, lambda));
            uvs.push([col as f64 / N_LON as f64, (row + 1) as f64 / (N_LAT + 1) as f64]);
            let d = direction(phi, lambda);
            frames.push(VertexFrame {
                fx: d[0],
                fy: d[1],
                fz: d[2],
            });
        }
    }
    vertices.push(skin_point(-FRAC_PI_2, 0.0));
    uvs.push([0.5, 0.0]);
    frames.push(VertexFrame { fx: 0.0, fy: -1.0, fz: 0.0 });
    vertices.push(skin_point(FRAC_PI_2, 0.0));
    uvs.push([0.5, 1.0]);
    frames.push(VertexFrame { fx: 0.0, fy: 1.0, fz: 0.0 });

    let mut faces = Vec::new();
    let mut regions = Vec::new();
    let class_of = |corners: &[(usize, usize)]| {
        let phi = corners.iter().map(|c| grid.lat[c.0]).sum::<f64>() / corners.len() as f64;
        let lambda = corners.iter().map(|c| grid.lon[c.1]).sum::<f64>() / corners.len() as f64;
        let d = direction(phi, lambda);
        region_at(d[0], d[1], d[2])
    };
    for row in 0..N_LAT - 1 {
        for col in 0..N_LON {
            let a = grid.vertex(row, col);
            let b = grid.vertex(row, col + 1);
            let c = grid.vertex(row + 1, col + 1);
            let d = grid.vertex(row + 1, col);
            faces.push([a, b, c]);
            regions.push(class_of(&[(row, col), (row, col + 1), (row + 1, col + 1)]));
            faces.push([a, c, d]);
            regions.push(class_of(&[(row, col), (row + 1, col + 1), (row + 1, col)]));
        }
    }
    for col in 0..N_LON {
        faces.push([grid.bottom_pole(), grid.vertex(0, col + 1), grid.vertex(0, col)]);
        regions.push(SemanticClass::Skin);
        faces.push([grid.top_pole(), grid.vertex(N_LAT - 1, col), grid.vertex(N_LAT - 1, col + 1)]);
        regions.push(SemanticClass::Skin);
    }

    // eyeballs: eye-region vertices are pulled onto spheres around the eye joints
    let eye_centers: Vec<[f64; 3]> = [1.0, -1.0]
        .iter()
        .map(|sign| {
            let fx = sign * EYE_CENTER.0;
            let phi = EYE_CENTER.1.asin();
            let lambda = (fx / phi.cos()).asin();
            let surface = skin_point(phi, lambda);
            let n = normalize(direction(phi, lambda));
            sub(surface, scale(n, EYEBALL_DEPTH))
        })
        .collect();
    let n = vertices.len();
    let mut weights = vec![0.0; 4 * n];
    for v in 0..n {
        let f = frames[v];
        let mut eye_w = 0.0;
        if f.fz > 0.2 {
            let e = eye_metric(f.fx, f.fy, 1.0);
            if e < 1.0 {
                let center = eye_centers[if f.fx > 0.0 { 0 } else { 1 }];
                let on_sphere = add(center, scale(normalize(sub(vertices[v], center)), EYEBALL_RADIUS));
                let w = smoothstep((1.0 - e) * 2.0);
                vertices[v] = add(scale(vertices[v], 1.0 - w), scale(on_sphere, w));
            }
            let grown = eye_metric(f.fx, f.fy, 1.1);
            eye_w = smoothstep((1.0 - grown) / 0.5);
        }
        let neck_w = 0.85 * smoothstep((-f.fy - 0.55) / 0.4);
        let head_w = 1.0 - eye_w - neck_w;
        weights[v] = neck_w;
        weights[n + v] = head_w;
        let eye_joint = if f.fx > 0.0 { 2 } else { 3 };
        weights[eye_joint * n + v] = eye_w;
    }

    let expression_basis = expression_basis(&vertices, &frames);
    let landmarks = sparse_layout().into_iter().map(|(x, y)| grid.anchor(x, y)).collect();
    let dense_landmarks = dense_layout().into_iter().map(|(x, y)| grid.anchor(x, y)).collect();
    let blink_l = EXPRESSION_NAMES.iter().position(|n| *n == "blink_left").unwrap();
    let blink_r = EXPRESSION_NAMES.iter().position(|n| *n == "blink_right").unwrap();
    let wide_l = EXPRESSION_NAMES.iter().position(|n| *n == "eye_wide_left").unwrap();
    let wide_r = EXPRESSION_NAMES.iter().position(|n| *n == "eye_wide_right").unwrap();

    let data = RigData {
        format_version: RIG_FORMAT_VERSION,
        vertex_count: n,
        identity_dim: 1,
        expression_dim: EXPRESSION_NAMES.len(),
        joint_count: 4,
        template_vertices: vertices,
        faces,
        vertex_uvs: uvs,
        identity_basis: vec![0.0; n * 3],
        expression_basis,
        skinning_weights: weights,
        template_joints: vec![
            [0.0, -0.115, -0.02],
            [0.0, -0.06, -0.01],
            eye_centers[0],
            eye_centers[1],
        ],
        joint_parents: vec![-1, 0, 1, 1],
        joint_names: JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
        semantic_regions: regions,
        landmarks,
        dense_landmarks,
        eyelid_coupling: vec![
            EyelidCoupling { component: blink_l, per_radian: 0.8 },
            EyelidCoupling { component: blink_r, per_radian: 0.8 },
            EyelidCoupling { component: wide_l, per_radian: -0.6 },
            EyelidCoupling { component: wide_r, per_radian: -0.6 },
        ],
        expression_names: EXPRESSION_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    data
}

/// Authored expression blendshapes as smooth displacement fields over the
/// frontal face coordinates.
fn expression_basis(vertices: &[[f64; 3]], frames: &[VertexFrame]) -> Vec<f64> {
    let n = vertices.len();
    let mut basis = vec![0.0; EXPRESSION_NAMES.len() * n * 3];
    for (v, f) in frames.iter().enumerate() {
        let front = smoothstep((f.fz + 0.1) / 0.4);
        if front == 0.0 {
            continue;
        }
        let (x, y) = (f.fx, f.fy);
        let corner = |side: f64| gauss((x - side * 0.28) / 0.12, (y + 0.47) / 0.1);
        let brow = |side: f64| gauss((x - side * 0.4) / 0.2, (y - 0.42) / 0.1);
        let upper_lid = |side: f64| {
            let e = eye_metric(x, y, 1.15);
            if x * side > 0.0 && e < 1.0 && y > EYE_CENTER.1 - 0.01 {
                smoothstep((1.0 - e) * 1.5)
            } else {
                0.0
            }
        };
        let lower_lid = |side: f64| {
            let e = eye_metric(x, y, 1.15);
            if x * side > 0.0 && e < 1.0 && y <= EYE_CENTER.1 - 0.01 {
                smoothstep((1.0 - e) * 1.5)
            } else {
                0.0
            }
        };
        let mouth = gauss(x / 0.3, (y + 0.47) / 0.1);
        let upper_lip = gauss(x / 0.25, (y + 0.42) / 0.05);
        let lower_lip = gauss(x / 0.25, (y + 0.53) / 0.05);
        let below_mouth = smoothstep((-0.47 - y) / 0.06);
        let fields: [[f64; 3]; 25] = [
            scale([0.0, -1.0, -0.25], 0.018 * below_mouth),
            scale([0.3, 1.0, 0.0], 0.008 * corner(1.0)),
            scale([-0.3, 1.0, 0.0], 0.008 * corner(-1.0)),
            scale([0.1, -1.0, 0.0], 0.006 * corner(1.0)),
            scale([-0.1, -1.0, 0.0], 0.006 * corner(-1.0)),
            scale([0.0, 1.0, 0.0], 0.008 * brow(1.0)),
            scale([0.0, 1.0, 0.0], 0.008 * brow(-1.0)),
            [
                -x.signum() * 0.004 * gauss((x.abs() - 0.2) / 0.12, (y - 0.38) / 0.08),
                -0.004 * gauss((x.abs() - 0.2) / 0.12, (y - 0.38) / 0.08),
                0.0,
            ],
            [0.0, -0.011 * upper_lid(1.0) + 0.002 * lower_lid(1.0), 0.0],
            [0.0, -0.011 * upper_lid(-1.0) + 0.002 * lower_lid(-1.0), 0.0],
            [0.0, 0.004 * upper_lid(1.0), 0.0],
            [0.0, 0.004 * upper_lid(-1.0), 0.0],
            [0.0, 0.004 * lower_lid(1.0) + 0.003 * gauss((x - 0.4) / 0.15, (y - 0.05) / 0.1), 0.0],
            [0.0, 0.004 * lower_lid(-1.0) + 0.003 * gauss((x + 0.4) / 0.15, (y - 0.05) / 0.1), 0.0],
            scale([0.5, -0.2, 0.8], 0.008 * gauss((x - 0.45) / 0.18, (y + 0.3) / 0.18)),
            scale([-0.5, -0.2, 0.8], 0.008 * gauss((x + 0.45) / 0.18, (y + 0.3) / 0.18)),
            [-x * 0.02 * mouth, 0.0, 0.008 * mouth],
            [0.0, (y + 0.47) * 0.04 * mouth, 0.005 * mouth],
            [0.006 * mouth, 0.0, 0.0],
            [-0.006 * mouth, 0.0, 0.0],
            [0.0, 0.005 * upper_lip, 0.0],
            [0.0, -0.005 * lower_lip, 0.0],
            [0.0, 0.004 * gauss((x.abs() - 0.1) / 0.08, (y + 0.1) / 0.1), 0.0],
            [0.008 * below_mouth, 0.0, 0.0],
            [0.0, -(y + 0.47) * 0.05 * mouth, -0.002 * mouth],
        ];
        for (c, field) in fields.iter().enumerate() {
            for a in 0..3 {
                basis[(c * n + v) * 3 + a] = field[a] * front;
            }
        }
    }
    basis
}

/// Synthetic registered scans: the template plus random combinations of
/// smooth anatomical deformation fields and small vertex noise.
pub fn synthetic_corpus(rig: &FaceRig, scans: usize, seed: u64) -> Result<ScanCorpus> {
    let template = rig.template_vertices();
    let (lo, hi) = crate::face_model::bounds_of(template);
    let center: Vec<f64> = (0..3).map(|a| 0.5 * (lo[a] + hi[a])).collect();
    let half: Vec<f64> = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).collect();
    let unit: Vec<[f64; 3]> = template
        .iter()
        .map(|p| normalize([(p[0] - center[0]) / half[0], (p[1] - center[1]) / half[1], (p[2] - center[2]) / half[2]]))
        .collect();

    let mut field_rng = stream(seed, "corpus/fields");
    let mut fields: Vec<Vec<[f64; 3]>> = Vec::new();
    // global proportions
    for a in 0..3 {
        fields.push(
            template
                .iter()
                .map(|p| {
                    let mut d = [0.0; 3];
                    d[a] = 0.06 * (p[a] - center[a]);
                    d
                })
                .collect(),
        );
    }
    let local = |f: &dyn Fn(&[f64; 3]) -> [f64; 3]| -> Vec<[f64; 3]> { unit.iter().map(f).collect() };
    fields.push(local(&|u| [0.006 * u[0] * smoothstep(-u[1]), 0.0, 0.0]));
    fields.push(local(&|u| [0.0, -0.006 * gauss(u[0] / 0.3, (u[1] + 0.8) / 0.2), 0.0]));
    fields.push(local(&|u| [0.0, 0.0, 0.005 * gauss(u[0] / 0.12, (u[1] + 0.05) / 0.25) * smoothstep(u[2])]));
    fields.push(local(&|u| [0.004 * u[0] * gauss(u[0] / 0.15, (u[1] + 0.15) / 0.15), 0.0, 0.0]));
    fields.push(local(&|u| {
        let w = gauss((u[0].abs() - 0.4) / 0.2, (u[1] - 0.22) / 0.15) * smoothstep(u[2]);
        [0.003 * u[0].signum() * w, 0.0, 0.0]
    }));
    fields.push(local(&|u| [0.0, 0.003 * gauss((u[0].abs() - 0.4) / 0.2, (u[1] - 0.22) / 0.15) * smoothstep(u[2]), 0.0]));
    fields.push(local(&|u| [0.0, 0.0, 0.004 * gauss(u[0] / 0.5, (u[1] - 0.45) / 0.1) * smoothstep(u[2])]));
    fields.push(local(&|u| [0.003 * u[0].signum() * gauss((u[0].abs() - 0.55) / 0.2, u[1] / 0.2), 0.0, 0.002]));
    fields.push(local(&|u| [0.004 * u[0] * gauss(u[0] / 0.35, (u[1] + 0.47) / 0.1), 0.0, 0.0]));
    fields.push(local(&|u| [0.0, 0.003 * (u[1] + 0.47) * 10.0 * gauss(u[0] / 0.3, (u[1] + 0.47) / 0.1), 0.0]));
    fields.push(local(&|u| [0.0, 0.0, -0.008 * smoothstep(-u[2])]));
    fields.push(local(&|u| [0.0, 0.0, -0.006 * u[2].max(0.0) * (1.0 - u[0].abs())]));
    fields.push(local(&|u| [0.002 * smoothstep(u[0] * 4.0), 0.0, 0.0]));
    while fields.len() < 62 {
        let c = normalize([
            field_rng.random_range(-1.0..1.0),
            field_rng.random_range(-1.0..1.0),
            field_rng.random_range(-0.3..1.0),
        ]);
        let width: f64 = field_rng.random_range(0.25..0.8);
        let amp: f64 = field_rng.random_range(0.002..0.005);
        fields.push(local(&|u| {
            let d2 = (u[0] - c[0]).powi(2) + (u[1] - c[1]).powi(2) + (u[2] - c[2]).powi(2);
            scale(*u, amp * (-d2 / (width * width)).exp())
        }));
    }

    let mut rng = stream(seed, "corpus/scans");
    let out = (0..scans)
        .map(|_| {
            let coeffs: Vec<f64> = fields.iter().map(|_| rng.sample(StandardNormal)).collect();
            template
                .iter()
                .enumerate()
                .map(|(v, p)| {
                    let mut q = *p;
                    for (field, c) in fields.iter().zip(&coeffs) {
                        for a in 0..3 {
                            q[a] += c * field[v][a];
                        }
                    }
                    for x in q.iter_mut() {
                        let noise: f64 = rng.sample(StandardNormal);
                        *x += 1e-4 * noise;
                    }
                    q
                })
                .collect()
        })
        .collect();
    ScanCorpus::new(out, rig.faces())
}

/// Expression library: sparse random activations plus a smoothly animated
/// keyframe sequence.
pub fn expression_library(dim: usize, seed: u64) -> ExpressionLibrary {
    let mut rng = stream(seed, "library/entries");
    let signed = EXPRESSION_NAMES.iter().position(|n| *n == "jaw_sideways");
    let entries = (0..LIBRARY_ENTRIES)
        .map(|_| {
            let mut psi = vec![0.0; dim];
            if rng.random::<f64>() < 0.1 {
                return psi;
            }
            let active = rng.random_range(1..=4);
            for _ in 0..active {
                let c = rng.random_range(0..dim);
                psi[c] = if Some(c) == signed {
                    rng.random_range(-1.0..1.0)
                } else {
                    rng.random_range(0.0..1.0)
                };
            }
            psi
        })
        .collect();
    let mut rng = stream(seed, "library/sequence");
    let tracks: Vec<(f64, f64, f64)> = (0..dim)
        .map(|_| (rng.random_range(0.05..0.3), rng.random_range(0.0..2.0 * PI), rng.random_range(0.2..1.0)))
        .collect();
    let sequence = (0..SEQUENCE_KEYFRAMES)
        .map(|t| {
            tracks
                .iter()
                .enumerate()
                .map(|(c, (w, p, a))| {
                    let s = (w * t as f64 + p).sin();
                    if Some(c) == signed { a * s } else { a * s.max(0.0) }
                })
                .collect()
        })
        .collect();
    ExpressionLibrary { entries, sequence }
}

/// Everything needed to assemble and render scenes.
#[derive(Debug, Clone)]
pub struct ModelAssets {
    pub rig: FaceRig,
    pub distribution: IdentityDistribution,
    pub library: ExpressionLibrary,
}

pub const DESK_SEED: u64 = 0x5eed_face;

/// Template rig with a placeholder single-component identity basis.
pub fn desk_template_rig() -> FaceRig {
    FaceRig::new(build_template()).expect("desk template is valid")
}

/// Builds the desk-scale rig, learns its identity basis from the synthetic
/// corpus and fits the identity distribution. Deterministic.
pub fn desk_assets() -> Result<ModelAssets> {
    let template = desk_template_rig();
    let corpus = synthetic_corpus(&template, CORPUS_SCANS, DESK_SEED)?;
    let fit = fit_identity_basis(&corpus, DEFAULT_IDENTITY_DIM, template.template_vertices())?;
    let rig = template.with_identity_basis(fit.components, fit.basis)?;
    let distribution = fit_identity_distribution(&fit.betas)?;
    let library = expression_library(rig.expression_dim(), DESK_SEED);
    Ok(ModelAssets {
        rig,
        distribution,
        library,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face_model::{v3, Vec3};

    #[test]
    fn template_is_valid_and_closed_outward() {
        let rig = FaceRig::new(build_template()).unwrap();
        assert_eq!(rig.vertex_count(), (N_LON + 1) * N_LAT + 2);
        let center = Vec3::new(0.0, 0.0, 0.0);
        let v = rig.template_vertices();
        let mut inward = 0;
        for f in rig.faces().iter() {
            let [a, b, c] = f.map(|i| v3(v[i as usize]));
            let n = (b - a).cross(&(c - a));
            let centroid = (a + b + c) / 3.0;
            if n.dot(&(centroid - center)) <= 0.0 {
                inward += 1;
            }
        }
        // eyeball patches may tilt a few faces; the shell itself must face out
        assert!(inward < 10, "{inward} inward-facing faces");
    }

    #[test]
    fn all_facial_classes_present() {
        let rig = desk_template_rig();
        for class in SemanticClass::FACIAL {
            if class == SemanticClass::Background {
                continue;
            }
            let count = rig.semantic_regions().iter().filter(|c| **c == class).count();
            assert!(count >= 4, "{class:?} has only {count} faces");
        }
    }

    #[test]
    fn landmarks_land_in_expected_regions() {
        let rig = desk_template_rig();
        let regions = rig.semantic_regions();
        let lm = rig.landmarks();
        assert_eq!(lm.len(), 68);
        assert_eq!(rig.dense_landmarks().len(), DENSE_LANDMARK_COUNT);
        assert_eq!(regions[lm[36].face as usize], SemanticClass::RightEye);
        assert_eq!(regions[lm[45].face as usize], SemanticClass::LeftEye);
        assert_eq!(regions[lm[30].face as usize], SemanticClass::Nose);
        let v = rig.template_vertices();
        let pos = |i: usize| {
            let a = lm[i];
            let f = rig.faces()[a.face as usize];
            (0..3).fold(Vec3::zeros(), |acc, k| acc + v3(v[f[k] as usize]) * a.bary[k])
        };
        // image-left landmarks sit at -x
        assert!(pos(36).x < pos(39).x && pos(39).x < 0.0);
        assert!(pos(45).x > pos(42).x && pos(42).x > 0.0);
        assert!(pos(8).y < pos(57).y && pos(57).y < pos(51).y && pos(51).y < pos(30).y);
    }

    #[test]
    fn eye_joints_drive_eye_vertices() {
        let rig = desk_template_rig();
        let left = rig.joint_index("left_eye").unwrap();
        let strong = (0..rig.vertex_count()).filter(|v| rig.weight(left, *v) > 0.99).count();
        assert!(strong > 5);
    }

    #[test]
    fn warped_grid_is_monotone_and_spans_range() {
        let g = warped_grid(-1.0, 2.0, 30, |x| 1.0 + x * x);
        assert!((g[0] + 1.0).abs() < 1e-12 && (g[29] - 2.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
