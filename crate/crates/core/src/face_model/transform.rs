use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

pub(crate) fn v3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

pub(crate) fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Rotation matrix for Euler angles in radians, applied as intrinsic
/// rotations about X, then the new Y, then the new Z: `R = Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_to_rotation(angles: [f64; 3]) -> Result<Matrix3<f64>> {
    if angles.iter().any(|a| !a.is_finite()) {
        return Err(Error::param(format!("non-finite Euler angles {angles:?}")));
    }
    let [a, b, c] = angles;
    let (sa, ca) = a.sin_cos();
    let (sb, cb) = b.sin_cos();
    let (sc, cc) = c.sin_cos();
    #[rustfmt::skip]
    let rx = Matrix3::new(
        1.0, 0.0, 0.0,
        0.0, ca, -sa,
        0.0, sa, ca,
    );
    #[rustfmt::skip]
    let ry = Matrix3::new(
        cb, 0.0, sb,
        0.0, 1.0, 0.0,
        -sb, 0.0, cb,
    );
    #[rustfmt::skip]
    let rz = Matrix3::new(
        cc, -sc, 0.0,
        sc, cc, 0.0,
        0.0, 0.0, 1.0,
    );
    Ok(rx * ry * rz)
}

/// Rigid transform `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Rotation by `rotation` about the fixed point `pivot`.
    pub fn about_point(rotation: Matrix3<f64>, pivot: Vec3) -> Self {
        Self {
            rotation,
            translation: pivot - rotation * pivot,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}
