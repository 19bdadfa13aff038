use nalgebra::{Point3, Rotation3, Unit, Vector3};
use std::f64::consts::{PI, TAU};

/// Wrap an angle to the half-open interval `(-pi, pi]`.
pub(crate) fn wrap_angle(a: f64) -> f64 {
    let mut x = a % TAU;
    if x <= -PI {
        x += TAU;
    } else if x > PI {
        x -= TAU;
    }
    x
}

/// Rigid transform stored as translation plus intrinsic Z-Y-X Euler angles.
///
/// `euler = [yaw, pitch, roll]`; the rotation is `Rz(yaw) * Ry(pitch) * Rx(roll)`.
/// Angles are kept wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vector3<f64>,
    pub euler: Vector3<f64>,
}

impl Pose {
    pub fn new(translation: Vector3<f64>, euler: Vector3<f64>) -> Self {
        Self {
            translation,
            euler: euler.map(wrap_angle),
        }
    }

    pub fn identity() -> Self {
        Self {
            translation: Vector3::zeros(),
            euler: Vector3::zeros(),
        }
    }

    pub fn from_parts(rotation: &Rotation3<f64>, translation: Vector3<f64>) -> Self {
        let (roll, pitch, yaw) = rotation.euler_angles();
        Self::new(translation, Vector3::new(yaw, pitch, roll))
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_euler_angles(self.euler.z, self.euler.y, self.euler.x)
    }

    /// Map a point from the object frame into the world frame: `R x + t`.
    pub fn transform_point(&self, x: &Point3<f64>) -> Point3<f64> {
        self.rotation() * x + self.translation
    }

    /// Map a world point back into the object frame: `R^T (y - t)`.
    pub fn inverse_transform_point(&self, y: &Point3<f64>) -> Point3<f64> {
        self.rotation().inverse() * Point3::from(y - self.translation)
    }

    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * v
    }

    pub fn inverse_rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse() * v
    }
}

/// A surface point paired with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedPoint {
    pub position: Point3<f64>,
    pub normal: Unit<Vector3<f64>>,
}

impl OrientedPoint {
    pub fn new(position: Point3<f64>, normal: Vector3<f64>) -> Self {
        Self {
            position,
            normal: Unit::new_normalize(normal),
        }
    }

    /// Transform by a rigid pose (rotates the normal, no renormalisation drift).
    pub fn transformed(&self, pose: &Pose) -> Self {
        let rot = pose.rotation();
        Self {
            position: rot * self.position + pose.translation,
            normal: Unit::new_unchecked(rot * self.normal.into_inner()),
        }
    }
}
