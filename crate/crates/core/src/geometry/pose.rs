//! Poses and rigid transforms.
//!
//! Dataset poses follow the simulator convention: a left-handed world with
//! `x` forward, `y` right and `z` up, angles in degrees. They are converted to
//! a right-handed world (`y` negated) exactly once, in [`world_from_camera`].
//! Inside the camera the optical convention is used: `x` right, `y` down,
//! `z` forward.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 6-DoF pose as stored on disk: meters and degrees, left-handed world.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose6 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl Pose6 {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Self {
        Self {
            x,
            y,
            z,
            roll,
            pitch,
            yaw,
        }
    }

    /// Largest positional (meters) and angular (degrees) difference.
    pub fn max_delta(&self, other: &Pose6) -> (f64, f64) {
        let dp = (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs());
        let da = angle_delta(self.roll, other.roll)
            .max(angle_delta(self.pitch, other.pitch))
            .max(angle_delta(self.yaw, other.yaw));
        (dp, da)
    }
}

fn angle_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Wraps an angle in degrees to `[-180, 180]`.
pub fn wrap_degrees(a: f64) -> f64 {
    let w = (a + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && a > 0.0 {
        180.0
    } else {
        w
    }
}

/// Rotation composed as `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn rotation_from_euler(roll_deg: f64, pitch_deg: f64, yaw_deg: f64) -> Matrix3<f64> {
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw_deg.to_radians());
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), pitch_deg.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), roll_deg.to_radians());
    (rz * ry * rx).into_inner()
}

/// Inverse of [`rotation_from_euler`] on the principal branch
/// (pitch in `[-90, 90]`). Returns `(roll, pitch, yaw)` in degrees.
pub fn euler_from_rotation(r: &Matrix3<f64>) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let (roll, yaw) = if r[(2, 0)].abs() < 1.0 - 1e-12 {
        (r[(2, 1)].atan2(r[(2, 2)]), r[(1, 0)].atan2(r[(0, 0)]))
    } else {
        // Gimbal lock: fold roll into yaw.
        (0.0, (-r[(0, 1)]).atan2(r[(1, 1)]))
    };
    (roll.to_degrees(), pitch.to_degrees(), yaw.to_degrees())
}

/// Mirror across the `y = 0` plane; turns the left-handed dataset world into
/// the right-handed internal world and back.
fn handedness_flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, 1.0))
}

/// Rotation taking optical camera axes to body axes (`x` fwd, `y` left, `z` up).
pub fn body_from_optical() -> Matrix3<f64> {
    Matrix3::new(
        0.0, 0.0, 1.0, //
        -1.0, 0.0, 0.0, //
        0.0, -1.0, 0.0,
    )
}

/// A proper rigid motion `p ↦ R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Validates orthonormality and orientation within `1e-9`.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let t = Self {
            rotation,
            translation,
        };
        if !t.is_proper(1e-9) {
            return Err(Error::Domain("rotation is not a proper orthonormal matrix".into()));
        }
        Ok(t)
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == Matrix3::identity() && self.translation == Vector3::zeros()
    }

    /// Projects the rotation back onto SO(3) via SVD.
    pub fn orthonormalized(&self) -> RigidTransform {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u2 = u;
            u2.column_mut(2).neg_mut();
            r = u2 * vt;
        }
        RigidTransform {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Translation and `(roll, pitch, yaw)` of the rotation, in the same
    /// Euler convention as dataset poses.
    pub fn to_six_dof(&self) -> ([f64; 3], [f64; 3]) {
        let (r, p, y) = euler_from_rotation(&self.rotation);
        ([self.translation.x, self.translation.y, self.translation.z], [r, p, y])
    }

    pub fn from_six_dof(t: [f64; 3], rpy: [f64; 3]) -> RigidTransform {
        RigidTransform {
            rotation: rotation_from_euler(rpy[0], rpy[1], rpy[2]),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    /// The same motion seen in horizontally mirrored images.
    pub fn mirrored_horizontally(&self) -> RigidTransform {
        let s = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        RigidTransform {
            rotation: s * self.rotation * s,
            translation: s * self.translation,
        }
    }
}

/// Camera-to-world transform (right-handed world, optical camera axes).
pub fn world_from_camera(pose: &Pose6) -> RigidTransform {
    let s = handedness_flip();
    let r_lh = rotation_from_euler(pose.roll, pose.pitch, pose.yaw);
    let r_body = s * r_lh * s;
    RigidTransform {
        rotation: r_body * body_from_optical(),
        translation: s * Vector3::new(pose.x, pose.y, pose.z),
    }
}

/// Inverse of [`world_from_camera`].
pub fn pose_from_world_camera(t: &RigidTransform) -> Pose6 {
    let s = handedness_flip();
    let r_body = t.rotation * body_from_optical().transpose();
    let r_lh = s * r_body * s;
    let (roll, pitch, yaw) = euler_from_rotation(&r_lh);
    let p = s * t.translation;
    Pose6::new(p.x, p.y, p.z, roll, pitch, yaw)
}

/// Maps points expressed in camera `a` into camera `b`.
///
/// Satisfies `relative(a, c) = relative(b, c) ∘ relative(a, b)`.
pub fn relative_transform(pose_a: &Pose6, pose_b: &Pose6) -> RigidTransform {
    if pose_a == pose_b {
        return RigidTransform::identity();
    }
    world_from_camera(pose_b)
        .inverse()
        .compose(&world_from_camera(pose_a))
}
