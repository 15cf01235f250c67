//! Rotation and frame algebra.
//!
//! Attitude is kept as a direction cosine matrix. Euler angles use the
//! Z-Y-X (yaw, pitch, roll) sequence, `R = Rz(yaw) * Ry(pitch) * Rx(roll)`,
//! and only appear at I/O boundaries. A wheel-mounted IMU rolls through all
//! angles, so nothing inside the filters depends on Euler angles being
//! well conditioned.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::Mul;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Largest small-angle correction accepted by [`apply_small_angle`].
pub const MAX_SMALL_ANGLE: f64 = 0.5;

/// Pitch magnitude at which Euler extraction switches to the gimbal-lock branch.
const GIMBAL_GUARD: f64 = FRAC_PI_2 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum GeomError {
    #[error("attitude correction of {0:.3} rad exceeds the small-angle limit")]
    CorrectionTooLarge(f64),
    #[error("non-finite rotation input")]
    NonFinite,
}

/// Proper rotation stored as a direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Nearest rotation to an arbitrary matrix (polar decomposition).
    pub fn from_matrix(m: &Mat3) -> Self {
        let svd = m.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Rotation(u * d * vt).renormalized()
    }

    /// Wraps a matrix that is already orthonormal to round-off.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    pub fn from_euler(rpy: &Vec3) -> Self {
        euler_to_rotation(rpy)
    }

    pub fn to_euler(&self) -> Vec3 {
        rotation_to_euler(self)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>) -> Self {
        Rotation(*q.to_rotation_matrix().matrix()).renormalized()
    }

    pub fn to_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.0))
    }

    /// Rotation about z by `yaw`.
    pub fn rz(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rotation(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rotation about x by `roll`.
    pub fn rx(roll: f64) -> Self {
        let (s, c) = roll.sin_cos();
        Rotation(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Rotation about y by `pitch`.
    pub fn ry(pitch: f64) -> Self {
        let (s, c) = pitch.sin_cos();
        Rotation(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Rotation by the rotation vector `theta` (Rodrigues formula).
    pub fn exp(theta: &Vec3) -> Self {
        let a2 = theta.norm_squared();
        let k = skew(theta);
        let (s, c) = if a2 < 1e-12 {
            // Taylor terms keep full precision near zero.
            (1.0 - a2 / 6.0 + a2 * a2 / 120.0, 0.5 - a2 / 24.0 + a2 * a2 / 720.0)
        } else {
            let a = a2.sqrt();
            (a.sin() / a, (1.0 - a.cos()) / a2)
        };
        Rotation(Mat3::identity() + k * s + k * k * c)
    }

    /// Rotation vector of this rotation.
    pub fn log(&self) -> Vec3 {
        self.to_quaternion().scaled_axis()
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Largest entry of `R Rᵀ - I`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Mat3::identity()).amax()
    }

    /// Symmetric re-orthonormalization, `R <- R (RᵀR)^(-1/2)` by Newton steps.
    pub fn renormalized(&self) -> Self {
        let mut r = self.0;
        for _ in 0..4 {
            let e = r.transpose() * r - Mat3::identity();
            if e.amax() < 1e-15 {
                break;
            }
            r -= r * e * 0.5;
        }
        Rotation(r)
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Cross-product matrix: `skew(v) * u == v.cross(&u)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Z-Y-X Euler angles `(roll, pitch, yaw)` to rotation.
pub fn euler_to_rotation(rpy: &Vec3) -> Rotation {
    let (sr, cr) = rpy.x.sin_cos();
    let (sp, cp) = rpy.y.sin_cos();
    let (sy, cy) = rpy.z.sin_cos();
    Rotation(Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    ))
}

/// Rotation to Z-Y-X Euler angles `(roll, pitch, yaw)`.
///
/// Near pitch ±π/2 roll is pinned to zero and folded into yaw.
pub fn rotation_to_euler(r: &Rotation) -> Vec3 {
    let m = &r.0;
    let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
    if pitch.abs() >= GIMBAL_GUARD {
        let yaw = (-m[(0, 1)]).atan2(m[(1, 1)]);
        return Vec3::new(0.0, pitch, yaw);
    }
    let roll = m[(2, 1)].atan2(m[(2, 2)]);
    let yaw = m[(1, 0)].atan2(m[(0, 0)]);
    Vec3::new(roll, pitch, yaw)
}

/// `(I - skew(phi)) * R`, re-orthonormalized.
pub fn apply_small_angle(r: &Rotation, phi: &Vec3) -> Result<Rotation, GeomError> {
    let n = phi.norm();
    if !n.is_finite() {
        return Err(GeomError::NonFinite);
    }
    if n >= MAX_SMALL_ANGLE {
        return Err(GeomError::CorrectionTooLarge(n));
    }
    Ok(Rotation((Mat3::identity() - skew(phi)) * r.0).renormalized())
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Heading of a horizontal projection, `atan2(v_y, v_x)`.
pub fn heading_of(v: &Vec3) -> f64 {
    v.y.atan2(v.x)
}
