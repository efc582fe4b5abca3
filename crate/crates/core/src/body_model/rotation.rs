//! Axis-angle and Euler helpers used by the kinematic chain.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::BodyModelError;

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula: `R = I + sin(a) K + (1 - cos(a)) K^2` with `K` the
/// skew matrix of the unit axis. A zero vector yields the exact identity.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> Matrix3<f64> {
    let angle = axis_angle.norm();
    if angle < 1e-12 {
        // first-order expansion; exact identity for the zero vector
        return Matrix3::identity() + skew(axis_angle);
    }
    let k = skew(&(axis_angle / angle));
    Matrix3::identity() + k * angle.sin() + (k * k) * (1.0 - angle.cos())
}

/// Returns an axis-angle vector for the same rotation with magnitude in `[0, pi]`.
pub fn canonicalize_axis_angle(theta_row: [f64; 3]) -> Result<[f64; 3], BodyModelError> {
    if theta_row.iter().any(|c| !c.is_finite()) {
        return Err(BodyModelError::NonFinite("axis-angle component".into()));
    }
    let v = Vector3::from(theta_row);
    let angle = v.norm();
    if angle == 0.0 {
        return Ok([0.0; 3]);
    }
    let axis = v / angle;
    let two_pi = 2.0 * PI;
    let mut wrapped = angle - two_pi * (angle / two_pi).round();
    if wrapped <= -PI {
        wrapped += two_pi;
    }
    if wrapped == 0.0 {
        return Ok([0.0; 3]);
    }
    // negative remainder flips the axis
    let out = axis * wrapped;
    Ok([out.x, out.y, out.z])
}

/// Head-pose angles in degrees, each in `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Pitch magnitude (degrees) at and beyond which roll is pinned to zero.
pub const GIMBAL_PITCH_DEG: f64 = 89.999;

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }

    /// Intrinsic Z-Y-X composition: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let rz = rodrigues(&(Vector3::z() * self.yaw.to_radians()));
        let ry = rodrigues(&(Vector3::y() * self.pitch.to_radians()));
        let rx = rodrigues(&(Vector3::x() * self.roll.to_radians()));
        rz * ry * rx
    }

    /// Inverse of [`EulerAngles::to_matrix`]. Near the gimbal band roll is
    /// set to zero and the residual rotation is folded into yaw.
    pub fn from_matrix(r: &Matrix3<f64>) -> Self {
        let sin_pitch = (-r[(2, 0)]).clamp(-1.0, 1.0);
        let pitch = sin_pitch.asin().to_degrees();
        if pitch.abs() >= GIMBAL_PITCH_DEG {
            let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
            return Self::new(0.0, pitch, wrap_degrees(yaw));
        }
        let yaw = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
        let roll = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
        Self::new(wrap_degrees(roll), pitch, wrap_degrees(yaw))
    }
}

/// Wraps an angle in degrees into `(-180, 180]`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}
