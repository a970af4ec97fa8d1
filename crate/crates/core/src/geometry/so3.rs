//! Axis-angle parameterization of rotations.
//!
//! The optimizer works on a 3-vector `omega` whose direction is the rotation
//! axis and whose norm is the angle in radians.

use nalgebra::{Matrix3, Rotation3, Vector3};

const SMALL_ANGLE: f64 = 1e-6;

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation matrix `exp([omega]x)`.
pub fn exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = hat(omega);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Axis-angle vector of a rotation matrix, norm in `[0, pi]`.
pub fn log(r: &Matrix3<f64>) -> Vector3<f64> {
    Rotation3::from_matrix_unchecked(*r).scaled_axis()
}

/// Right Jacobian `J_r(omega)`: `exp(omega + d) ~ exp(omega) exp(J_r d)`.
pub fn right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let k = hat(omega);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Derivative of `exp(omega) * p` with respect to `omega` (3x3).
pub fn rotate_point_jacobian(omega: &Vector3<f64>, p: &Vector3<f64>) -> Matrix3<f64> {
    -exp(omega) * hat(p) * right_jacobian(omega)
}

/// Re-wraps an axis-angle vector so that its norm is below pi; the rotation
/// it represents is unchanged.
pub fn wrap(omega: &Vector3<f64>) -> Vector3<f64> {
    let theta = omega.norm();
    if theta < std::f64::consts::PI {
        return *omega;
    }
    log(&exp(omega))
}
