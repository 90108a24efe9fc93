//! SO(3) helpers: hat operator, exponential/logarithm maps and the right
//! Jacobian family used by IMU preintegration and the optimizer.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

/// Skew-symmetric matrix of `v`, so that `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map of so(3).
pub fn exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*phi)
}

/// Logarithm map of SO(3), returning the rotation vector.
pub fn log(rotation: &UnitQuaternion<f64>) -> Vector3<f64> {
    rotation.scaled_axis()
}

/// Right Jacobian of SO(3):
/// `Exp(phi + dphi) ≈ Exp(phi) * Exp(Jr(phi) * dphi)`.
pub fn right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let w = hat(phi);
    if theta2 < 1e-16 {
        return Matrix3::identity() - 0.5 * w + w * w / 6.0;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() - a * w + b * (w * w)
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let w = hat(phi);
    if theta2 < 1e-16 {
        return Matrix3::identity() + 0.5 * w + w * w / 12.0;
    }
    let theta = theta2.sqrt();
    let b = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
    Matrix3::identity() + 0.5 * w + b * (w * w)
}

/// Left Jacobian of SO(3): `Jl(phi) = Jr(-phi)`.
pub fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian(&-phi)
}

/// Inverse of the left Jacobian of SO(3).
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian_inv(&-phi)
}
