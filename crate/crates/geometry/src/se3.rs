//! SE(3) exponential/logarithm, adjoint and Jacobians with the tangent
//! ordering `xi = (rho, phi)` (translation part first).

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::{so3, Pose};

pub fn exp(xi: &Vector6<f64>) -> Pose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let rotation = so3::exp(&phi);
    let translation = so3::left_jacobian(&phi) * rho;
    Pose::new(rotation, translation)
}

pub fn log(pose: &Pose) -> Vector6<f64> {
    let phi = so3::log(pose.rotation());
    let rho = so3::left_jacobian_inv(&phi) * pose.translation();
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&phi);
    xi
}

/// Adjoint of the transform: `Exp(Adj(T) xi) = T Exp(xi) T⁻¹`.
pub fn adjoint(pose: &Pose) -> Matrix6<f64> {
    let r = pose.rotation_matrix();
    let t_hat = so3::hat(&pose.translation());
    let mut adj = Matrix6::zeros();
    adj.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    adj.fixed_view_mut::<3, 3>(0, 3).copy_from(&(t_hat * r));
    adj.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    adj
}

/// The Q block of the SE(3) left Jacobian (Barfoot's closed form).
fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let rx = so3::hat(rho);
    let px = so3::hat(phi);
    let theta2 = phi.norm_squared();
    let (c2, c3, c4) = if theta2 < 1e-12 {
        (
            1.0 / 6.0 - theta2 / 120.0,
            1.0 / 24.0 - theta2 / 720.0,
            1.0 / 120.0,
        )
    } else {
        let theta = theta2.sqrt();
        let (s, c) = (theta.sin(), theta.cos());
        (
            (theta - s) / (theta2 * theta),
            (theta2 + 2.0 * c - 2.0) / (2.0 * theta2 * theta2),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * theta2 * theta2 * theta),
        )
    };
    0.5 * rx
        + c2 * (px * rx + rx * px + px * rx * px)
        + c3 * (px * px * rx + rx * px * px - 3.0 * px * rx * px)
        + c4 * (px * rx * px * px + px * px * rx * px)
}

/// Left Jacobian of SE(3).
pub fn left_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let jl = so3::left_jacobian(&phi);
    let q = q_block(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    out
}

/// Inverse of the left Jacobian of SE(3).
pub fn left_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let phi = Vector3::new(xi[3], xi[4], xi[5]);
    let jl_inv = so3::left_jacobian_inv(&phi);
    let q = q_block(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl_inv);
    out.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-jl_inv * q * jl_inv));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl_inv);
    out
}

/// Right Jacobian of SE(3): `Jr(xi) = Jl(-xi)`.
pub fn right_jacobian(xi: &Vector6<f64>) -> Matrix6<f64> {
    left_jacobian(&-xi)
}

/// Inverse of the right Jacobian of SE(3).
pub fn right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    left_jacobian_inv(&-xi)
}
