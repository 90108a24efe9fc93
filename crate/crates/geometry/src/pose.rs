use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3};

use crate::{se3, GeometryError, ORTHOGONALITY_TOL};

/// A rigid transform. Which frames it maps between is context-dependent; the
/// SLAM stack mostly uses world→camera transforms (`T_cw`), so that
/// `X_c = R * X_w + t`.
///
/// The rotation is stored as a unit quaternion and exposed as a matrix, which
/// keeps repeated compositions numerically in SO(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a rotation matrix, validating that it is in SO(3).
    pub fn from_matrix(
        rotation: &Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let rtr = rotation.transpose() * rotation;
        let ortho_err = (rtr - Matrix3::identity()).norm();
        let det_err = (rotation.determinant() - 1.0).abs();
        // Allow a little slack over the storage tolerance for round-tripped
        // matrices.
        if ortho_err > 100.0 * ORTHOGONALITY_TOL || det_err > 100.0 * ORTHOGONALITY_TOL {
            return Err(GeometryError::NotARotation);
        }
        let q = UnitQuaternion::from_matrix(rotation);
        Ok(Self::new(q, translation))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    /// Right-multiplies by the SE(3) exponential of `delta = (rho, phi)`.
    pub fn retract(&self, delta: &nalgebra::Vector6<f64>) -> Pose {
        self.compose(&se3::exp(delta))
    }

    /// Homogeneous 4x4 matrix.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation angle (radians) of the relative rotation between two poses.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        (self.rotation.inverse() * other.rotation).angle()
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}
