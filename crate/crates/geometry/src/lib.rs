//! Core geometry for a point-line stereo SLAM stack: SE(3) poses, pinhole
//! cameras, Plücker lines with their orthonormal parameterization, and the
//! triangulation / projection operations shared by every other crate.
//!
//! All types are immutable values and all operations are pure functions, so
//! everything here is safe to use concurrently without restriction.

mod camera;
mod line2d;
mod plucker;
mod pose;
pub mod pnp;
pub mod se3;
pub mod so3;
mod triangulation;

pub use camera::{project_point, CameraIntrinsics};
pub use line2d::{point_line_distance_2d, Line2D};
pub use plucker::{
    orthonormal_retract, orthonormal_to_plucker, plucker_to_orthonormal, project_line,
    transform_line, LineTransform, OrthonormalLine, PluckerLine,
};
pub use pose::Pose;
pub use triangulation::{
    project_segment_to_line, triangulate_line_planes, triangulate_line_points, BackProjectedPlane,
};

use nalgebra::Vector3;

/// Errors produced by geometric operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    /// A Plücker line with `‖n‖ = 0` or `‖v‖ = 0` cannot be converted to the
    /// orthonormal representation.
    #[error("degenerate line: n or v has zero norm")]
    DegenerateLine,
    /// Both Plücker components are (numerically) zero.
    #[error("invalid Plücker coordinates: n and v are both zero")]
    ZeroLine,
    /// The Plücker constraint n·v = 0 is violated beyond tolerance.
    #[error("Plücker constraint violated: n·v = {0}")]
    ConstraintViolated(f64),
    /// The line passes through the optical center, so its image is undefined.
    #[error("line passes through the optical center")]
    LineThroughOpticalCenter,
    /// The point sits behind the camera (or on the principal plane).
    #[error("point behind camera: z = {z}")]
    BehindCamera { z: f64 },
    /// Two-view line triangulation failed (near-parallel back-projected
    /// planes or coincident points).
    #[error("degenerate triangulation: {0}")]
    DegenerateTriangulation(&'static str),
    /// A 2D line with a zero normal vector.
    #[error("invalid 2D line: zero normal")]
    InvalidLine,
    /// A matrix that was expected to be a rotation is not in SO(3).
    #[error("matrix is not in SO(3)")]
    NotARotation,
    /// Invalid camera intrinsics.
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    /// Not enough correspondences for pose estimation.
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    /// RANSAC could not find a pose with enough inliers.
    #[error("pose estimation found only {inliers} inliers (minimum {minimum})")]
    TooFewInliers { inliers: usize, minimum: usize },
}

/// Tolerance used when validating rotation matrices and the Plücker
/// constraint.
pub const ORTHOGONALITY_TOL: f64 = 1e-9;

/// Returns true when two vectors are equal up to a global sign flip.
pub fn equal_up_to_sign(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol || (a + b).norm() <= tol
}
