//! Two-view line triangulation: plane-plane intersection and the two-point
//! construction.

use nalgebra::{Vector2, Vector3};

use crate::{CameraIntrinsics, GeometryError, Line2D, PluckerLine, Pose};

/// Angle threshold below which two back-projected planes count as parallel.
pub const DEGENERATE_PLANE_ANGLE_DEG: f64 = 1.0;

/// A 3D plane `a·X + d = 0` obtained by back-projecting a 2D line
/// observation through a camera.
#[derive(Clone, Copy, Debug)]
pub struct BackProjectedPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl BackProjectedPlane {
    /// Back-projects an observed image line into the world frame for a
    /// world→camera pose.
    pub fn from_observation(line: &Line2D, pose: &Pose, intr: &CameraIntrinsics) -> Self {
        // m = K^T l is the plane normal in the camera frame; the plane
        // passes through the camera center.
        let l = Vector3::new(line.a, line.b, line.c);
        let m = intr.k_matrix().transpose() * l;
        let normal = pose.rotation_matrix().transpose() * m;
        let offset = m.dot(&pose.translation());
        Self { normal, offset }
    }

    /// Signed incidence of a homogeneous point with the plane.
    pub fn evaluate(&self, point: &Vector3<f64>) -> f64 {
        self.normal.dot(point) + self.offset
    }
}

/// Triangulates a 3D line as the intersection of the two planes
/// back-projected from observations in two views. Fails when the planes are
/// within [`DEGENERATE_PLANE_ANGLE_DEG`] of parallel (no parallax for the
/// line).
pub fn triangulate_line_planes(
    obs1: &Line2D,
    pose1: &Pose,
    obs2: &Line2D,
    pose2: &Pose,
    intr: &CameraIntrinsics,
) -> Result<PluckerLine, GeometryError> {
    let p1 = BackProjectedPlane::from_observation(obs1, pose1, intr);
    let p2 = BackProjectedPlane::from_observation(obs2, pose2, intr);

    let a1 = p1.normal.normalize();
    let a2 = p2.normal.normalize();
    let cos_angle = a1.dot(&a2).abs().min(1.0);
    let angle_deg = cos_angle.acos().to_degrees();
    if angle_deg < DEGENERATE_PLANE_ANGLE_DEG {
        return Err(GeometryError::DegenerateTriangulation(
            "back-projected planes are near parallel",
        ));
    }

    let d1 = p1.offset / p1.normal.norm();
    let d2 = p2.offset / p2.normal.norm();
    // Dual Plücker construction of the plane-plane intersection, in the
    // `n = X × v` convention.
    let v = a1.cross(&a2);
    let n = d1 * a2 - d2 * a1;
    Ok(PluckerLine::new(n, v)?.normalized())
}

/// The two-point line construction `n = X1 × X2`, `v = (X1 − X2)/‖X1 − X2‖`.
///
/// Note the direction is normalized while the moment is not, so the joint
/// scale of the output follows the separation of the two input points; use
/// [`PluckerLine::through_points`] when a scale-consistent geometric line is
/// required.
pub fn triangulate_line_points(
    x1: &Vector3<f64>,
    x2: &Vector3<f64>,
) -> Result<PluckerLine, GeometryError> {
    let diff = x1 - x2;
    let len = diff.norm();
    if len < 1e-9 {
        return Err(GeometryError::DegenerateTriangulation("coincident points"));
    }
    PluckerLine::new(x1.cross(x2), diff / len)
}

/// Projects a world segment into a view and returns the observed implicit
/// line (test helper shared by the crates above this one).
pub fn project_segment_to_line(
    x1: &Vector3<f64>,
    x2: &Vector3<f64>,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<(Vector2<f64>, Vector2<f64>, Line2D), GeometryError> {
    let p1 = intr.project_point(&pose.transform_point(x1))?;
    let p2 = intr.project_point(&pose.transform_point(x2))?;
    let line = Line2D::from_points(&p1, &p2)?;
    Ok((p1, p2, line))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1).unwrap()
    }

    #[test]
    fn two_point_construction_by_hand() {
        let line = triangulate_line_points(&Vector3::x(), &Vector3::y()).unwrap();
        assert_relative_eq!(line.moment(), Vector3::z(), epsilon = 1e-15);
        assert_relative_eq!(
            line.direction(),
            Vector3::new(1.0, -1.0, 0.0) / 2.0_f64.sqrt(),
            epsilon = 1e-15
        );

        let scaled = triangulate_line_points(&(2.0 * Vector3::x()), &(2.0 * Vector3::y())).unwrap();
        assert_relative_eq!(scaled.moment(), Vector3::new(0.0, 0.0, 4.0), epsilon = 1e-15);
        assert_relative_eq!(
            scaled.direction(),
            Vector3::new(1.0, -1.0, 0.0) / 2.0_f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(scaled.constraint(), 0.0);
    }

    #[test]
    fn two_point_constraint_exact_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x1 = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let x2 = Vector3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            if (x1 - x2).norm() < 1e-3 {
                continue;
            }
            let line = triangulate_line_points(&x1, &x2).unwrap();
            assert!(line.constraint().abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_points_are_degenerate() {
        let x = Vector3::new(1.0, 2.0, 3.0);
        assert!(matches!(
            triangulate_line_points(&x, &x),
            Err(GeometryError::DegenerateTriangulation(_))
        ));
    }

    #[test]
    fn two_points_on_ground_truth_line_recover_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let a = Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0));
            let b = Vector3::from_fn(|_, _| rng.random_range(-4.0..4.0));
            if (a - b).norm() < 0.5 {
                continue;
            }
            let truth = PluckerLine::through_points(&a, &b).unwrap();
            // Sample two other points on the same line.
            let t1: f64 = rng.random_range(-2.0..2.0);
            let t2: f64 = rng.random_range(-2.0..2.0);
            if (t1 - t2).abs() < 0.1 {
                continue;
            }
            let x1 = a + t1 * (b - a);
            let x2 = a + t2 * (b - a);
            let recovered = PluckerLine::through_points(&x1, &x2).unwrap();
            assert!(
                truth.projectively_equal(&recovered, 1e-9),
                "line mismatch"
            );
        }
    }

    #[test]
    fn plane_triangulation_noiseless_two_views() {
        let intr = intr();
        let x1 = Vector3::new(-0.8, 0.2, 4.0);
        let x2 = Vector3::new(0.9, -0.4, 5.0);
        let truth = PluckerLine::through_points(&x1, &x2).unwrap();

        let pose1 = Pose::identity();
        let pose2 = Pose::new(
            UnitQuaternion::from_euler_angles(0.0, 0.05, 0.0),
            Vector3::new(-0.5, 0.0, 0.0),
        );
        let (.., l1) = project_segment_to_line(&x1, &x2, &pose1, &intr).unwrap();
        let (.., l2) = project_segment_to_line(&x1, &x2, &pose2, &intr).unwrap();

        let est = triangulate_line_planes(&l1, &pose1, &l2, &pose2, &intr).unwrap();
        let angle = est
            .direction()
            .normalize()
            .cross(&truth.direction().normalize())
            .norm()
            .asin();
        assert!(angle < 1e-6, "direction error {angle} rad");
        // The recovered line lies in both back-projected planes.
        for plane in [
            BackProjectedPlane::from_observation(&l1, &pose1, &intr),
            BackProjectedPlane::from_observation(&l2, &pose2, &intr),
        ] {
            let p0 = est.closest_point_to_origin().unwrap();
            let p1 = p0 + est.direction().normalize();
            assert!(plane.evaluate(&p0).abs() < 1e-8);
            assert!(plane.evaluate(&p1).abs() < 1e-8);
        }
        assert!(est.projectively_equal(&truth, 1e-6));
    }

    #[test]
    fn identical_poses_are_degenerate() {
        let intr = intr();
        let x1 = Vector3::new(-0.8, 0.2, 4.0);
        let x2 = Vector3::new(0.9, -0.4, 5.0);
        let pose = Pose::identity();
        let (.., l) = project_segment_to_line(&x1, &x2, &pose, &intr).unwrap();
        assert!(matches!(
            triangulate_line_planes(&l, &pose, &l, &pose, &intr),
            Err(GeometryError::DegenerateTriangulation(_))
        ));
    }

    #[test]
    fn endpoint_noise_keeps_direction_error_below_tenth_degree() {
        // Well-conditioned rig: the two back-projected planes meet at ~90
        // degrees, so plane-normal noise is not amplified by the
        // intersection.
        let intr = intr();
        let mut rng = ChaCha8Rng::seed_from_u64(23);

        let pose1 = Pose::identity();
        // Second camera below the line looking along +y.
        let r_wc = nalgebra::Matrix3::from_columns(&[Vector3::x(), -Vector3::z(), Vector3::y()]);
        let center = Vector3::new(0.0, -3.0, 3.0);
        let r_cw = r_wc.transpose();
        let pose2 = Pose::from_matrix(&r_cw, -(r_cw * center)).unwrap();

        let mut total_err = 0.0;
        let mut count = 0;
        while count < 100 {
            let y = rng.random_range(-0.15..0.15);
            let z = rng.random_range(2.9..3.1);
            let x1 = Vector3::new(rng.random_range(-1.8..-1.5), y, z);
            let x2 = Vector3::new(rng.random_range(1.5..1.8), y, z);
            let truth = PluckerLine::through_points(&x1, &x2).unwrap();
            let mut noisy_line = |pose: &Pose| -> Option<Line2D> {
                let (mut p1, mut p2, _) = project_segment_to_line(&x1, &x2, pose, &intr).ok()?;
                // Sum of three uniforms on (-1, 1) has unit variance.
                let mut noise = || {
                    0.5 * (rng.random_range(-1.0..1.0)
                        + rng.random_range(-1.0..1.0)
                        + rng.random_range(-1.0..1.0))
                };
                p1 += Vector2::new(noise(), noise());
                p2 += Vector2::new(noise(), noise());
                Line2D::from_points(&p1, &p2).ok()
            };
            let (Some(l1), Some(l2)) = (noisy_line(&pose1), noisy_line(&pose2)) else {
                continue;
            };
            let Ok(est) = triangulate_line_planes(&l1, &pose1, &l2, &pose2, &intr) else {
                continue;
            };
            let cross = est
                .direction()
                .normalize()
                .cross(&truth.direction().normalize())
                .norm()
                .min(1.0);
            total_err += cross.asin().to_degrees();
            count += 1;
        }
        let mean = total_err / count as f64;
        assert!(mean < 0.1, "mean direction error {mean} deg");
    }
}
