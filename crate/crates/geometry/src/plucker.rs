//! Plücker coordinates and the minimal orthonormal representation of 3D
//! lines, plus their rigid transform and pinhole projection.

use nalgebra::{Matrix2, Matrix3, Matrix6, Rotation3, Vector3, Vector4};

use crate::{so3, CameraIntrinsics, GeometryError, Line2D, Pose, ORTHOGONALITY_TOL};

/// A 3D line as Plücker coordinates `(n, v)`: `v` is the direction and `n`
/// the normal of the plane through the line and the origin. The pair is
/// homogeneous; a joint scale is meaningful only relative to the convention
/// used to build it.
///
/// `n = 0` (a line through the origin) and `v = 0` (a line at infinity) are
/// representable; only `(0, 0)` is rejected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PluckerLine {
    n: Vector3<f64>,
    v: Vector3<f64>,
}

impl PluckerLine {
    pub fn new(n: Vector3<f64>, v: Vector3<f64>) -> Result<Self, GeometryError> {
        let scale = n.norm().max(v.norm());
        if scale < 1e-15 {
            return Err(GeometryError::ZeroLine);
        }
        let constraint = n.dot(&v);
        if constraint.abs() > ORTHOGONALITY_TOL * scale.powi(2).max(1.0) {
            return Err(GeometryError::ConstraintViolated(constraint));
        }
        Ok(Self { n, v })
    }

    /// The geometric line through two points with scale-consistent moment
    /// and direction (`n = x1 × x2`, `v = x2 − x1`, so that `n = X × v` for
    /// any point X on the line), normalized to unit joint norm. This is the
    /// convention under which the rigid transform and the projection act
    /// correctly; prefer it over [`triangulate_line_points`] when the result
    /// must reproject onto its observations.
    ///
    /// [`triangulate_line_points`]: crate::triangulate_line_points
    pub fn through_points(x1: &Vector3<f64>, x2: &Vector3<f64>) -> Result<Self, GeometryError> {
        let v = x2 - x1;
        if v.norm() < 1e-12 {
            return Err(GeometryError::DegenerateTriangulation("coincident points"));
        }
        let n = x1.cross(x2);
        Ok(Self { n, v }.normalized())
    }

    pub fn moment(&self) -> Vector3<f64> {
        self.n
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.v
    }

    /// Plücker constraint value `n·v` (zero for a valid line).
    pub fn constraint(&self) -> f64 {
        self.n.dot(&self.v)
    }

    /// Rescales so that `‖(n, v)‖ = 1`.
    pub fn normalized(&self) -> Self {
        let s = (self.n.norm_squared() + self.v.norm_squared()).sqrt();
        Self {
            n: self.n / s,
            v: self.v / s,
        }
    }

    /// Point on the line closest to the origin (`None` for lines at
    /// infinity, i.e. `v = 0`). Assumes the `n = X × v` convention of
    /// [`PluckerLine::through_points`].
    pub fn closest_point_to_origin(&self) -> Option<Vector3<f64>> {
        let v2 = self.v.norm_squared();
        if v2 < 1e-24 {
            return None;
        }
        Some(self.v.cross(&self.n) / v2)
    }

    /// Whether the two Plücker vectors describe the same projective line,
    /// i.e. are equal up to a common (possibly negative) scale.
    pub fn projectively_equal(&self, other: &Self, tol: f64) -> bool {
        let a = self.normalized();
        let b = other.normalized();
        let diff = (a.n - b.n).norm() + (a.v - b.v).norm();
        let sum = (a.n + b.n).norm() + (a.v + b.v).norm();
        diff.min(sum) <= tol
    }

    /// Distance of a point to the geometric line (requires `v ≠ 0`).
    pub fn distance_to_point(&self, x: &Vector3<f64>) -> Option<f64> {
        let p0 = self.closest_point_to_origin()?;
        let dir = self.v.normalize();
        let d = x - p0;
        Some((d - dir * d.dot(&dir)).norm())
    }
}

/// Minimal 4-dof parameterization of a 3D line as `(U, W) ∈ SO(3) × SO(2)`.
/// `W` is stored as its rotation angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthonormalLine {
    u: Rotation3<f64>,
    w_angle: f64,
}

impl OrthonormalLine {
    pub fn from_parts(u: Rotation3<f64>, w_angle: f64) -> Self {
        Self { u, w_angle }
    }

    pub fn u_matrix(&self) -> Matrix3<f64> {
        self.u.into_inner()
    }

    pub fn w_angle(&self) -> f64 {
        self.w_angle
    }

    pub fn w_matrix(&self) -> Matrix2<f64> {
        let (s, c) = self.w_angle.sin_cos();
        Matrix2::new(c, -s, s, c)
    }
}

/// Converts Plücker coordinates to the orthonormal representation:
/// `U = [n/‖n‖ | v/‖v‖ | n×v/‖n×v‖]`, `W` from `(‖n‖, ‖v‖)`.
///
/// Fails with [`GeometryError::DegenerateLine`] when either component has
/// zero norm (then the representation is undefined).
pub fn plucker_to_orthonormal(line: &PluckerLine) -> Result<OrthonormalLine, GeometryError> {
    let n = line.moment();
    let v = line.direction();
    let joint = (n.norm_squared() + v.norm_squared()).sqrt();
    let n_norm = n.norm();
    let v_norm = v.norm();
    if n_norm < 1e-9 * joint || v_norm < 1e-9 * joint {
        return Err(GeometryError::DegenerateLine);
    }
    let u1 = n / n_norm;
    let u2_raw = v / v_norm;
    let u3 = u1.cross(&u2_raw).normalize();
    // Re-orthogonalize the second column so U is exactly in SO(3) even when
    // the constraint only holds to tolerance.
    let u2 = u3.cross(&u1);
    let u = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[u1, u2, u3]));
    let w_angle = v_norm.atan2(n_norm);
    Ok(OrthonormalLine::from_parts(u, w_angle))
}

/// Inverse of [`plucker_to_orthonormal`]: `n = W₁₁·U₁, v = W₂₁·U₂`, which is
/// already normalized to unit joint norm.
pub fn orthonormal_to_plucker(line: &OrthonormalLine) -> PluckerLine {
    let u = line.u_matrix();
    let (s, c) = line.w_angle.sin_cos();
    PluckerLine {
        n: c * u.column(0).into_owned(),
        v: s * u.column(1).into_owned(),
    }
}

/// Applies the 4-dof update `U ← U·Exp(δ[0..3])`, `W ← W·Exp(δ[3])`.
pub fn orthonormal_retract(line: &OrthonormalLine, delta: &Vector4<f64>) -> OrthonormalLine {
    let du = Rotation3::from(so3::exp(&Vector3::new(delta[0], delta[1], delta[2])));
    let mut angle = line.w_angle + delta[3];
    // Keep the SO(2) angle in (-pi, pi].
    if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&angle) {
        angle = angle.rem_euclid(2.0 * std::f64::consts::PI);
        if angle > std::f64::consts::PI {
            angle -= 2.0 * std::f64::consts::PI;
        }
    }
    OrthonormalLine::from_parts(line.u * du, angle)
}

/// The 6x6 transform that maps world-frame Plücker coordinates into the
/// camera frame for a world→camera pose.
#[derive(Clone, Copy, Debug)]
pub struct LineTransform {
    rotation: Matrix3<f64>,
    upper_right: Matrix3<f64>,
}

impl LineTransform {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation_matrix();
        Self {
            rotation: r,
            upper_right: so3::hat(&pose.translation()) * r,
        }
    }

    pub fn matrix(&self) -> Matrix6<f64> {
        let mut h = Matrix6::zeros();
        h.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        h.fixed_view_mut::<3, 3>(0, 3).copy_from(&self.upper_right);
        h.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.rotation);
        h
    }

    pub fn apply(&self, line: &PluckerLine) -> PluckerLine {
        PluckerLine {
            n: self.rotation * line.n + self.upper_right * line.v,
            v: self.rotation * line.v,
        }
    }
}

/// Transforms a world-frame line into the camera frame, `L_c = H_cw L_w`.
/// The Plücker constraint is preserved; a result with `n_c ≈ 0` means the
/// line passes through the new origin and is flagged only by downstream
/// operations.
pub fn transform_line(pose: &Pose, line_w: &PluckerLine) -> PluckerLine {
    LineTransform::from_pose(pose).apply(line_w)
}

/// Projects a camera-frame line to the image with the line projection
/// matrix, `l = P_c n_c`, normalized so `A² + B² = 1`.
pub fn project_line(
    intr: &CameraIntrinsics,
    line_c: &PluckerLine,
) -> Result<Line2D, GeometryError> {
    let n = line_c.moment();
    let joint = n.norm().max(line_c.direction().norm());
    if n.norm() < 1e-9 * joint.max(1e-9) {
        return Err(GeometryError::LineThroughOpticalCenter);
    }
    let a = intr.fx * n.x;
    let b = intr.fy * n.y;
    let c = -intr.fy * intr.cx * n.x - intr.fx * intr.cy * n.y + intr.fx * intr.fy * n.z;
    Line2D::new(a, b, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_line(rng: &mut ChaCha8Rng) -> PluckerLine {
        loop {
            let x1 = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let x2 = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            if (x1 - x2).norm() < 0.1 || x1.cross(&x2).norm() < 0.1 {
                continue;
            }
            return PluckerLine::through_points(&x1, &x2).unwrap();
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(
            UnitQuaternion::from_euler_angles(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
            Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
        )
    }

    #[test]
    fn unit_orthogonal_axes_example() {
        let line = PluckerLine::new(Vector3::x(), Vector3::y()).unwrap();
        let on = plucker_to_orthonormal(&line).unwrap();
        assert_relative_eq!(on.u_matrix(), Matrix3::identity(), epsilon = 1e-12);
        let w = on.w_matrix();
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        assert_relative_eq!(
            w,
            Matrix2::new(inv_sqrt2, -inv_sqrt2, inv_sqrt2, inv_sqrt2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn axis_aligned_example() {
        let line = PluckerLine::new(Vector3::new(0.0, 0.0, 2.0), Vector3::x()).unwrap();
        let on = plucker_to_orthonormal(&line).unwrap();
        let u = on.u_matrix();
        assert_relative_eq!(u.column(0).into_owned(), Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(u.column(1).into_owned(), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(u.column(2).into_owned(), Vector3::y(), epsilon = 1e-12);
        let inv_sqrt5 = 1.0 / 5.0_f64.sqrt();
        assert_relative_eq!(
            on.w_matrix(),
            Matrix2::new(
                2.0 * inv_sqrt5,
                -inv_sqrt5,
                inv_sqrt5,
                2.0 * inv_sqrt5
            ),
            epsilon = 1e-12
        );
    }

    #[test]
    fn orthonormal_inverse_example() {
        let inv_sqrt2 = 1.0 / 2.0_f64.sqrt();
        let on = OrthonormalLine::from_parts(Rotation3::identity(), inv_sqrt2.asin());
        let line = orthonormal_to_plucker(&on);
        // n ∝ (1,0,0), v ∝ (0,1,0), joint norm 1
        assert_relative_eq!(line.moment().normalize(), Vector3::x(), epsilon = 1e-12);
        assert_relative_eq!(line.direction().normalize(), Vector3::y(), epsilon = 1e-12);
        let joint = (line.moment().norm_squared() + line.direction().norm_squared()).sqrt();
        assert_relative_eq!(joint, 1.0, epsilon = 1e-12);
        assert!(line.constraint().abs() < 1e-12);
    }

    #[test]
    fn round_trip_1000_random_lines() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let line = random_line(&mut rng);
            let back = orthonormal_to_plucker(&plucker_to_orthonormal(&line).unwrap());
            assert!(line.projectively_equal(&back, 1e-9));
            assert!(back.constraint().abs() < 1e-12);
        }
    }

    #[test]
    fn orthonormal_round_trip_up_to_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let u = Rotation3::from(UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.4..1.4),
                rng.random_range(-3.0..3.0),
            ));
            let angle: f64 = rng.random_range(0.05..1.5);
            let on = OrthonormalLine::from_parts(u, angle);
            let round = plucker_to_orthonormal(&orthonormal_to_plucker(&on)).unwrap();
            // Compare through the represented projective line (the U/W sign
            // gauge is not unique).
            let a = orthonormal_to_plucker(&on);
            let b = orthonormal_to_plucker(&round);
            assert!(a.projectively_equal(&b, 1e-9));
        }
    }

    #[test]
    fn degenerate_inputs_error() {
        let through_origin = PluckerLine::new(Vector3::zeros(), Vector3::x()).unwrap();
        assert_eq!(
            plucker_to_orthonormal(&through_origin),
            Err(GeometryError::DegenerateLine)
        );
        assert!(PluckerLine::new(Vector3::zeros(), Vector3::zeros()).is_err());
    }

    #[test]
    fn retract_zero_is_identity() {
        let on = OrthonormalLine::from_parts(Rotation3::identity(), 0.4);
        let out = orthonormal_retract(&on, &Vector4::zeros());
        assert_relative_eq!(out.u_matrix(), on.u_matrix(), epsilon = 1e-15);
        assert_relative_eq!(out.w_angle(), on.w_angle(), epsilon = 1e-15);
    }

    #[test]
    fn retract_half_pi_twice_rotates_w_by_pi() {
        let on = OrthonormalLine::from_parts(Rotation3::identity(), 0.3);
        let half = Vector4::new(0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let out = orthonormal_retract(&orthonormal_retract(&on, &half), &half);
        let expected = OrthonormalLine::from_parts(Rotation3::identity(), 0.3 + std::f64::consts::PI);
        assert_relative_eq!(out.w_matrix(), expected.w_matrix(), epsilon = 1e-12);
    }

    #[test]
    fn retract_small_deltas_compose_to_first_order() {
        let on = OrthonormalLine::from_parts(
            Rotation3::from(UnitQuaternion::from_euler_angles(0.2, -0.1, 0.5)),
            0.7,
        );
        let d1 = Vector4::new(1e-4, -2e-4, 5e-5, 3e-4);
        let d2 = Vector4::new(-4e-5, 1e-4, 2e-4, -1e-4);
        let seq = orthonormal_retract(&orthonormal_retract(&on, &d1), &d2);
        let sum = orthonormal_retract(&on, &(d1 + d2));
        let err = (seq.u_matrix() - sum.u_matrix()).norm()
            + (seq.w_angle() - sum.w_angle()).abs();
        // O(‖δ‖²) commutator error
        assert!(err < 1e-7, "composition error too large: {err}");
    }

    #[test]
    fn retract_preserves_manifold_invariants() {
        let on = OrthonormalLine::from_parts(Rotation3::identity(), 0.2);
        let out = orthonormal_retract(&on, &Vector4::new(2.0, -1.0, 0.5, 4.0));
        let u = out.u_matrix();
        assert_relative_eq!(u.transpose() * u, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(u.determinant(), 1.0, epsilon = 1e-12);
        let w = out.w_matrix();
        assert_relative_eq!(w.transpose() * w, Matrix2::identity(), epsilon = 1e-12);
        assert_relative_eq!(w.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_transform_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let line = random_line(&mut rng);
        let out = transform_line(&Pose::identity(), &line);
        assert_relative_eq!(out.moment(), line.moment(), epsilon = 1e-15);
        assert_relative_eq!(out.direction(), line.direction(), epsilon = 1e-15);
    }

    #[test]
    fn translation_moves_line_through_new_origin() {
        // n = (1,0,0), v = (0,1,0) translated by t = (0,0,1): the line now
        // passes through the origin, so n_c must come out as zero.
        let line = PluckerLine::new(Vector3::x(), Vector3::y()).unwrap();
        let pose = Pose::new(UnitQuaternion::identity(), Vector3::z());
        let out = transform_line(&pose, &line);
        assert_relative_eq!(out.moment(), Vector3::zeros(), epsilon = 1e-12);
        assert_relative_eq!(out.direction(), Vector3::y(), epsilon = 1e-12);
        // Downstream operations flag the degeneracy.
        assert_eq!(
            plucker_to_orthonormal(&out),
            Err(GeometryError::DegenerateLine)
        );
    }

    #[test]
    fn transform_then_inverse_recovers_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let line = random_line(&mut rng);
            let pose = random_pose(&mut rng);
            let out = transform_line(&pose.inverse(), &transform_line(&pose, &line));
            assert!(line.projectively_equal(&out, 1e-9));
            assert_relative_eq!(out.moment(), line.moment(), epsilon = 1e-9);
        }
    }

    #[test]
    fn transform_composition_matches_composed_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let line = random_line(&mut rng);
            let t1 = random_pose(&mut rng);
            let t2 = random_pose(&mut rng);
            let seq = transform_line(&t2, &transform_line(&t1, &line));
            let direct = transform_line(&(t2 * t1), &line);
            assert_relative_eq!(seq.moment(), direct.moment(), epsilon = 1e-9);
            assert_relative_eq!(seq.direction(), direct.direction(), epsilon = 1e-9);
        }
    }

    #[test]
    fn transform_preserves_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let line = random_line(&mut rng);
            let pose = random_pose(&mut rng);
            assert!(transform_line(&pose, &line).constraint().abs() < 1e-9);
        }
    }

    #[test]
    fn project_line_identity_intrinsics() {
        let intr = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2, 0.1).unwrap();
        let line = PluckerLine::new(Vector3::y(), Vector3::x()).unwrap();
        let l = project_line(&intr, &line).unwrap();
        assert_relative_eq!(l.a, 0.0, epsilon = 1e-12);
        assert_relative_eq!(l.b.abs(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(l.c, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_is_scale_invariant() {
        let intr = CameraIntrinsics::new(500.0, 400.0, 320.0, 240.0, 640, 480, 0.1).unwrap();
        let line = PluckerLine::new(Vector3::new(0.2, -0.4, 0.9), Vector3::zeros());
        // v = 0 allowed; scale n by k > 0.
        let line = line.unwrap();
        let scaled = PluckerLine::new(3.0 * line.moment(), 3.0 * line.direction()).unwrap();
        let l1 = project_line(&intr, &line).unwrap();
        let l2 = project_line(&intr, &scaled).unwrap();
        assert_relative_eq!(l1.a, l2.a, epsilon = 1e-12);
        assert_relative_eq!(l1.b, l2.b, epsilon = 1e-12);
        assert_relative_eq!(l1.c, l2.c, epsilon = 1e-12);
    }

    #[test]
    fn projected_endpoints_lie_on_projected_line() {
        // Project a 3D segment with both project_point and project_line and
        // check consistency via the point-line distance.
        let intr = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let x1 = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            );
            let x2 = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(2.0..6.0),
            );
            if (x1 - x2).norm() < 0.2 {
                continue;
            }
            let line = match PluckerLine::through_points(&x1, &x2) {
                Ok(l) => l,
                Err(_) => continue,
            };
            let l2d = match project_line(&intr, &line) {
                Ok(l) => l,
                Err(_) => continue,
            };
            for x in [&x1, &x2] {
                let px = intr.project_point(x).unwrap();
                let d = crate::point_line_distance_2d(&px, &(l2d.a, l2d.b, l2d.c)).unwrap();
                assert!(d < 1e-6, "endpoint off projected line by {d} px");
            }
        }
    }

    #[test]
    fn project_line_through_optical_center_errors() {
        let intr = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1).unwrap();
        let line = PluckerLine::new(Vector3::zeros(), Vector3::x()).unwrap();
        assert_eq!(
            project_line(&intr, &line),
            Err(GeometryError::LineThroughOpticalCenter)
        );
    }
}
