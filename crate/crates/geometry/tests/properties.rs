//! Property tests over the line algebra.

use nalgebra::{UnitQuaternion, Vector3, Vector4};
use pl_geometry::{
    orthonormal_retract, orthonormal_to_plucker, plucker_to_orthonormal, transform_line,
    PluckerLine, Pose,
};
use proptest::prelude::*;

fn line_strategy() -> impl Strategy<Value = PluckerLine> {
    (
        prop::array::uniform3(-5.0f64..5.0),
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_filter_map("points must span a line away from the origin", |(a, b)| {
            let x1 = Vector3::from_column_slice(&a);
            let x2 = Vector3::from_column_slice(&b);
            if (x1 - x2).norm() < 0.1 || x1.cross(&x2).norm() < 0.1 {
                return None;
            }
            PluckerLine::through_points(&x1, &x2).ok()
        })
}

fn pose_strategy() -> impl Strategy<Value = Pose> {
    (
        -1.0f64..1.0,
        -1.0f64..1.0,
        -1.0f64..1.0,
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_map(|(r, p, y, t)| {
            Pose::new(
                UnitQuaternion::from_euler_angles(r, p, y),
                Vector3::from_column_slice(&t),
            )
        })
}

proptest! {
    #[test]
    fn round_trip_preserves_the_projective_line(line in line_strategy()) {
        let back = orthonormal_to_plucker(&plucker_to_orthonormal(&line).unwrap());
        prop_assert!(line.projectively_equal(&back, 1e-9));
    }

    #[test]
    fn transforms_compose_and_preserve_the_constraint(
        line in line_strategy(),
        t1 in pose_strategy(),
        t2 in pose_strategy(),
    ) {
        let seq = transform_line(&t2, &transform_line(&t1, &line));
        let direct = transform_line(&(t2 * t1), &line);
        prop_assert!((seq.moment() - direct.moment()).norm() < 1e-9);
        prop_assert!((seq.direction() - direct.direction()).norm() < 1e-9);
        prop_assert!(seq.constraint().abs() < 1e-9);
    }

    #[test]
    fn retraction_stays_on_the_manifold(
        line in line_strategy(),
        delta in prop::array::uniform4(-2.0f64..2.0),
    ) {
        let on = plucker_to_orthonormal(&line).unwrap();
        let moved = orthonormal_retract(&on, &Vector4::from_column_slice(&delta));
        let u = moved.u_matrix();
        prop_assert!((u.transpose() * u - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((u.determinant() - 1.0).abs() < 1e-12);
        // The represented object is still a valid Plücker line.
        prop_assert!(orthonormal_to_plucker(&moved).constraint().abs() < 1e-12);
    }
}
