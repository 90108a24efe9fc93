//! Solver behavior: trivial convergence, monotone accepted cost, gauge
//! handling, and a synthetic bundle adjustment that must recover perturbed
//! poses.

use nalgebra::{DVector, UnitQuaternion, Vector2, Vector3};
use pl_geometry::{plucker_to_orthonormal, CameraIntrinsics, PluckerLine, Pose};
use pl_optimizer::{
    solve_lm, LmOptions, Problem, Residual, RobustLoss, Termination, VariableValue,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn intr() -> CameraIntrinsics {
    CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1).unwrap()
}

fn info(dim: usize) -> DVector<f64> {
    DVector::from_element(dim, 1.0)
}

#[test]
fn point_prior_converges_in_three_iterations() {
    let mut problem = Problem::new();
    let target = Vector3::new(1.0, -2.0, 3.0);
    let point = problem.add_variable(VariableValue::Point(Vector3::zeros()), false);
    problem
        .add_residual(
            Residual::PointPrior {
                point,
                measurement: target,
            },
            info(3),
            RobustLoss::None,
        )
        .unwrap();
    let report = solve_lm(&mut problem, &LmOptions::default());
    assert!(report.iterations <= 3, "took {} iterations", report.iterations);
    assert!((problem.point(point) - target).norm() < 1e-9);
    assert!(report.final_cost < 1e-18);
}

#[test]
fn all_fixed_is_trivial() {
    let mut problem = Problem::new();
    let point = problem.add_variable(VariableValue::Point(Vector3::zeros()), true);
    problem
        .add_residual(
            Residual::PointPrior {
                point,
                measurement: Vector3::new(1.0, 1.0, 1.0),
            },
            info(3),
            RobustLoss::None,
        )
        .unwrap();
    let report = solve_lm(&mut problem, &LmOptions::default());
    assert_eq!(report.iterations, 0);
    assert_eq!(report.termination, Termination::Trivial);
    assert_eq!(problem.point(point), Vector3::zeros());
}

struct SyntheticBa {
    problem: Problem,
    pose_keys: Vec<pl_optimizer::VariableKey>,
    true_poses: Vec<Pose>,
}

/// Ten keyframes in a ring looking at scattered points and a few 3D lines;
/// all measurements noiseless.
fn build_synthetic_ba(perturb: bool, with_lines: bool) -> SyntheticBa {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let intr = intr();
    let n_poses = 10;

    let mut true_poses = Vec::new();
    for k in 0..n_poses {
        let angle = 0.25 * k as f64;
        // Camera ring around the origin, looking roughly at the scene
        // center placed 5 m ahead.
        let center = Vector3::new(1.5 * angle.sin(), 0.2 * (k as f64), 0.3 * angle.cos());
        let r_cw = UnitQuaternion::from_euler_angles(
            0.05 * angle.sin(),
            0.08 * angle.cos(),
            0.02 * k as f64,
        );
        let t_cw = -(r_cw * center);
        true_poses.push(Pose::new(r_cw, t_cw));
    }

    let mut points = Vec::new();
    for _ in 0..60 {
        points.push(Vector3::new(
            rng.random_range(-2.5..2.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(4.0..8.0),
        ));
    }
    let mut lines = Vec::new();
    if with_lines {
        for _ in 0..8 {
            let a = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(4.0..7.0),
            );
            let b = a + Vector3::new(
                rng.random_range(0.5..2.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            );
            lines.push((a, b));
        }
    }

    let mut problem = Problem::new();
    let mut pose_keys = Vec::new();
    for (k, pose) in true_poses.iter().enumerate() {
        let value = if perturb && k > 0 {
            let delta = nalgebra::Vector6::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.087..0.087),
                rng.random_range(-0.087..0.087),
                rng.random_range(-0.087..0.087),
            );
            pose.retract(&delta)
        } else {
            *pose
        };
        // First keyframe fixed to remove the gauge.
        pose_keys.push(problem.add_variable(VariableValue::Pose(value), k == 0));
    }

    // Left observations everywhere plus right-camera observations on the
    // first keyframe: the stereo baseline pins the scale gauge.
    let right_offset = Vector3::new(-intr.baseline, 0.0, 0.0);
    for point in &points {
        let key = problem.add_variable(VariableValue::Point(*point), false);
        for (k, pose) in true_poses.iter().enumerate() {
            let offsets: &[Vector3<f64>] = if k == 0 {
                &[Vector3::zeros(), right_offset]
            } else {
                &[Vector3::zeros()]
            };
            for offset in offsets {
                let xc = pose.transform_point(point) + offset;
                let Ok(px) = intr.project_point(&xc) else {
                    continue;
                };
                if !intr.contains(&px) {
                    continue;
                }
                problem
                    .add_residual(
                        Residual::PointReprojection {
                            pose: pose_keys[k],
                            point: key,
                            observation: px,
                            intrinsics: intr,
                            camera_offset: *offset,
                        },
                        info(2),
                        RobustLoss::None,
                    )
                    .unwrap();
            }
        }
    }

    for (a, b) in &lines {
        let plucker = PluckerLine::through_points(a, b).unwrap();
        let Ok(on) = plucker_to_orthonormal(&plucker) else {
            continue;
        };
        let key = problem.add_variable(VariableValue::Line(on), false);
        for (k, pose) in true_poses.iter().enumerate() {
            let (Ok(p1), Ok(p2)) = (
                intr.project_point(&pose.transform_point(a)),
                intr.project_point(&pose.transform_point(b)),
            ) else {
                continue;
            };
            if !intr.contains(&p1) || !intr.contains(&p2) {
                continue;
            }
            problem
                .add_residual(
                    Residual::LineReprojection {
                        pose: pose_keys[k],
                        line: key,
                        endpoints: (p1, p2),
                        intrinsics: intr,
                    },
                    info(2),
                    RobustLoss::None,
                )
                .unwrap();
        }
    }

    SyntheticBa {
        problem,
        pose_keys,
        true_poses,
    }
}

#[test]
fn noiseless_ba_is_already_optimal() {
    let mut ba = build_synthetic_ba(false, true);
    let report = solve_lm(&mut ba.problem, &LmOptions::default());
    assert!(report.initial_cost < 1e-12);
    assert!(report.final_cost <= report.initial_cost);
}

#[test]
fn perturbed_ba_recovers_poses() {
    let mut ba = build_synthetic_ba(true, true);
    let initial = ba.problem.cost();
    assert!(initial > 1.0, "perturbation should show up in the cost");
    let report = solve_lm(
        &mut ba.problem,
        &LmOptions {
            max_iterations: 100,
            ..Default::default()
        },
    );
    assert!(report.final_cost < 1e-10, "final cost {}", report.final_cost);
    let mut worst_ate = 0.0f64;
    for (key, truth) in ba.pose_keys.iter().zip(ba.true_poses.iter()) {
        let est = ba.problem.pose(*key);
        // Compare camera centers.
        let c_est = est.inverse().translation();
        let c_true = truth.inverse().translation();
        worst_ate = worst_ate.max((c_est - c_true).norm());
    }
    assert!(worst_ate < 1e-3, "worst pose error {worst_ate} m");
}

#[test]
fn accepted_cost_is_monotone() {
    let mut ba = build_synthetic_ba(true, false);
    let report = solve_lm(&mut ba.problem, &LmOptions::default());
    for pair in report.cost_trace.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-15, "cost increased: {pair:?}");
    }
}

#[test]
fn outlier_rejection_deactivates_bad_blocks() {
    let mut ba = build_synthetic_ba(false, false);
    // Corrupt a few observations badly.
    let intr = intr();
    let mut corrupted = 0;
    let point_key = {
        // add one bogus residual per pose against an arbitrary point
        let key = ba.problem.add_variable(
            VariableValue::Point(Vector3::new(0.0, 0.0, 5.0)),
            false,
        );
        for pose_key in ba.pose_keys.iter().take(4) {
            ba.problem
                .add_residual(
                    Residual::PointReprojection {
                        pose: *pose_key,
                        point: key,
                        observation: Vector2::new(50.0 + 100.0 * corrupted as f64, 400.0),
                        intrinsics: intr,
                        camera_offset: Vector3::zeros(),
                    },
                    info(2),
                    RobustLoss::Huber(2.0),
                )
                .unwrap();
            corrupted += 1;
        }
        key
    };
    let _ = point_key;
    let report = solve_lm(
        &mut ba.problem,
        &LmOptions {
            max_iterations: 30,
            outlier_rejection: Some(Default::default()),
            ..Default::default()
        },
    );
    // The four contradictory observations cannot all be inliers.
    assert!(report.deactivated_blocks >= 2, "deactivated {}", report.deactivated_blocks);
    assert!(report.final_cost < 1e-6, "final cost {}", report.final_cost);
}
