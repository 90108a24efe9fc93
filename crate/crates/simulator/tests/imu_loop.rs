//! Closes the IMU loop: preintegrating the noiseless synthesized stream
//! between trajectory samples and evaluating the residuals at ground-truth
//! states must give (numerically) zero.

use nalgebra::Vector3;
use pl_imu::{imu_residual, preintegrate, ImuBias, ImuNoise, ImuState};
use pl_simulator::SimTrajectory;

#[test]
fn residuals_vanish_at_ground_truth() {
    use pl_geometry::so3;

    let traj = SimTrajectory::orbit(Vector3::zeros(), 5.0, 0.4, 1, 16, 24.0);
    let gravity = Vector3::new(0.0, 0.0, -9.81);
    let bias = ImuBias::new(
        Vector3::new(0.004, -0.002, 0.001),
        Vector3::new(0.03, 0.01, -0.02),
    );
    let samples = traj.synthesize_imu(200.0, None, &bias, &gravity, 0);

    // The ground-truth state stream consistent with the measurements:
    // Euler-integrate the noiseless stream from the true initial state.
    let pose0 = traj.pose_wb(samples[0].timestamp).unwrap();
    let mut states = vec![ImuState {
        rotation: *pose0.rotation(),
        position: pose0.translation(),
        velocity: traj.velocity(samples[0].timestamp).unwrap(),
        bias,
    }];
    for pair in samples.windows(2) {
        let dt = pair[1].timestamp - pair[0].timestamp;
        let prev = *states.last().unwrap();
        let a_world = prev.rotation * (pair[0].accel - bias.accel) + gravity;
        let omega = pair[0].gyro - bias.gyro;
        states.push(ImuState {
            rotation: prev.rotation * so3::exp(&(omega * dt)),
            position: prev.position + prev.velocity * dt + 0.5 * a_world * dt * dt,
            velocity: prev.velocity + a_world * dt,
            bias,
        });
    }

    // The integrated states track the continuous trajectory closely.
    let last_t = samples.last().unwrap().timestamp;
    let drift = (states.last().unwrap().position - traj.position(last_t).unwrap()).norm();
    assert!(drift < 0.05, "integration drifted {drift} m from the spline");

    let mut checked = 0;
    let chunk = 50; // 0.25 s per keyframe interval
    let mut start = 0;
    while start + chunk < samples.len() {
        let end = start + chunk;
        let pre = preintegrate(&samples[start..=end], &bias, &ImuNoise::default()).unwrap();
        let r = imu_residual(&states[start], &states[end], &pre, &gravity);
        let norm = r.norm();
        assert!(norm < 1e-8, "residual {norm} at sample {start}");
        checked += 1;
        start = end;
    }
    assert!(checked > 50);
}

/// With the measurements replaced by exact increments (rather than sampled
/// band-limited signals), the residual is zero to machine precision. This
/// isolates the residual algebra from the discretization.
#[test]
fn residual_algebra_is_exact_for_euler_consistent_states() {
    use pl_geometry::so3;

    let gravity = Vector3::new(0.0, 0.0, -9.81);
    let bias = ImuBias::zero();
    // Integrate arbitrary measurements with the same Euler scheme to
    // produce states exactly consistent with the preintegration.
    let dt = 0.01;
    let n = 100;
    let samples: Vec<pl_imu::ImuSample> = (0..=n)
        .map(|k| {
            let t = k as f64 * dt;
            pl_imu::ImuSample {
                timestamp: t,
                gyro: Vector3::new(0.3 * (2.0 * t).sin(), 0.1, -0.4 * (3.0 * t).cos()),
                accel: Vector3::new(0.5, -0.2 * (1.5 * t).sin(), 0.8),
            }
        })
        .collect();

    let mut rot = nalgebra::UnitQuaternion::identity();
    let mut vel = Vector3::new(0.2, -0.1, 0.3);
    let mut pos = Vector3::new(1.0, 2.0, 3.0);
    let state_i = ImuState {
        rotation: rot,
        position: pos,
        velocity: vel,
        bias,
    };
    for k in 0..n {
        let a_world = rot * samples[k].accel + gravity;
        pos += vel * dt + 0.5 * a_world * dt * dt;
        vel += a_world * dt;
        rot *= so3::exp(&(samples[k].gyro * dt));
    }
    let state_j = ImuState {
        rotation: rot,
        position: pos,
        velocity: vel,
        bias,
    };

    let pre = preintegrate(&samples, &bias, &ImuNoise::default()).unwrap();
    let r = imu_residual(&state_i, &state_j, &pre, &gravity);
    assert!(r.norm() < 1e-8, "algebraic residual {}", r.norm());
}
