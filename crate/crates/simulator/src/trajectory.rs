//! Continuous-time pose trajectory: uniform cubic B-splines on position and
//! ZYX Euler angles, C² by construction, with analytic derivatives for IMU
//! synthesis.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use pl_geometry::Pose;
use pl_imu::{ImuBias, ImuNoise, ImuSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrajectoryError {
    #[error("need at least 4 control points, got {0}")]
    TooFewControlPoints(usize),
    #[error("time {t} outside the valid range [{lo}, {hi})")]
    OutOfRange { t: f64, lo: f64, hi: f64 },
}

/// Pose spline: body-to-world position and ZYX Euler angles on a shared
/// uniform knot grid.
#[derive(Clone, Debug)]
pub struct SimTrajectory {
    positions: Vec<Vector3<f64>>,
    /// (roll, pitch, yaw) control values, yaw unwrapped for continuity.
    angles: Vec<Vector3<f64>>,
    knot_dt: f64,
    t0: f64,
}

fn bspline_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - 3.0 * u + 3.0 * u2 - u3) / 6.0,
        (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
        (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0,
        u3 / 6.0,
    ]
}

fn bspline_dweights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    [
        (-3.0 + 6.0 * u - 3.0 * u2) / 6.0,
        (-12.0 * u + 9.0 * u2) / 6.0,
        (3.0 + 6.0 * u - 9.0 * u2) / 6.0,
        3.0 * u2 / 6.0,
    ]
}

fn bspline_ddweights(u: f64) -> [f64; 4] {
    [
        (6.0 - 6.0 * u) / 6.0,
        (-12.0 + 18.0 * u) / 6.0,
        (6.0 - 18.0 * u) / 6.0,
        6.0 * u / 6.0,
    ]
}

impl SimTrajectory {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        angles: Vec<Vector3<f64>>,
        knot_dt: f64,
        t0: f64,
    ) -> Result<Self, TrajectoryError> {
        if positions.len() < 4 || positions.len() != angles.len() {
            return Err(TrajectoryError::TooFewControlPoints(positions.len()));
        }
        let mut angles = angles;
        // Unwrap each Euler channel across control points so the spline
        // does not spin through ±π jumps.
        for k in 1..angles.len() {
            for c in 0..3 {
                let prev = angles[k - 1][c];
                let mut a = angles[k][c];
                while a - prev > std::f64::consts::PI {
                    a -= 2.0 * std::f64::consts::PI;
                }
                while prev - a > std::f64::consts::PI {
                    a += 2.0 * std::f64::consts::PI;
                }
                angles[k][c] = a;
            }
        }
        Ok(Self {
            positions,
            angles,
            knot_dt,
            t0,
        })
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    /// Exclusive end of the valid time range.
    pub fn end_time(&self) -> f64 {
        self.t0 + (self.positions.len() - 3) as f64 * self.knot_dt
    }

    fn segment(&self, t: f64) -> Result<(usize, f64), TrajectoryError> {
        let lo = self.start_time();
        let hi = self.end_time();
        if t < lo || t >= hi {
            return Err(TrajectoryError::OutOfRange { t, lo, hi });
        }
        let s = (t - lo) / self.knot_dt;
        let mut seg = s.floor() as usize;
        let max_seg = self.positions.len() - 4;
        if seg > max_seg {
            seg = max_seg;
        }
        Ok((seg, s - seg as f64))
    }

    fn blend(points: &[Vector3<f64>], seg: usize, w: &[f64; 4]) -> Vector3<f64> {
        w[0] * points[seg] + w[1] * points[seg + 1] + w[2] * points[seg + 2] + w[3] * points[seg + 3]
    }

    pub fn position(&self, t: f64) -> Result<Vector3<f64>, TrajectoryError> {
        let (seg, u) = self.segment(t)?;
        Ok(Self::blend(&self.positions, seg, &bspline_weights(u)))
    }

    pub fn velocity(&self, t: f64) -> Result<Vector3<f64>, TrajectoryError> {
        let (seg, u) = self.segment(t)?;
        Ok(Self::blend(&self.positions, seg, &bspline_dweights(u)) / self.knot_dt)
    }

    pub fn acceleration(&self, t: f64) -> Result<Vector3<f64>, TrajectoryError> {
        let (seg, u) = self.segment(t)?;
        Ok(Self::blend(&self.positions, seg, &bspline_ddweights(u)) / (self.knot_dt * self.knot_dt))
    }

    fn euler(&self, t: f64) -> Result<(Vector3<f64>, Vector3<f64>), TrajectoryError> {
        let (seg, u) = self.segment(t)?;
        let ang = Self::blend(&self.angles, seg, &bspline_weights(u));
        let dang = Self::blend(&self.angles, seg, &bspline_dweights(u)) / self.knot_dt;
        Ok((ang, dang))
    }

    /// Body-to-world rotation.
    pub fn rotation(&self, t: f64) -> Result<UnitQuaternion<f64>, TrajectoryError> {
        let (ang, _) = self.euler(t)?;
        Ok(UnitQuaternion::from_euler_angles(ang.x, ang.y, ang.z))
    }

    /// Body-to-world pose of the body frame.
    pub fn pose_wb(&self, t: f64) -> Result<Pose, TrajectoryError> {
        Ok(Pose::new(self.rotation(t)?, self.position(t)?))
    }

    /// Body-frame angular velocity from the ZYX Euler kinematics.
    pub fn angular_velocity_body(&self, t: f64) -> Result<Vector3<f64>, TrajectoryError> {
        let (ang, dang) = self.euler(t)?;
        let (roll, pitch) = (ang.x, ang.y);
        let (droll, dpitch, dyaw) = (dang.x, dang.y, dang.z);
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        Ok(Vector3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * cp * sr,
            -dpitch * sr + dyaw * cp * cr,
        ))
    }

    /// Samples IMU measurements over the valid range at `rate` Hz:
    /// `ω̃ = ω + b_g (+ noise)`, `ã = R_wbᵀ (p̈ − g) + b_a (+ noise)`.
    pub fn synthesize_imu(
        &self,
        rate: f64,
        noise: Option<&ImuNoise>,
        bias: &ImuBias,
        gravity: &Vector3<f64>,
        seed: u64,
    ) -> Vec<ImuSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 1.0 / rate;
        let (sigma_g, sigma_a) = match noise {
            // Discrete-time standard deviations.
            Some(n) => (n.gyro_density / dt.sqrt(), n.accel_density / dt.sqrt()),
            None => (0.0, 0.0),
        };
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut draw = |sigma: f64| -> Vector3<f64> {
            if sigma == 0.0 {
                Vector3::zeros()
            } else {
                Vector3::new(
                    sigma * normal.sample(&mut rng),
                    sigma * normal.sample(&mut rng),
                    sigma * normal.sample(&mut rng),
                )
            }
        };
        let mut out = Vec::new();
        let mut t = self.start_time();
        let end = self.end_time() - 1e-9;
        while t < end {
            let omega = self.angular_velocity_body(t).unwrap();
            let rot = self.rotation(t).unwrap();
            let accel_world = self.acceleration(t).unwrap();
            let specific_force = rot.inverse() * (accel_world - gravity);
            out.push(ImuSample {
                timestamp: t,
                gyro: omega + bias.gyro + draw(sigma_g),
                accel: specific_force + bias.accel + draw(sigma_a),
            });
            t += dt;
        }
        out
    }

    /// Closed orbit around `center` at the given radius and height, camera
    /// looking inward (body z axis toward the center, y down). `laps > 1`
    /// revisits the same poses.
    pub fn orbit(
        center: Vector3<f64>,
        radius: f64,
        height: f64,
        laps: usize,
        control_points_per_lap: usize,
        duration_per_lap: f64,
    ) -> Self {
        let n = control_points_per_lap * laps + 4;
        let knot_dt = duration_per_lap * laps as f64 / (n - 3) as f64;
        let mut positions = Vec::with_capacity(n);
        let mut angles = Vec::with_capacity(n);
        for k in 0..n {
            let alpha = 2.0 * std::f64::consts::PI * k as f64 / control_points_per_lap as f64;
            let pos = center
                + Vector3::new(
                    radius * alpha.cos(),
                    radius * alpha.sin(),
                    height + 0.35 * (2.0 * alpha).sin(),
                );
            positions.push(pos);
            // Look at the scene center: z_b toward the center (horizontal),
            // y_b down.
            let to_center = center - Vector3::new(pos.x, pos.y, center.z + height);
            let z_b = Vector3::new(to_center.x, to_center.y, 0.0).normalize();
            let y_b = -Vector3::z();
            let x_b = y_b.cross(&z_b);
            let rot = Rotation3::from_matrix_unchecked(nalgebra::Matrix3::from_columns(&[
                x_b, y_b, z_b,
            ]));
            let (roll, pitch, yaw) = rot.euler_angles();
            angles.push(Vector3::new(roll, pitch, yaw));
        }
        Self::new(positions, angles, knot_dt, 0.0).expect("orbit has enough control points")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use pl_geometry::so3;

    fn sample_trajectory() -> SimTrajectory {
        let mut positions = Vec::new();
        let mut angles = Vec::new();
        for k in 0..12 {
            let t = k as f64 * 0.5;
            positions.push(Vector3::new(t.sin(), 0.5 * t.cos(), 0.1 * t));
            angles.push(Vector3::new(
                0.2 * (0.7 * t).sin(),
                0.15 * (0.9 * t).cos(),
                0.5 * t.sin(),
            ));
        }
        SimTrajectory::new(positions, angles, 0.4, 0.0).unwrap()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let traj = sample_trajectory();
        let h = 1e-6;
        for &t in &[0.5, 1.0, 1.7, 2.5] {
            let v_fd = (traj.position(t + h).unwrap() - traj.position(t - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(traj.velocity(t).unwrap(), v_fd, epsilon = 1e-6);
            let a_fd = (traj.velocity(t + h).unwrap() - traj.velocity(t - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(traj.acceleration(t).unwrap(), a_fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn angular_velocity_matches_rotation_derivative() {
        let traj = sample_trajectory();
        let h = 1e-6;
        for &t in &[0.6, 1.2, 2.1] {
            let r_plus = traj.rotation(t + h).unwrap();
            let r_minus = traj.rotation(t - h).unwrap();
            let omega_fd = so3::log(&(r_minus.inverse() * r_plus)) / (2.0 * h);
            let omega = traj.angular_velocity_body(t).unwrap();
            assert_relative_eq!(omega, omega_fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn static_hover_measures_minus_gravity() {
        let positions = vec![Vector3::new(1.0, 2.0, 3.0); 6];
        let angles = vec![Vector3::zeros(); 6];
        let traj = SimTrajectory::new(positions, angles, 0.5, 0.0).unwrap();
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let samples = traj.synthesize_imu(100.0, None, &ImuBias::zero(), &gravity, 0);
        for s in &samples {
            assert_relative_eq!(s.gyro, Vector3::zeros(), epsilon = 1e-12);
            assert_relative_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_velocity_also_measures_minus_gravity() {
        let positions: Vec<_> = (0..8)
            .map(|k| Vector3::new(0.3 * k as f64, -0.1 * k as f64, 0.05 * k as f64))
            .collect();
        let angles = vec![Vector3::zeros(); 8];
        let traj = SimTrajectory::new(positions, angles, 0.5, 0.0).unwrap();
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let samples = traj.synthesize_imu(50.0, None, &ImuBias::zero(), &gravity, 0);
        for s in samples.iter().skip(1) {
            assert_relative_eq!(s.accel, Vector3::new(0.0, 0.0, 9.81), epsilon = 1e-8);
        }
    }

    #[test]
    fn out_of_range_is_reported() {
        let traj = sample_trajectory();
        assert!(matches!(
            traj.position(-1.0),
            Err(TrajectoryError::OutOfRange { .. })
        ));
        assert!(traj.position(traj.end_time()).is_err());
    }

    #[test]
    fn orbit_looks_at_center() {
        let center = Vector3::new(0.0, 0.0, 0.0);
        let traj = SimTrajectory::orbit(center, 5.0, 0.5, 1, 12, 30.0);
        let mut t = traj.start_time();
        while t < traj.end_time() - 1e-6 {
            let pose = traj.pose_wb(t).unwrap();
            let z_world = pose.rotation() * Vector3::z();
            let to_center = center + Vector3::new(0.0, 0.0, 0.5) - pose.translation();
            let cos = z_world.dot(&to_center.normalize());
            assert!(cos > 0.8, "camera not facing the scene at t={t}: cos {cos}");
            t += 1.0;
        }
    }
}
