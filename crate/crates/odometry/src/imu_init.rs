//! Visual-inertial initialization: gyro bias from rotation consistency,
//! then gravity direction and keyframe velocities from a linear system on
//! the preintegrated increments, with the gravity magnitude fixed.

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use pl_geometry::{so3, Pose};
use pl_imu::{preintegrate, ImuBias, ImuNoise, ImuPreintegration, ImuSample};

#[derive(Clone, Copy, Debug)]
pub struct ImuInitConfig {
    pub min_keyframes: usize,
    pub gravity_magnitude: f64,
    /// Least-squares condition number above which the solution is refused.
    pub max_condition: f64,
    /// Minimum rotation span across the window (radians).
    pub min_rotation: f64,
    /// Minimum translation span across the window (meters).
    pub min_translation: f64,
    pub gyro_iterations: usize,
}

impl Default for ImuInitConfig {
    fn default() -> Self {
        Self {
            min_keyframes: 10,
            gravity_magnitude: 9.81,
            max_condition: 1e6,
            min_rotation: 0.035,
            min_translation: 0.05,
            gyro_iterations: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImuInitError {
    #[error("need at least {needed} keyframes, got {got}")]
    InsufficientKeyframes { needed: usize, got: usize },
    #[error("initialization deferred: {0}")]
    InitializationDeferred(&'static str),
    #[error(transparent)]
    Imu(#[from] pl_imu::ImuError),
}

#[derive(Clone, Debug)]
pub struct ImuInit {
    pub gravity: Vector3<f64>,
    pub bias: ImuBias,
    /// One velocity per input keyframe, world frame.
    pub velocities: Vec<Vector3<f64>>,
}

/// Estimates gravity, gyro bias and per-keyframe velocities from visually
/// estimated keyframe poses (world→camera) and the raw IMU stream. The
/// camera and body frames are taken to coincide.
pub fn initialize_imu(
    keyframes: &[(f64, Pose)],
    imu: &[ImuSample],
    noise: &ImuNoise,
    config: &ImuInitConfig,
) -> Result<ImuInit, ImuInitError> {
    let n = keyframes.len();
    if n < config.min_keyframes {
        return Err(ImuInitError::InsufficientKeyframes {
            needed: config.min_keyframes,
            got: n,
        });
    }

    // Excitation gates: a static or near-static window is refused outright.
    let mut max_rot = 0.0f64;
    let mut max_trans = 0.0f64;
    let centers: Vec<Vector3<f64>> = keyframes
        .iter()
        .map(|(_, p)| p.inverse().translation())
        .collect();
    for i in 0..n {
        for j in (i + 1)..n {
            max_rot = max_rot.max(keyframes[i].1.rotation_distance(&keyframes[j].1));
            max_trans = max_trans.max((centers[i] - centers[j]).norm());
        }
    }
    if max_rot < config.min_rotation {
        return Err(ImuInitError::InitializationDeferred(
            "insufficient rotational excitation",
        ));
    }
    if max_trans < config.min_translation {
        return Err(ImuInitError::InitializationDeferred(
            "insufficient translational excitation",
        ));
    }

    let slices: Vec<&[ImuSample]> = (0..n - 1)
        .map(|i| slice_between(imu, keyframes[i].0, keyframes[i + 1].0))
        .collect();
    if slices.iter().any(|s| s.len() < 2) {
        return Err(ImuInitError::InitializationDeferred(
            "IMU stream does not cover the keyframe intervals",
        ));
    }

    // Body-to-world rotations of the keyframes.
    let r_wb: Vec<UnitQuaternion<f64>> = keyframes
        .iter()
        .map(|(_, p)| p.rotation().inverse())
        .collect();

    // Gyro bias by rotation consistency, refined by re-preintegration.
    let mut gyro_bias = Vector3::zeros();
    for _ in 0..config.gyro_iterations {
        let bias = ImuBias::new(gyro_bias, Vector3::zeros());
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for i in 0..n - 1 {
            let pre = preintegrate(slices[i], &bias, noise)?;
            let delta_vis = r_wb[i].inverse() * r_wb[i + 1];
            let error = so3::log(&(pre.delta_rotation.inverse() * delta_vis));
            let jac = pre.d_rotation_d_bg;
            h += jac.transpose() * jac;
            g += jac.transpose() * error;
        }
        let Some(chol) = h.cholesky() else {
            return Err(ImuInitError::InitializationDeferred(
                "singular gyro-bias system",
            ));
        };
        let delta = chol.solve(&g);
        gyro_bias += delta;
        if delta.norm() < 1e-10 {
            break;
        }
    }

    let bias = ImuBias::new(gyro_bias, Vector3::zeros());
    let pres: Vec<ImuPreintegration> = slices
        .iter()
        .map(|s| preintegrate(s, &bias, noise))
        .collect::<Result<_, _>>()?;

    // Linear system in [g, v_0 .. v_{n-1}] from the position and velocity
    // increment relations.
    let unknowns = 3 + 3 * n;
    let rows = 6 * (n - 1);
    let mut a = DMatrix::<f64>::zeros(rows, unknowns);
    let mut b = DVector::<f64>::zeros(rows);
    for i in 0..n - 1 {
        let dt = pres[i].dt;
        let rot_i = r_wb[i].to_rotation_matrix().into_inner();
        let row = 6 * i;
        // p_{i+1} − p_i = v_i Δt + ½ g Δt² + R_i Δp̃
        for k in 0..3 {
            a[(row + k, k)] = 0.5 * dt * dt; // g block
            a[(row + k, 3 + 3 * i + k)] = dt; // v_i block
        }
        let rhs_p = centers[i + 1] - centers[i] - rot_i * pres[i].delta_position;
        for k in 0..3 {
            b[row + k] = rhs_p[k];
        }
        // v_{i+1} − v_i − g Δt = R_i Δṽ
        for k in 0..3 {
            a[(row + 3 + k, k)] = -dt;
            a[(row + 3 + k, 3 + 3 * i + k)] = -1.0;
            a[(row + 3 + k, 3 + 3 * (i + 1) + k)] = 1.0;
        }
        let rhs_v = rot_i * pres[i].delta_velocity;
        for k in 0..3 {
            b[row + 3 + k] = rhs_v[k];
        }
    }

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 0.0 || smax / smin > config.max_condition {
        return Err(ImuInitError::InitializationDeferred(
            "gravity/velocity system is ill-conditioned",
        ));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|_| ImuInitError::InitializationDeferred("singular linear system"))?;
    let g_free = Vector3::new(x[0], x[1], x[2]);
    if g_free.norm() < 1e-6 {
        return Err(ImuInitError::InitializationDeferred(
            "gravity unobservable",
        ));
    }

    // Fix the magnitude and recover the velocities in closed form.
    let gravity = g_free.normalize() * config.gravity_magnitude;
    let mut velocities = Vec::with_capacity(n);
    for i in 0..n - 1 {
        let dt = pres[i].dt;
        let rot_i = r_wb[i].to_rotation_matrix().into_inner();
        let v = (centers[i + 1]
            - centers[i]
            - rot_i * pres[i].delta_position
            - 0.5 * gravity * dt * dt)
            / dt;
        velocities.push(v);
    }
    // Last keyframe velocity from the velocity relation of the final pair.
    let last = n - 2;
    let rot_last = r_wb[last].to_rotation_matrix().into_inner();
    let v_last = velocities[last]
        + gravity * pres[last].dt
        + rot_last * pres[last].delta_velocity;
    velocities.push(v_last);

    Ok(ImuInit {
        gravity,
        bias,
        velocities,
    })
}

/// The samples covering [t0, t1] inclusive of both boundary samples.
pub fn slice_between(imu: &[ImuSample], t0: f64, t1: f64) -> &[ImuSample] {
    let start = imu.partition_point(|s| s.timestamp < t0 - 1e-9);
    let end = imu.partition_point(|s| s.timestamp <= t1 + 1e-9);
    &imu[start..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slice_covers_interval_inclusively() {
        let samples: Vec<ImuSample> = (0..100)
            .map(|k| ImuSample {
                timestamp: k as f64 * 0.01,
                gyro: Vector3::zeros(),
                accel: Vector3::zeros(),
            })
            .collect();
        let s = slice_between(&samples, 0.10, 0.20);
        assert!((s[0].timestamp - 0.10).abs() < 1e-12);
        assert!((s[s.len() - 1].timestamp - 0.20).abs() < 1e-12);
        assert_eq!(s.len(), 11);
    }
}
