//! IMU preintegration between keyframes and the corresponding residuals.
//!
//! The accumulated terms use the discrete Euler recursion
//!
//! ```text
//! ΔR(k+1) = ΔR(k) · Exp((ω_k − b_g) Δt)
//! Δv(k+1) = Δv(k) + ΔR(k) (a_k − b_a) Δt
//! Δp(k+1) = Δp(k) + Δv(k) Δt + ½ ΔR(k) (a_k − b_a) Δt²
//! ```
//!
//! with first-order bias Jacobians accumulated alongside, so the terms can
//! be corrected for small bias changes without re-integration.

pub mod io;

use nalgebra::{Matrix3, SVector, UnitQuaternion, Vector3, Vector6};
use pl_geometry::so3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImuError {
    #[error("no samples cover the interval")]
    EmptyInterval,
    #[error("timestamps are not strictly increasing")]
    InvalidStream,
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(&'static str),
}

/// One gyro/accelerometer sample (body frame, SI units).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample {
    pub timestamp: f64,
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

/// Constant gyro/accelerometer biases over a keyframe interval.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct ImuBias {
    pub gyro: Vector3<f64>,
    pub accel: Vector3<f64>,
}

impl ImuBias {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { gyro, accel }
    }

    pub fn as_vector(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.gyro);
        v.fixed_rows_mut::<3>(3).copy_from(&self.accel);
        v
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            gyro: v.fixed_rows::<3>(0).into_owned(),
            accel: v.fixed_rows::<3>(3).into_owned(),
        }
    }
}

/// Continuous-time noise densities and bias random walks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuNoise {
    pub gyro_density: f64,
    pub accel_density: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
}

impl ImuNoise {
    pub fn new(
        gyro_density: f64,
        accel_density: f64,
        gyro_walk: f64,
        accel_walk: f64,
    ) -> Result<Self, ImuError> {
        if gyro_density <= 0.0 || accel_density <= 0.0 || gyro_walk <= 0.0 || accel_walk <= 0.0 {
            return Err(ImuError::InvalidNoise("all noise terms must be > 0"));
        }
        Ok(Self {
            gyro_density,
            accel_density,
            gyro_walk,
            accel_walk,
        })
    }
}

impl Default for ImuNoise {
    fn default() -> Self {
        // EuRoC-like magnitudes.
        Self {
            gyro_density: 1.7e-4,
            accel_density: 2.0e-3,
            gyro_walk: 2.0e-5,
            accel_walk: 3.0e-3,
        }
    }
}

/// Diagonal information weights for the residual blocks, `1/(σ² Δt)` per
/// axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InformationWeights {
    pub rotation: f64,
    pub velocity: f64,
    pub position: f64,
    pub gyro_bias: f64,
    pub accel_bias: f64,
}

/// Preintegrated motion between two keyframes, with the bias Jacobians and
/// linearization point. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuPreintegration {
    pub delta_rotation: UnitQuaternion<f64>,
    pub delta_velocity: Vector3<f64>,
    pub delta_position: Vector3<f64>,
    pub dt: f64,
    pub d_rotation_d_bg: Matrix3<f64>,
    pub d_velocity_d_bg: Matrix3<f64>,
    pub d_velocity_d_ba: Matrix3<f64>,
    pub d_position_d_bg: Matrix3<f64>,
    pub d_position_d_ba: Matrix3<f64>,
    pub linearization_bias: ImuBias,
    pub information: InformationWeights,
}

/// World-frame state of a keyframe used by the IMU residuals: `rotation`
/// and `position` are body-to-world.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuState {
    pub rotation: UnitQuaternion<f64>,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub bias: ImuBias,
}

/// Integrates all samples of `[samples[0].timestamp, samples.last().timestamp]`.
/// The last sample only closes the interval; its measurement is unused.
pub fn preintegrate(
    samples: &[ImuSample],
    bias: &ImuBias,
    noise: &ImuNoise,
) -> Result<ImuPreintegration, ImuError> {
    if samples.len() < 2 {
        return Err(ImuError::EmptyInterval);
    }
    for pair in samples.windows(2) {
        if pair[1].timestamp <= pair[0].timestamp {
            return Err(ImuError::InvalidStream);
        }
    }

    let mut delta_rotation = UnitQuaternion::identity();
    let mut delta_velocity = Vector3::zeros();
    let mut delta_position = Vector3::zeros();
    let mut j_r = Matrix3::zeros();
    let mut j_vg = Matrix3::zeros();
    let mut j_va = Matrix3::zeros();
    let mut j_pg = Matrix3::zeros();
    let mut j_pa = Matrix3::zeros();

    for pair in samples.windows(2) {
        let dt = pair[1].timestamp - pair[0].timestamp;
        let omega = pair[0].gyro - bias.gyro;
        let accel = pair[0].accel - bias.accel;
        let rot = delta_rotation.to_rotation_matrix().into_inner();
        let accel_hat = so3::hat(&accel);

        // Position before velocity, both before rotation: the sums use the
        // state at index k.
        j_pg += j_vg * dt - 0.5 * rot * accel_hat * j_r * dt * dt;
        j_pa += j_va * dt - 0.5 * rot * dt * dt;
        j_vg -= rot * accel_hat * j_r * dt;
        j_va -= rot * dt;

        delta_position += delta_velocity * dt + 0.5 * rot * accel * dt * dt;
        delta_velocity += rot * accel * dt;

        let step = omega * dt;
        j_r = so3::exp(&step)
            .to_rotation_matrix()
            .into_inner()
            .transpose()
            * j_r
            - so3::right_jacobian(&step) * dt;
        delta_rotation *= so3::exp(&step);
    }

    let dt_total = samples[samples.len() - 1].timestamp - samples[0].timestamp;
    Ok(ImuPreintegration {
        delta_rotation,
        delta_velocity,
        delta_position,
        dt: dt_total,
        d_rotation_d_bg: j_r,
        d_velocity_d_bg: j_vg,
        d_velocity_d_ba: j_va,
        d_position_d_bg: j_pg,
        d_position_d_ba: j_pa,
        linearization_bias: *bias,
        information: InformationWeights {
            rotation: 1.0 / (noise.gyro_density * noise.gyro_density * dt_total),
            velocity: 1.0 / (noise.accel_density * noise.accel_density * dt_total),
            position: 1.0 / (noise.accel_density * noise.accel_density * dt_total),
            gyro_bias: 1.0 / (noise.gyro_walk * noise.gyro_walk * dt_total),
            accel_bias: 1.0 / (noise.accel_walk * noise.accel_walk * dt_total),
        },
    })
}

impl ImuPreintegration {
    /// First-order corrected `(ΔR, Δv, Δp)` at a new bias.
    pub fn bias_corrected(
        &self,
        new_bias: &ImuBias,
    ) -> (UnitQuaternion<f64>, Vector3<f64>, Vector3<f64>) {
        let db_g = new_bias.gyro - self.linearization_bias.gyro;
        let db_a = new_bias.accel - self.linearization_bias.accel;
        let rot = self.delta_rotation * so3::exp(&(self.d_rotation_d_bg * db_g));
        let vel = self.delta_velocity + self.d_velocity_d_bg * db_g + self.d_velocity_d_ba * db_a;
        let pos = self.delta_position + self.d_position_d_bg * db_g + self.d_position_d_ba * db_a;
        (rot, vel, pos)
    }

    /// Composes this preintegration over `[t_i, t_k]` with `other` over
    /// `[t_k, t_j]` (same linearization bias).
    pub fn compose(&self, other: &ImuPreintegration) -> ImuPreintegration {
        let r_ik = self.delta_rotation.to_rotation_matrix().into_inner();
        ImuPreintegration {
            delta_rotation: self.delta_rotation * other.delta_rotation,
            delta_velocity: self.delta_velocity + r_ik * other.delta_velocity,
            delta_position: self.delta_position
                + self.delta_velocity * other.dt
                + r_ik * other.delta_position,
            dt: self.dt + other.dt,
            // Jacobian composition is not needed by the pipeline; keep the
            // dominant terms of the left segment.
            d_rotation_d_bg: other
                .delta_rotation
                .to_rotation_matrix()
                .into_inner()
                .transpose()
                * self.d_rotation_d_bg
                + other.d_rotation_d_bg,
            d_velocity_d_bg: self.d_velocity_d_bg
                + r_ik * other.d_velocity_d_bg
                - r_ik * so3::hat(&other.delta_velocity) * self.d_rotation_d_bg,
            d_velocity_d_ba: self.d_velocity_d_ba + r_ik * other.d_velocity_d_ba,
            d_position_d_bg: self.d_position_d_bg
                + self.d_velocity_d_bg * other.dt
                + r_ik * other.d_position_d_bg
                - r_ik * so3::hat(&other.delta_position) * self.d_rotation_d_bg,
            d_position_d_ba: self.d_position_d_ba
                + self.d_velocity_d_ba * other.dt
                + r_ik * other.d_position_d_ba,
            linearization_bias: self.linearization_bias,
            information: InformationWeights {
                rotation: 1.0 / (1.0 / self.information.rotation + 1.0 / other.information.rotation),
                velocity: 1.0 / (1.0 / self.information.velocity + 1.0 / other.information.velocity),
                position: 1.0 / (1.0 / self.information.position + 1.0 / other.information.position),
                gyro_bias: 1.0
                    / (1.0 / self.information.gyro_bias + 1.0 / other.information.gyro_bias),
                accel_bias: 1.0
                    / (1.0 / self.information.accel_bias + 1.0 / other.information.accel_bias),
            },
        }
    }
}

/// The stacked IMU residual `(r_ΔR, r_Δv, r_Δp, r_b)`; the bias part is the
/// raw difference `b_j − b_i` for both sensors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuResidual {
    pub rotation: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub position: Vector3<f64>,
    pub bias: Vector6<f64>,
}

impl ImuResidual {
    pub fn stacked(&self) -> SVector<f64, 15> {
        let mut out = SVector::<f64, 15>::zeros();
        out.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        out.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        out.fixed_rows_mut::<3>(6).copy_from(&self.position);
        out.fixed_rows_mut::<6>(9).copy_from(&self.bias);
        out
    }

    pub fn norm(&self) -> f64 {
        self.stacked().norm()
    }
}

/// IMU residual between two world-frame states, with the first-order bias
/// correction evaluated at `state_i.bias`.
pub fn imu_residual(
    state_i: &ImuState,
    state_j: &ImuState,
    pre: &ImuPreintegration,
    gravity: &Vector3<f64>,
) -> ImuResidual {
    let db_g = state_i.bias.gyro - pre.linearization_bias.gyro;
    let db_a = state_i.bias.accel - pre.linearization_bias.accel;
    let dt = pre.dt;

    let corrected_rot = pre.delta_rotation * so3::exp(&(pre.d_rotation_d_bg * db_g));
    let r_rot = so3::log(
        &(corrected_rot.inverse() * state_i.rotation.inverse() * state_j.rotation),
    );

    let r_i_t = state_i.rotation.inverse();
    let r_vel = r_i_t * (state_j.velocity - state_i.velocity - gravity * dt)
        - (pre.delta_velocity + pre.d_velocity_d_bg * db_g + pre.d_velocity_d_ba * db_a);

    let r_pos = r_i_t
        * (state_j.position - state_i.position - state_i.velocity * dt
            - 0.5 * gravity * dt * dt)
        - (pre.delta_position + pre.d_position_d_bg * db_g + pre.d_position_d_ba * db_a);

    let mut r_bias = Vector6::zeros();
    r_bias
        .fixed_rows_mut::<3>(0)
        .copy_from(&(state_j.bias.gyro - state_i.bias.gyro));
    r_bias
        .fixed_rows_mut::<3>(3)
        .copy_from(&(state_j.bias.accel - state_i.bias.accel));

    ImuResidual {
        rotation: r_rot,
        velocity: r_vel,
        position: r_pos,
        bias: r_bias,
    }
}
