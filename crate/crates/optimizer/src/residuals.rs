//! The four residual kinds and their Jacobians. Point, line and relative
//! pose blocks carry analytic Jacobians; the IMU block differentiates
//! numerically through the retraction (the finite-difference agreement test
//! is the gate for all of them).

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix3x6, Vector2, Vector3};
use pl_geometry::{se3, so3, CameraIntrinsics, OrthonormalLine, Pose};
use pl_imu::{imu_residual, ImuPreintegration, ImuState};

use crate::{OptimizerError, VariableKey, VariableValue};

type Fetch<'a> = dyn Fn(VariableKey) -> VariableValue + 'a;

#[derive(Clone, Debug)]
pub enum Residual {
    /// `r = obs − π(R X + t + offset)`; `offset` shifts into the right
    /// camera of a rectified pair (zero for the left camera).
    PointReprojection {
        pose: VariableKey,
        point: VariableKey,
        observation: Vector2<f64>,
        intrinsics: CameraIntrinsics,
        camera_offset: Vector3<f64>,
    },
    /// Signed distances of the two observed endpoints to the projected
    /// line.
    LineReprojection {
        pose: VariableKey,
        line: VariableKey,
        endpoints: (Vector2<f64>, Vector2<f64>),
        intrinsics: CameraIntrinsics,
    },
    /// Preintegrated IMU constraint between two keyframes (15-dim:
    /// rotation, velocity, position, gyro+accel bias random walk).
    Imu {
        pose_i: VariableKey,
        velocity_i: VariableKey,
        bias_i: VariableKey,
        pose_j: VariableKey,
        velocity_j: VariableKey,
        bias_j: VariableKey,
        preintegration: Box<ImuPreintegration>,
        gravity: Vector3<f64>,
    },
    /// Pose-graph edge: `r = Log(ΔT̃⁻¹ T_i⁻¹ T_j)` where `T_i`, `T_j` are
    /// the camera-to-world poses of the two keyframes (the variables store
    /// world→camera).
    RelativePose {
        pose_i: VariableKey,
        pose_j: VariableKey,
        measurement: Pose,
    },
    /// Direct prior on a point, `r = X − m` (anchoring/plumbing).
    PointPrior {
        point: VariableKey,
        measurement: Vector3<f64>,
    },
}

impl Residual {
    pub fn dim(&self) -> usize {
        match self {
            Residual::PointReprojection { .. } | Residual::LineReprojection { .. } => 2,
            Residual::Imu { .. } => 15,
            Residual::RelativePose { .. } => 6,
            Residual::PointPrior { .. } => 3,
        }
    }

    pub fn variables(&self) -> Vec<VariableKey> {
        match self {
            Residual::PointReprojection { pose, point, .. } => vec![*pose, *point],
            Residual::LineReprojection { pose, line, .. } => vec![*pose, *line],
            Residual::Imu {
                pose_i,
                velocity_i,
                bias_i,
                pose_j,
                velocity_j,
                bias_j,
                ..
            } => vec![*pose_i, *velocity_i, *bias_i, *pose_j, *velocity_j, *bias_j],
            Residual::RelativePose { pose_i, pose_j, .. } => vec![*pose_i, *pose_j],
            Residual::PointPrior { point, .. } => vec![*point],
        }
    }

    pub(crate) fn check_kind(
        &self,
        key: VariableKey,
        value: &VariableValue,
    ) -> Result<(), OptimizerError> {
        let expected: &'static str = match self {
            Residual::PointReprojection { pose, point, .. } => {
                if key == *pose {
                    "pose"
                } else if key == *point {
                    "point"
                } else {
                    return Ok(());
                }
            }
            Residual::LineReprojection { pose, line, .. } => {
                if key == *pose {
                    "pose"
                } else if key == *line {
                    "line"
                } else {
                    return Ok(());
                }
            }
            Residual::Imu {
                pose_i,
                velocity_i,
                bias_i,
                pose_j,
                velocity_j,
                bias_j,
                ..
            } => {
                if key == *pose_i || key == *pose_j {
                    "pose"
                } else if key == *velocity_i || key == *velocity_j {
                    "velocity"
                } else if key == *bias_i || key == *bias_j {
                    "bias"
                } else {
                    return Ok(());
                }
            }
            Residual::RelativePose { .. } => "pose",
            Residual::PointPrior { .. } => "point",
        };
        if value.kind_name() != expected {
            return Err(OptimizerError::WrongKind {
                key: key.0,
                expected,
                found: value.kind_name(),
            });
        }
        Ok(())
    }

    /// Evaluates the raw residual; `None` when the block is not evaluable
    /// at the current values (point behind the camera, degenerate line
    /// projection).
    pub fn evaluate(&self, fetch: &Fetch) -> Option<DVector<f64>> {
        match self {
            Residual::PointReprojection {
                pose,
                point,
                observation,
                intrinsics,
                camera_offset,
            } => {
                let pose = as_pose(fetch(*pose));
                let x = as_point(fetch(*point));
                let xc = pose.transform_point(&x) + camera_offset;
                let proj = intrinsics.project_point(&xc).ok()?;
                Some(DVector::from_column_slice(&[
                    observation.x - proj.x,
                    observation.y - proj.y,
                ]))
            }
            Residual::LineReprojection {
                pose,
                line,
                endpoints,
                intrinsics,
            } => {
                let pose = as_pose(fetch(*pose));
                let line = as_line(fetch(*line));
                let (r, ..) = line_residual_parts(&pose, &line, endpoints, intrinsics)?;
                Some(DVector::from_column_slice(&[r.x, r.y]))
            }
            Residual::Imu {
                pose_i,
                velocity_i,
                bias_i,
                pose_j,
                velocity_j,
                bias_j,
                preintegration,
                gravity,
            } => {
                let state_i = imu_state(
                    &as_pose(fetch(*pose_i)),
                    as_velocity(fetch(*velocity_i)),
                    as_bias(fetch(*bias_i)),
                );
                let state_j = imu_state(
                    &as_pose(fetch(*pose_j)),
                    as_velocity(fetch(*velocity_j)),
                    as_bias(fetch(*bias_j)),
                );
                let r = imu_residual(&state_i, &state_j, preintegration, gravity);
                Some(DVector::from_column_slice(r.stacked().as_slice()))
            }
            Residual::RelativePose {
                pose_i,
                pose_j,
                measurement,
            } => {
                let ti = as_pose(fetch(*pose_i));
                let tj = as_pose(fetch(*pose_j));
                // T_i⁻¹ T_j in world poses equals T_cw,i · T_cw,j⁻¹.
                let m = measurement.inverse().compose(&ti.compose(&tj.inverse()));
                Some(DVector::from_column_slice(se3::log(&m).as_slice()))
            }
            Residual::PointPrior { point, measurement } => {
                let x = as_point(fetch(*point));
                Some(DVector::from_column_slice(&(x - measurement).as_slice()))
            }
        }
    }

    /// Jacobians w.r.t. every referenced variable (fixed ones included; the
    /// assembler filters). `None` when the residual is not evaluable.
    pub fn jacobians(&self, fetch: &Fetch) -> Option<Vec<(VariableKey, DMatrix<f64>)>> {
        match self {
            Residual::PointReprojection {
                pose,
                point,
                observation: _,
                intrinsics,
                camera_offset,
            } => {
                let p = as_pose(fetch(*pose));
                let x = as_point(fetch(*point));
                let xc = p.transform_point(&x) + camera_offset;
                if xc.z <= 1e-9 {
                    return None;
                }
                let dproj = projection_jacobian(intrinsics, &xc);
                let r = p.rotation_matrix();
                let mut dpose = Matrix3x6::zeros();
                dpose.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
                dpose
                    .fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&(-r * so3::hat(&x)));
                // residual = obs − π(Xc): flip sign
                let j_pose = -(dproj * dpose);
                let j_point = -(dproj * r);
                Some(vec![
                    (*pose, dmat(&j_pose)),
                    (*point, dmat(&j_point)),
                ])
            }
            Residual::LineReprojection {
                pose,
                line,
                endpoints,
                intrinsics,
            } => {
                let p = as_pose(fetch(*pose));
                let l = as_line(fetch(*line));
                let (_, d_r_d_nc, n_w, v_w) = line_residual_parts(&p, &l, endpoints, intrinsics)?;
                let rot = p.rotation_matrix();
                let t_hat = so3::hat(&p.translation());

                // n_c = R n_w + [t]x R v_w; chain through the line params
                // and the pose tangent.
                let u = l.u_matrix();
                let (sw, cw) = l.w_angle().sin_cos();
                let u1 = u.column(0).into_owned();
                let u2 = u.column(1).into_owned();
                let e1_hat = so3::hat(&Vector3::x());
                let e2_hat = so3::hat(&Vector3::y());
                let dn_w_du = -cw * u * e1_hat;
                let dv_w_du = -sw * u * e2_hat;
                let dn_w_dw = -sw * u1;
                let dv_w_dw = cw * u2;

                let dnc_dn = rot;
                let dnc_dv = t_hat * rot;
                let mut j_line = DMatrix::zeros(2, 4);
                let dnc_du = dnc_dn * dn_w_du + dnc_dv * dv_w_du;
                let dnc_dwang = dnc_dn * dn_w_dw + dnc_dv * dv_w_dw;
                j_line
                    .view_mut((0, 0), (2, 3))
                    .copy_from(&(d_r_d_nc * dnc_du));
                j_line
                    .view_mut((0, 3), (2, 1))
                    .copy_from(&(d_r_d_nc * dnc_dwang));

                // Right SE(3) perturbation of the pose.
                let dnc_drho = -rot * so3::hat(&v_w);
                let dnc_dphi = -rot * so3::hat(&n_w) - t_hat * rot * so3::hat(&v_w);
                let mut j_pose = DMatrix::zeros(2, 6);
                j_pose
                    .view_mut((0, 0), (2, 3))
                    .copy_from(&(d_r_d_nc * dnc_drho));
                j_pose
                    .view_mut((0, 3), (2, 3))
                    .copy_from(&(d_r_d_nc * dnc_dphi));

                Some(vec![(*pose, j_pose), (*line, j_line)])
            }
            Residual::Imu { .. } => self.numeric_jacobians(fetch, 1e-6),
            Residual::RelativePose {
                pose_i,
                pose_j,
                measurement,
            } => {
                let ti = as_pose(fetch(*pose_i));
                let tj = as_pose(fetch(*pose_j));
                let m = measurement.inverse().compose(&ti.compose(&tj.inverse()));
                let r = se3::log(&m);
                let jr_inv = se3::right_jacobian_inv(&r);
                let adj_tj = se3::adjoint(&tj);
                let j_i = jr_inv * adj_tj;
                let j_j = -jr_inv * adj_tj;
                Some(vec![(*pose_i, dmat(&j_i)), (*pose_j, dmat(&j_j))])
            }
            Residual::PointPrior { point, .. } => {
                Some(vec![(*point, DMatrix::identity(3, 3))])
            }
        }
    }

    /// Central finite differences through the retraction.
    pub fn numeric_jacobians(
        &self,
        fetch: &Fetch,
        step: f64,
    ) -> Option<Vec<(VariableKey, DMatrix<f64>)>> {
        let dim = self.dim();
        let mut out = Vec::new();
        for key in self.variables() {
            let base = fetch(key);
            let local = base.local_dim();
            let mut jac = DMatrix::zeros(dim, local);
            for col in 0..local {
                let mut delta = vec![0.0; local];
                delta[col] = step;
                let plus_val = base.retract(&delta);
                delta[col] = -step;
                let minus_val = base.retract(&delta);
                let eval_at = |val: &VariableValue| {
                    let sub = |k: VariableKey| {
                        if k == key {
                            val.clone()
                        } else {
                            fetch(k)
                        }
                    };
                    self.evaluate(&sub)
                };
                let plus = eval_at(&plus_val)?;
                let minus = eval_at(&minus_val)?;
                let column = (plus - minus) / (2.0 * step);
                jac.set_column(col, &column);
            }
            out.push((key, jac));
        }
        Some(out)
    }
}

fn imu_state(pose_cw: &Pose, velocity: Vector3<f64>, bias: pl_imu::ImuBias) -> ImuState {
    // Camera and body frame coincide; the state is body-to-world.
    let wb = pose_cw.inverse();
    ImuState {
        rotation: *wb.rotation(),
        position: wb.translation(),
        velocity,
        bias,
    }
}

fn projection_jacobian(intr: &CameraIntrinsics, xc: &Vector3<f64>) -> Matrix2x3<f64> {
    let zi = 1.0 / xc.z;
    Matrix2x3::new(
        intr.fx * zi,
        0.0,
        -intr.fx * xc.x * zi * zi,
        0.0,
        intr.fy * zi,
        -intr.fy * xc.y * zi * zi,
    )
}

/// Shared evaluation core for the line residual: signed endpoint distances
/// plus the residual Jacobian w.r.t. the camera-frame moment `n_c`, and the
/// world-frame Plücker components for chaining.
#[allow(clippy::type_complexity)]
fn line_residual_parts(
    pose: &Pose,
    line: &OrthonormalLine,
    endpoints: &(Vector2<f64>, Vector2<f64>),
    intr: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Matrix2x3<f64>, Vector3<f64>, Vector3<f64>)> {
    let plucker = pl_geometry::orthonormal_to_plucker(line);
    let n_w = plucker.moment();
    let v_w = plucker.direction();
    let cam = pl_geometry::transform_line(pose, &plucker);
    let n_c = cam.moment();
    if n_c.norm() < 1e-12 {
        return None;
    }
    // l = P_c n_c (unnormalized coefficients)
    let a = intr.fx * n_c.x;
    let b = intr.fy * n_c.y;
    let c = -intr.fy * intr.cx * n_c.x - intr.fx * intr.cy * n_c.y + intr.fx * intr.fy * n_c.z;
    let s2 = a * a + b * b;
    if s2 < 1e-20 {
        return None;
    }
    let s = s2.sqrt();

    let signed = |p: &Vector2<f64>| (a * p.x + b * p.y + c) / s;
    let r = Vector2::new(signed(&endpoints.0), signed(&endpoints.1));

    // d r_k / d (a, b, c)
    let drow = |p: &Vector2<f64>, rk: f64| {
        Vector3::new(p.x / s - rk * a / s2, p.y / s - rk * b / s2, 1.0 / s)
    };
    let g1 = drow(&endpoints.0, r.x);
    let g2 = drow(&endpoints.1, r.y);
    // d (a,b,c) / d n_c is the projection matrix itself.
    let p_c = Matrix3::new(
        intr.fx,
        0.0,
        0.0,
        0.0,
        intr.fy,
        0.0,
        -intr.fy * intr.cx,
        -intr.fx * intr.cy,
        intr.fx * intr.fy,
    );
    let mut d_r_d_nc = Matrix2x3::zeros();
    d_r_d_nc.set_row(0, &(g1.transpose() * p_c));
    d_r_d_nc.set_row(1, &(g2.transpose() * p_c));
    Some((r, d_r_d_nc, n_w, v_w))
}

fn dmat<R: nalgebra::Dim, C: nalgebra::Dim, S>(m: &nalgebra::Matrix<f64, R, C, S>) -> DMatrix<f64>
where
    S: nalgebra::storage::Storage<f64, R, C>,
{
    DMatrix::from_iterator(m.nrows(), m.ncols(), m.iter().copied())
}

fn as_pose(v: VariableValue) -> Pose {
    match v {
        VariableValue::Pose(p) => p,
        other => panic!("expected pose variable, got {}", other.kind_name()),
    }
}

fn as_point(v: VariableValue) -> Vector3<f64> {
    match v {
        VariableValue::Point(p) => p,
        other => panic!("expected point variable, got {}", other.kind_name()),
    }
}

fn as_line(v: VariableValue) -> OrthonormalLine {
    match v {
        VariableValue::Line(l) => l,
        other => panic!("expected line variable, got {}", other.kind_name()),
    }
}

fn as_velocity(v: VariableValue) -> Vector3<f64> {
    match v {
        VariableValue::Velocity(x) => x,
        other => panic!("expected velocity variable, got {}", other.kind_name()),
    }
}

fn as_bias(v: VariableValue) -> pl_imu::ImuBias {
    match v {
        VariableValue::Bias(b) => b,
        other => panic!("expected bias variable, got {}", other.kind_name()),
    }
}

/// Point reprojection error `obs − π(R X + t)`.
pub fn point_reproj_residual(
    observation: &Vector2<f64>,
    point_w: &Vector3<f64>,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Vector2<f64>, pl_geometry::GeometryError> {
    let proj = intr.project_point(&pose.transform_point(point_w))?;
    Ok(observation - proj)
}

/// Line reprojection error per the two observed endpoints' distances to the
/// projected line (absolute values).
pub fn line_reproj_residual(
    endpoints: &(Vector2<f64>, Vector2<f64>),
    line_w: &OrthonormalLine,
    pose: &Pose,
    intr: &CameraIntrinsics,
) -> Result<Vector2<f64>, pl_geometry::GeometryError> {
    let plucker = pl_geometry::orthonormal_to_plucker(line_w);
    let cam = pl_geometry::transform_line(pose, &plucker);
    let l = pl_geometry::project_line(intr, &cam)?;
    Ok(Vector2::new(
        l.distance_to(&endpoints.0),
        l.distance_to(&endpoints.1),
    ))
}
