//! Sparse nonlinear least squares over manifold variables (poses, 3D lines
//! in orthonormal form, points, velocities, IMU biases) with robust losses
//! and a Levenberg-Marquardt solver.
//!
//! A [`Problem`] owns its variables and residual blocks; [`solve_lm`]
//! minimizes the robust cost in place. Reprojection blocks can be
//! deactivated between rounds by a χ² gate.

mod residuals;
mod solve;

pub use residuals::{line_reproj_residual, point_reproj_residual, Residual};
pub use solve::{deactivate_outliers, solve_lm, LmOptions, OutlierPolicy, SolveReport, Termination};

use nalgebra::{DVector, Vector3, Vector6};
use pl_geometry::{orthonormal_retract, OrthonormalLine, Pose};
use pl_imu::ImuBias;

#[derive(Debug, thiserror::Error)]
pub enum OptimizerError {
    #[error("residual references an unknown variable {0}")]
    UnknownVariable(usize),
    #[error("variable {key} is a {found}, expected {expected}")]
    WrongKind {
        key: usize,
        expected: &'static str,
        found: &'static str,
    },
    #[error("information vector has wrong dimension: {got}, expected {expected}")]
    BadInformation { got: usize, expected: usize },
}

/// Handle to a variable inside a [`Problem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariableKey(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub enum VariableValue {
    /// World→camera pose, 6-dof tangent, updated by `T ← T·Exp(δ)`.
    Pose(Pose),
    /// Orthonormal 3D line, 4-dof tangent.
    Line(OrthonormalLine),
    Point(Vector3<f64>),
    Velocity(Vector3<f64>),
    Bias(ImuBias),
}

impl VariableValue {
    pub fn local_dim(&self) -> usize {
        match self {
            VariableValue::Pose(_) => 6,
            VariableValue::Line(_) => 4,
            VariableValue::Point(_) | VariableValue::Velocity(_) => 3,
            VariableValue::Bias(_) => 6,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            VariableValue::Pose(_) => "pose",
            VariableValue::Line(_) => "line",
            VariableValue::Point(_) => "point",
            VariableValue::Velocity(_) => "velocity",
            VariableValue::Bias(_) => "bias",
        }
    }

    pub fn retract(&self, delta: &[f64]) -> VariableValue {
        debug_assert_eq!(delta.len(), self.local_dim());
        match self {
            VariableValue::Pose(p) => {
                let xi = Vector6::from_column_slice(delta);
                VariableValue::Pose(p.retract(&xi))
            }
            VariableValue::Line(l) => {
                let d = nalgebra::Vector4::from_column_slice(delta);
                VariableValue::Line(orthonormal_retract(l, &d))
            }
            VariableValue::Point(x) => {
                VariableValue::Point(x + Vector3::from_column_slice(delta))
            }
            VariableValue::Velocity(v) => {
                VariableValue::Velocity(v + Vector3::from_column_slice(delta))
            }
            VariableValue::Bias(b) => {
                let d = Vector6::from_column_slice(delta);
                VariableValue::Bias(ImuBias::from_vector(&(b.as_vector() + d)))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct VariableBlock {
    pub value: VariableValue,
    pub fixed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RobustLoss {
    None,
    /// Huber loss with the given threshold on the whitened residual norm.
    Huber(f64),
}

impl RobustLoss {
    /// Robust cost for a whitened squared norm `s`.
    pub fn cost(&self, s: f64) -> f64 {
        match self {
            RobustLoss::None => s,
            RobustLoss::Huber(delta) => {
                let e = s.sqrt();
                if e <= *delta {
                    s
                } else {
                    2.0 * delta * e - delta * delta
                }
            }
        }
    }

    /// IRLS weight (first derivative of the robust cost w.r.t. `s`).
    pub fn weight(&self, s: f64) -> f64 {
        match self {
            RobustLoss::None => 1.0,
            RobustLoss::Huber(delta) => {
                let e = s.sqrt();
                if e <= *delta {
                    1.0
                } else {
                    delta / e
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub residual: Residual,
    /// Diagonal of the information matrix, one entry per residual dimension.
    pub information: DVector<f64>,
    pub loss: RobustLoss,
    pub active: bool,
}

#[derive(Default)]
pub struct Problem {
    variables: Vec<VariableBlock>,
    residuals: Vec<ResidualBlock>,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, value: VariableValue, fixed: bool) -> VariableKey {
        self.variables.push(VariableBlock { value, fixed });
        VariableKey(self.variables.len() - 1)
    }

    pub fn add_residual(
        &mut self,
        residual: Residual,
        information: DVector<f64>,
        loss: RobustLoss,
    ) -> Result<usize, OptimizerError> {
        let dim = residual.dim();
        if information.len() != dim {
            return Err(OptimizerError::BadInformation {
                got: information.len(),
                expected: dim,
            });
        }
        for key in residual.variables() {
            let block = self
                .variables
                .get(key.0)
                .ok_or(OptimizerError::UnknownVariable(key.0))?;
            residual.check_kind(key, &block.value)?;
        }
        self.residuals.push(ResidualBlock {
            residual,
            information,
            loss,
            active: true,
        });
        Ok(self.residuals.len() - 1)
    }

    pub fn value(&self, key: VariableKey) -> &VariableValue {
        &self.variables[key.0].value
    }

    pub fn set_value(&mut self, key: VariableKey, value: VariableValue) {
        self.variables[key.0].value = value;
    }

    pub fn is_fixed(&self, key: VariableKey) -> bool {
        self.variables[key.0].fixed
    }

    pub fn set_fixed(&mut self, key: VariableKey, fixed: bool) {
        self.variables[key.0].fixed = fixed;
    }

    pub fn num_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn num_residuals(&self) -> usize {
        self.residuals.len()
    }

    pub fn residual_block(&self, index: usize) -> &ResidualBlock {
        &self.residuals[index]
    }

    pub fn residual_blocks(&self) -> &[ResidualBlock] {
        &self.residuals
    }

    pub(crate) fn residual_blocks_mut(&mut self) -> &mut [ResidualBlock] {
        &mut self.residuals
    }

    pub fn pose(&self, key: VariableKey) -> Pose {
        match self.value(key) {
            VariableValue::Pose(p) => *p,
            other => panic!("variable {key:?} is a {}, not a pose", other.kind_name()),
        }
    }

    pub fn point(&self, key: VariableKey) -> Vector3<f64> {
        match self.value(key) {
            VariableValue::Point(p) => *p,
            other => panic!("variable {key:?} is a {}, not a point", other.kind_name()),
        }
    }

    pub fn line(&self, key: VariableKey) -> OrthonormalLine {
        match self.value(key) {
            VariableValue::Line(l) => *l,
            other => panic!("variable {key:?} is a {}, not a line", other.kind_name()),
        }
    }

    pub fn velocity(&self, key: VariableKey) -> Vector3<f64> {
        match self.value(key) {
            VariableValue::Velocity(v) => *v,
            other => panic!("variable {key:?} is a {}, not a velocity", other.kind_name()),
        }
    }

    pub fn bias(&self, key: VariableKey) -> ImuBias {
        match self.value(key) {
            VariableValue::Bias(b) => *b,
            other => panic!("variable {key:?} is a {}, not a bias", other.kind_name()),
        }
    }

    /// Raw (unwhitened) residual of one block at the current values, if it
    /// is evaluable.
    pub fn evaluate_residual(&self, index: usize) -> Option<DVector<f64>> {
        let block = &self.residuals[index];
        block.residual.evaluate(&|k| self.value(k).clone())
    }

    /// Total robust cost over active blocks.
    pub fn cost(&self) -> f64 {
        self.residuals
            .iter()
            .filter(|b| b.active)
            .filter_map(|b| {
                let r = b.residual.evaluate(&|k| self.value(k).clone())?;
                let s: f64 = r
                    .iter()
                    .zip(b.information.iter())
                    .map(|(ri, wi)| ri * ri * wi)
                    .sum();
                Some(b.loss.cost(s))
            })
            .sum()
    }
}
