//! Trajectory and relocalization metrics: ATE RMSE with closed-form SE(3)
//! alignment, and recall under the 2 m / 15° success rule.

use nalgebra::{Matrix3, Vector3};
use pl_geometry::Pose;

use crate::CliError;

pub const ASSOCIATION_WINDOW_S: f64 = 0.010;
pub const RECALL_TRANSLATION_M: f64 = 2.0;
pub const RECALL_ROTATION_DEG: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Alignment {
    Se3,
    None,
}

#[derive(Clone, Debug)]
pub struct AteReport {
    pub rmse: f64,
    pub errors: Vec<f64>,
    /// Transform applied to the estimate before scoring (identity for
    /// `Alignment::None`).
    pub alignment: Pose,
    pub associated: usize,
}

/// Associates the two trajectories by timestamp (within 10 ms), optionally
/// aligns the estimate to the truth with a closed-form rigid fit of the
/// camera centers, and reports the RMSE of the aligned position errors.
pub fn ate_rmse(
    estimate: &[(f64, Pose)],
    truth: &[(f64, Pose)],
    alignment: Alignment,
) -> Result<AteReport, CliError> {
    let mut est_centers = Vec::new();
    let mut truth_centers = Vec::new();
    let mut cursor = 0usize;
    for (t, pose) in estimate {
        // Both trajectories are time-sorted.
        while cursor + 1 < truth.len()
            && (truth[cursor + 1].0 - t).abs() < (truth[cursor].0 - t).abs()
        {
            cursor += 1;
        }
        if truth.is_empty() || (truth[cursor].0 - t).abs() > ASSOCIATION_WINDOW_S {
            continue;
        }
        est_centers.push(pose.inverse().translation());
        truth_centers.push(truth[cursor].1.inverse().translation());
    }
    let n = est_centers.len();
    if n < 3 {
        return Err(CliError::InsufficientOverlap(n));
    }

    let transform = match alignment {
        Alignment::None => Pose::identity(),
        Alignment::Se3 => rigid_fit(&est_centers, &truth_centers)?,
    };
    let errors: Vec<f64> = est_centers
        .iter()
        .zip(truth_centers.iter())
        .map(|(e, t)| (transform.transform_point(e) - t).norm())
        .collect();
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    Ok(AteReport {
        rmse,
        errors,
        alignment: transform,
        associated: n,
    })
}

/// Closed-form least-squares rigid transform mapping `from` onto `to`.
fn rigid_fit(from: &[Vector3<f64>], to: &[Vector3<f64>]) -> Result<Pose, CliError> {
    let n = from.len() as f64;
    let mu_from: Vector3<f64> = from.iter().sum::<Vector3<f64>>() / n;
    let mu_to: Vector3<f64> = to.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::<f64>::zeros();
    for (f, t) in from.iter().zip(to.iter()) {
        cov += (t - mu_to) * (f - mu_from).transpose();
    }
    let svd = cov.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(CliError::Eval("degenerate alignment".into()));
    };
    let mut rot = u * v_t;
    if rot.determinant() < 0.0 {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        rot = u * flip * v_t;
    }
    let rotation =
        Pose::from_matrix(&rot, mu_to - rot * mu_from).map_err(|e| CliError::Eval(e.to_string()))?;
    Ok(rotation)
}

#[derive(Clone, Debug)]
pub struct RecallReport {
    pub total: usize,
    pub successes: usize,
    pub recall: f64,
    pub translation_gate_m: f64,
    pub rotation_gate_deg: f64,
}

/// Scores a relocalization report against ground-truth query poses
/// (world→camera), counting Success entries within 2 m and 15°.
pub fn relocalization_recall(
    results: &[(String, Option<Pose>)],
    truth: &[(String, Pose)],
) -> RecallReport {
    let lookup: std::collections::BTreeMap<&str, &Pose> =
        truth.iter().map(|(id, p)| (id.as_str(), p)).collect();
    let mut successes = 0;
    for (id, pose) in results {
        let (Some(pose), Some(gt)) = (pose, lookup.get(id.as_str())) else {
            continue;
        };
        let trans = (pose.inverse().translation() - gt.inverse().translation()).norm();
        let rot = pose.rotation_distance(gt).to_degrees();
        if trans <= RECALL_TRANSLATION_M && rot <= RECALL_ROTATION_DEG {
            successes += 1;
        }
    }
    let total = truth.len().max(1);
    RecallReport {
        total: truth.len(),
        successes,
        recall: successes as f64 / total as f64,
        translation_gate_m: RECALL_TRANSLATION_M,
        rotation_gate_deg: RECALL_ROTATION_DEG,
    }
}
