//! Rectified stereo: epipolar filtering of left-right matches and the
//! closed-form depth from disparity.

use nalgebra::{Vector2, Vector3};
use pl_geometry::CameraIntrinsics;

#[derive(Clone, Copy, Debug)]
pub struct StereoMatchConfig {
    /// Maximum row difference for a rectified pair.
    pub max_row_diff: f64,
    /// Minimum disparity in pixels.
    pub min_disparity: f64,
}

impl Default for StereoMatchConfig {
    fn default() -> Self {
        Self {
            max_row_diff: 2.0,
            min_disparity: 0.5,
        }
    }
}

/// Keeps only matches satisfying the rectified epipolar constraints.
pub fn filter_stereo_matches(
    left: &[Vector2<f64>],
    right: &[Vector2<f64>],
    matches: &[(usize, usize)],
    config: &StereoMatchConfig,
) -> Vec<(usize, usize)> {
    matches
        .iter()
        .copied()
        .filter(|(l, r)| {
            let pl = left[*l];
            let pr = right[*r];
            (pl.y - pr.y).abs() <= config.max_row_diff && pl.x - pr.x > config.min_disparity
        })
        .collect()
}

/// Depth from disparity on a rectified pair; `None` below the disparity
/// floor. Returns the point in the left camera frame.
pub fn stereo_triangulate_point(
    left_px: &Vector2<f64>,
    right_px: &Vector2<f64>,
    intr: &CameraIntrinsics,
    min_disparity: f64,
) -> Option<Vector3<f64>> {
    let disparity = left_px.x - right_px.x;
    if disparity <= min_disparity {
        return None;
    }
    let z = intr.fx * intr.baseline / disparity;
    Some(Vector3::new(
        (left_px.x - intr.cx) / intr.fx * z,
        (left_px.y - intr.cy) / intr.fy * z,
        z,
    ))
}
