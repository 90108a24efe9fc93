use nalgebra::{Matrix3, Vector2, Vector3};

use crate::GeometryError;

/// Minimum depth for a point to count as being in front of the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics of a rectified stereo pair. The left camera is the
/// reference; `baseline` is the distance to the right camera along +x.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub baseline: f64,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        baseline: f64,
    ) -> Result<Self, GeometryError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal length must be > 0"));
        }
        if baseline <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("baseline must be > 0"));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics("image size must be > 0"));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            baseline,
        })
    }

    /// Projects a camera-frame point to pixels.
    pub fn project_point(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if point.z <= MIN_DEPTH {
            return Err(GeometryError::BehindCamera { z: point.z });
        }
        Ok(Vector2::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Back-projects a pixel at a known depth into the camera frame.
    pub fn backproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        Vector3::new(
            (pixel.x - self.cx) / self.fx * depth,
            (pixel.y - self.cy) / self.fy * depth,
            depth,
        )
    }

    /// Unit bearing vector of a pixel.
    pub fn bearing(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.backproject(pixel, 1.0).normalize()
    }

    /// The 3x3 calibration matrix K.
    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= f64::from(self.width) - 1.0
            && pixel.y <= f64::from(self.height) - 1.0
    }
}

/// Free-function form used throughout the specs of the higher layers.
pub fn project_point(
    intr: &CameraIntrinsics,
    point_cam: &Vector3<f64>,
) -> Result<Vector2<f64>, GeometryError> {
    intr.project_point(point_cam)
}
