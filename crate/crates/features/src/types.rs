use nalgebra::Vector2;
use pl_geometry::Line2D;

use crate::FeatureError;

/// A fixed-length real descriptor, unit-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor(Vec<f32>);

impl Descriptor {
    /// Wraps and L2-normalizes the raw vector.
    pub fn new(mut values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Self(values)
    }

    /// Wraps values that are already unit-norm (e.g. read back from disk).
    pub fn from_normalized(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f32 {
        self.0.iter().map(|v| v * v).sum::<f32>().sqrt()
    }

    /// Euclidean distance between two descriptors.
    pub fn distance(&self, other: &Descriptor) -> f32 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            .sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct Keypoint {
    pub position: Vector2<f64>,
    pub descriptor: Descriptor,
    /// Detection confidence in [0, 1].
    pub score: f64,
}

/// A detected 2D line segment: endpoints, the implicit normalized
/// coefficients of the infinite line through them, and the indices of the
/// keypoints associated to it (filled by [`associate_points_to_lines`]).
///
/// [`associate_points_to_lines`]: crate::associate_points_to_lines
#[derive(Clone, Debug)]
pub struct LineSegment2D {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
    pub line: Line2D,
    pub keypoint_ids: Vec<usize>,
    /// Detection confidence, used for ranking in the sAP metric.
    pub score: f64,
}

impl LineSegment2D {
    pub fn from_endpoints(p1: Vector2<f64>, p2: Vector2<f64>) -> Result<Self, FeatureError> {
        if (p1 - p2).norm() < 1e-9 {
            return Err(FeatureError::DegenerateSegment);
        }
        let line = Line2D::from_points(&p1, &p2)?;
        Ok(Self {
            p1,
            p2,
            line,
            keypoint_ids: Vec::new(),
            score: 1.0,
        })
    }

    pub fn length(&self) -> f64 {
        (self.p1 - self.p2).norm()
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        0.5 * (self.p1 + self.p2)
    }
}

/// An endpoint shared by structural lines, with the indices of the lines it
/// terminates.
#[derive(Clone, Debug)]
pub struct Junction {
    pub position: Vector2<f64>,
    pub line_ids: Vec<usize>,
}

/// Per-image output of the feature frontend.
#[derive(Clone, Debug, Default)]
pub struct FrontendOutput {
    pub image_id: u64,
    pub keypoints: Vec<Keypoint>,
    pub lines: Vec<LineSegment2D>,
    pub junctions: Vec<Junction>,
}

impl Default for Descriptor {
    fn default() -> Self {
        Self(Vec::new())
    }
}

impl AsRef<Descriptor> for Descriptor {
    fn as_ref(&self) -> &Descriptor {
        self
    }
}

impl FrontendOutput {
    /// Checks the cross-reference invariants (association indices valid).
    pub fn validate(&self) -> Result<(), FeatureError> {
        for line in &self.lines {
            for &k in &line.keypoint_ids {
                if k >= self.keypoints.len() {
                    return Err(FeatureError::Format(format!(
                        "line references keypoint {k} of {}",
                        self.keypoints.len()
                    )));
                }
            }
        }
        for junction in &self.junctions {
            for &l in &junction.line_ids {
                if l >= self.lines.len() {
                    return Err(FeatureError::Format(format!(
                        "junction references line {l} of {}",
                        self.lines.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_is_normalized() {
        let d = Descriptor::new(vec![3.0, 4.0]);
        assert!((d.norm() - 1.0).abs() < 1e-6);
        assert!((d.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn segment_coefficients_pass_through_endpoints() {
        let s = LineSegment2D::from_endpoints(
            Vector2::new(10.0, 20.0),
            Vector2::new(110.0, 45.0),
        )
        .unwrap();
        assert!(s.line.distance_to(&s.p1) < 1e-6);
        assert!(s.line.distance_to(&s.p2) < 1e-6);
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let p = Vector2::new(5.0, 5.0);
        assert!(LineSegment2D::from_endpoints(p, p).is_err());
    }
}
