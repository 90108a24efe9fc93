use nalgebra::Vector2;

use crate::GeometryError;

/// An infinite 2D line `A x + B y + C = 0`, normalized so `A² + B² = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Line2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Line2D {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        let norm = (a * a + b * b).sqrt();
        if norm < 1e-12 {
            return Err(GeometryError::InvalidLine);
        }
        Ok(Self {
            a: a / norm,
            b: b / norm,
            c: c / norm,
        })
    }

    /// Wraps coefficients that are already normalized (e.g. read back from a
    /// file); skips the renormalization so storage round-trips bit-exactly.
    pub fn from_normalized(a: f64, b: f64, c: f64) -> Result<Self, GeometryError> {
        let norm2 = a * a + b * b;
        if (norm2 - 1.0).abs() > 1e-5 {
            return Err(GeometryError::InvalidLine);
        }
        Ok(Self { a, b, c })
    }

    pub fn from_points(p1: &Vector2<f64>, p2: &Vector2<f64>) -> Result<Self, GeometryError> {
        // Homogeneous cross product of the two points.
        let a = p1.y - p2.y;
        let b = p2.x - p1.x;
        let c = p1.x * p2.y - p2.x * p1.y;
        Self::new(a, b, c)
    }

    /// Perpendicular distance from `p` to the line, always ≥ 0.
    pub fn distance_to(&self, p: &Vector2<f64>) -> f64 {
        self.signed_distance(p).abs()
    }

    pub fn signed_distance(&self, p: &Vector2<f64>) -> f64 {
        self.a * p.x + self.b * p.y + self.c
    }
}

/// Distance between a pixel and a 2D line given as (A, B, C) coefficients,
/// `|A x + B y + C| / sqrt(A² + B²)`.
pub fn point_line_distance_2d(
    p: &Vector2<f64>,
    coefficients: &(f64, f64, f64),
) -> Result<f64, GeometryError> {
    let (a, b, c) = *coefficients;
    let norm = (a * a + b * b).sqrt();
    if norm < 1e-12 {
        return Err(GeometryError::InvalidLine);
    }
    Ok((a * p.x + b * p.y + c).abs() / norm)
}
