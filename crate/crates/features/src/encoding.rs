//! Attraction-field encoding of line segments: a segment is stored relative
//! to an anchor point `p` as `(d, θ, θ1, θ2)` where `d` is the distance to
//! the perpendicular foot `o`, `θ` the line orientation, and `θ1`, `θ2` the
//! angles under which the endpoints are seen from `p` against `po`.
//!
//! Orientation convention: `θ` is the direction angle of the foot→anchor
//! vector, so the line direction is `w = (-sin θ, cos θ)` and `θ` equals the
//! signed angle of the line to the image Y-axis (mod π). The full range
//! (−π, π] is kept so that decoding recovers the segment on the correct side
//! of the anchor.

use nalgebra::Vector2;

use crate::{FeatureError, LineSegment2D};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineEncoding {
    /// Distance |p − o| from the anchor to the perpendicular foot, ≥ 0.
    pub distance: f64,
    /// Orientation angle in (−π, π].
    pub theta: f64,
    /// Signed endpoint angles in (−π/2, π/2).
    pub theta1: f64,
    pub theta2: f64,
}

impl LineEncoding {
    /// An encoding with `d = 0` cannot be decoded (the endpoint angles
    /// degenerate to ±π/2).
    pub fn is_degenerate(&self) -> bool {
        self.distance <= 0.0
    }
}

/// Encodes a segment relative to an anchor point.
///
/// When the anchor lies on the line (`d = 0`) the endpoint angles are
/// clamped to their ±π/2 limits and the result reports itself degenerate.
pub fn encode_line(segment: &LineSegment2D, anchor: &Vector2<f64>) -> LineEncoding {
    let dir = (segment.p2 - segment.p1).normalize();
    let foot = segment.p1 + (anchor - segment.p1).dot(&dir) * dir;
    let to_anchor = anchor - foot;
    let d = to_anchor.norm();
    if d < 1e-12 {
        // Anchor on the line: orientation is still defined by the segment,
        // endpoint angles hit their limits.
        let theta = normalize_angle(f64::atan2(-dir.x, dir.y));
        let limit = std::f64::consts::FRAC_PI_2;
        let s1 = (segment.p1 - anchor).dot(&dir).signum();
        let s2 = (segment.p2 - anchor).dot(&dir).signum();
        return LineEncoding {
            distance: 0.0,
            theta,
            theta1: s1 * limit,
            theta2: s2 * limit,
        };
    }
    let u = to_anchor / d;
    let theta = f64::atan2(u.y, u.x);
    // w = u rotated +90°; the line direction in the (u, w) frame.
    let w = Vector2::new(-u.y, u.x);
    let t1 = (segment.p1 - foot).dot(&w);
    let t2 = (segment.p2 - foot).dot(&w);
    LineEncoding {
        distance: d,
        theta,
        theta1: f64::atan2(t1, d),
        theta2: f64::atan2(t2, d),
    }
}

/// Decodes endpoints from `(d, θ, θ1, θ2)` and the anchor.
pub fn decode_line(
    encoding: &LineEncoding,
    anchor: &Vector2<f64>,
) -> Result<(Vector2<f64>, Vector2<f64>), FeatureError> {
    if encoding.is_degenerate() {
        return Err(FeatureError::DegenerateEncoding);
    }
    let (s, c) = encoding.theta.sin_cos();
    let u = Vector2::new(c, s);
    let w = Vector2::new(-s, c);
    let foot = anchor - encoding.distance * u;
    let p1 = foot + encoding.distance * encoding.theta1.tan() * w;
    let p2 = foot + encoding.distance * encoding.theta2.tan() * w;
    Ok((p1, p2))
}

fn normalize_angle(a: f64) -> f64 {
    let mut a = a.rem_euclid(2.0 * std::f64::consts::PI);
    if a > std::f64::consts::PI {
        a -= 2.0 * std::f64::consts::PI;
    }
    a
}

/// Attraction field on a grid at 1/4 image resolution: each cell stores the
/// encoding of the line it is attracted to (the nearest one whose
/// perpendicular foot falls inside the segment), relative to the cell
/// center.
#[derive(Clone, Debug)]
pub struct AttractionField {
    pub cells_x: usize,
    pub cells_y: usize,
    /// Row-major `(encoding, line index)` per cell.
    pub cells: Vec<Option<(LineEncoding, usize)>>,
    /// Anchor point (cell center in full-resolution pixels) per cell.
    pub anchors: Vec<Vector2<f64>>,
}

impl AttractionField {
    pub fn build(lines: &[LineSegment2D], width: u32, height: u32, radius: f64) -> Self {
        let cells_x = (width as usize).div_ceil(4);
        let cells_y = (height as usize).div_ceil(4);
        let mut cells = vec![None; cells_x * cells_y];
        let mut anchors = Vec::with_capacity(cells_x * cells_y);
        for cy in 0..cells_y {
            for cx in 0..cells_x {
                let anchor = Vector2::new(4.0 * cx as f64 + 2.0, 4.0 * cy as f64 + 2.0);
                anchors.push(anchor);
                let mut best: Option<(f64, usize)> = None;
                for (idx, line) in lines.iter().enumerate() {
                    let dir = (line.p2 - line.p1).normalize();
                    let along = (anchor - line.p1).dot(&dir);
                    if along < 0.0 || along > line.length() {
                        continue;
                    }
                    let d = line.line.distance_to(&anchor);
                    if d > radius {
                        continue;
                    }
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, idx));
                    }
                }
                if let Some((_, idx)) = best {
                    let enc = encode_line(&lines[idx], &anchor);
                    if !enc.is_degenerate() {
                        cells[cy * cells_x + cx] = Some((enc, idx));
                    }
                }
            }
        }
        Self {
            cells_x,
            cells_y,
            cells,
            anchors,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn segment(x1: f64, y1: f64, x2: f64, y2: f64) -> LineSegment2D {
        LineSegment2D::from_endpoints(Vector2::new(x1, y1), Vector2::new(x2, y2)).unwrap()
    }

    #[test]
    fn vertical_segment_encoding() {
        // Vertical line x = 0, anchor to its right.
        let seg = segment(0.0, 0.0, 0.0, 10.0);
        let enc = encode_line(&seg, &Vector2::new(5.0, 5.0));
        assert_relative_eq!(enc.distance, 5.0, epsilon = 1e-12);
        assert_relative_eq!(enc.theta, 0.0, epsilon = 1e-12);
        assert_relative_eq!(enc.theta1.abs(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(enc.theta2.abs(), std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert!(enc.theta1 * enc.theta2 < 0.0, "opposite signs expected");
    }

    #[test]
    fn horizontal_segment_encoding() {
        let seg = segment(0.0, 0.0, 10.0, 0.0);
        let enc = encode_line(&seg, &Vector2::new(5.0, 3.0));
        assert_relative_eq!(enc.distance, 3.0, epsilon = 1e-12);
        assert_relative_eq!(enc.theta, std::f64::consts::FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(enc.theta1.tan().abs(), 5.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(enc.theta2.tan().abs(), 5.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn round_trip_recovers_endpoints() {
        let seg = segment(3.0, 7.0, 40.0, 25.0);
        let anchor = Vector2::new(11.0, 30.0);
        let enc = encode_line(&seg, &anchor);
        let (p1, p2) = decode_line(&enc, &anchor).unwrap();
        assert_relative_eq!(p1, seg.p1, epsilon = 1e-9);
        assert_relative_eq!(p2, seg.p2, epsilon = 1e-9);
    }

    #[test]
    fn round_trip_1000_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut done = 0;
        while done < 1000 {
            let p1 = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0));
            let p2 = Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0));
            if (p1 - p2).norm() < 2.0 {
                continue;
            }
            let seg = LineSegment2D::from_endpoints(p1, p2).unwrap();
            let anchor =
                Vector2::new(rng.random_range(0.0..512.0), rng.random_range(0.0..512.0));
            if seg.line.distance_to(&anchor) < 0.5 {
                continue;
            }
            let enc = encode_line(&seg, &anchor);
            let (q1, q2) = decode_line(&enc, &anchor).unwrap();
            assert!((q1 - p1).norm() < 1e-6, "endpoint 1 off by {}", (q1 - p1).norm());
            assert!((q2 - p2).norm() < 1e-6, "endpoint 2 off by {}", (q2 - p2).norm());
            done += 1;
        }
    }

    #[test]
    fn anchor_on_line_is_flagged_degenerate() {
        let seg = segment(0.0, 0.0, 10.0, 0.0);
        let enc = encode_line(&seg, &Vector2::new(5.0, 0.0));
        assert!(enc.is_degenerate());
        assert_relative_eq!(enc.theta1.abs(), std::f64::consts::FRAC_PI_2);
        assert!(matches!(
            decode_line(&enc, &Vector2::new(5.0, 0.0)),
            Err(FeatureError::DegenerateEncoding)
        ));
    }

    #[test]
    fn field_cells_decode_back_to_their_line() {
        let lines = vec![
            segment(20.0, 10.0, 110.0, 14.0),
            segment(60.0, 80.0, 64.0, 160.0),
        ];
        let field = AttractionField::build(&lines, 128, 128, 12.0);
        let mut populated = 0;
        for (cell, anchor) in field.cells.iter().zip(field.anchors.iter()) {
            let Some((enc, idx)) = cell else { continue };
            populated += 1;
            assert!(enc.distance >= 0.0);
            assert!(enc.theta1.abs() < std::f64::consts::FRAC_PI_2);
            assert!(enc.theta2.abs() < std::f64::consts::FRAC_PI_2);
            let (p1, p2) = decode_line(enc, anchor).unwrap();
            let source = &lines[*idx];
            // Decoded endpoints lie on the source's infinite line.
            assert!(source.line.distance_to(&p1) < 1e-6);
            assert!(source.line.distance_to(&p2) < 1e-6);
        }
        assert!(populated > 10, "field unexpectedly sparse: {populated}");
    }
}
