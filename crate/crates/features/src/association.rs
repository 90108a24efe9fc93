//! Keypoint-line association and the coupled line matching that rides on
//! point matches.

use crate::{Keypoint, LineSegment2D};

#[derive(Clone, Copy, Debug)]
pub struct LineMatchConfig {
    /// Score threshold δ_S; a pair is accepted only with `score > delta_s`.
    pub delta_s: f64,
    /// Minimum shared point matches δ_N; accepted only with
    /// `shared > delta_n`.
    pub delta_n: usize,
    /// Keypoint-line association distance in pixels.
    pub association_px: f64,
}

impl Default for LineMatchConfig {
    fn default() -> Self {
        Self {
            delta_s: 0.6,
            delta_n: 3,
            association_px: 3.0,
        }
    }
}

/// Attaches each keypoint to every line it supports: distance below the
/// association threshold and the keypoint's axis projection inside the
/// endpoint projections (x interval or y interval).
pub fn associate_points_to_lines(
    keypoints: &[Keypoint],
    lines: &mut [LineSegment2D],
    association_px: f64,
) {
    for line in lines.iter_mut() {
        line.keypoint_ids.clear();
        let (x_lo, x_hi) = min_max(line.p1.x, line.p2.x);
        let (y_lo, y_hi) = min_max(line.p1.y, line.p2.y);
        for (i, kp) in keypoints.iter().enumerate() {
            let d = line.line.distance_to(&kp.position);
            if d >= association_px {
                continue;
            }
            let in_x = x_lo <= kp.position.x && kp.position.x <= x_hi;
            let in_y = y_lo <= kp.position.y && kp.position.y <= y_hi;
            if in_x || in_y {
                line.keypoint_ids.push(i);
            }
        }
    }
}

fn min_max(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineMatch {
    /// Line index in the first frame.
    pub index_a: usize,
    /// Line index in the second frame.
    pub index_b: usize,
    /// Confidence score `S = shared / min(|A|, |B|)`.
    pub score: f64,
    /// Number of shared point matches.
    pub shared: usize,
}

/// Matches lines between two frames through their associated keypoints'
/// matches. `point_matches` maps keypoint indices of frame A to frame B.
///
/// Each line is matched at most once; candidates are taken greedily by
/// descending `(score, shared)`.
pub fn match_lines(
    lines_a: &[LineSegment2D],
    lines_b: &[LineSegment2D],
    point_matches: &[(usize, usize)],
    config: &LineMatchConfig,
) -> Vec<LineMatch> {
    use std::collections::HashMap;
    let forward: HashMap<usize, usize> = point_matches.iter().copied().collect();

    let mut candidates = Vec::new();
    for (m, la) in lines_a.iter().enumerate() {
        if la.keypoint_ids.is_empty() {
            continue;
        }
        // Count shared matches per candidate line in B.
        let mut shared_counts: HashMap<usize, usize> = HashMap::new();
        for ka in &la.keypoint_ids {
            let Some(kb) = forward.get(ka) else { continue };
            for (n, lb) in lines_b.iter().enumerate() {
                if lb.keypoint_ids.contains(kb) {
                    *shared_counts.entry(n).or_insert(0) += 1;
                }
            }
        }
        for (n, shared) in shared_counts {
            let denom = la.keypoint_ids.len().min(lines_b[n].keypoint_ids.len());
            if denom == 0 {
                continue;
            }
            let score = shared as f64 / denom as f64;
            if score > config.delta_s && shared > config.delta_n {
                candidates.push(LineMatch {
                    index_a: m,
                    index_b: n,
                    score,
                    shared,
                });
            }
        }
    }

    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.shared.cmp(&a.shared))
            .then(a.index_a.cmp(&b.index_a))
            .then(a.index_b.cmp(&b.index_b))
    });

    let mut used_a = vec![false; lines_a.len()];
    let mut used_b = vec![false; lines_b.len()];
    let mut out = Vec::new();
    for c in candidates {
        if used_a[c.index_a] || used_b[c.index_b] {
            continue;
        }
        used_a[c.index_a] = true;
        used_b[c.index_b] = true;
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Descriptor;
    use nalgebra::Vector2;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint {
            position: Vector2::new(x, y),
            descriptor: Descriptor::new(vec![1.0]),
            score: 1.0,
        }
    }

    fn seg(x1: f64, y1: f64, x2: f64, y2: f64) -> LineSegment2D {
        LineSegment2D::from_endpoints(Vector2::new(x1, y1), Vector2::new(x2, y2)).unwrap()
    }

    #[test]
    fn association_examples() {
        let kps = vec![kp(5.0, 0.5), kp(15.0, 0.5), kp(5.0, 4.0)];
        let mut lines = vec![seg(0.0, 0.0, 10.0, 0.0)];
        associate_points_to_lines(&kps, &mut lines, 3.0);
        // Inside projection and close: associated. Outside the x interval
        // (but inside the degenerate y interval? y_lo == y_hi == 0, kp.y ==
        // 0.5, not inside): not associated. Too far: not associated.
        assert_eq!(lines[0].keypoint_ids, vec![0]);
    }

    #[test]
    fn association_is_endpoint_order_invariant() {
        let kps: Vec<Keypoint> = (0..20)
            .map(|i| kp(i as f64 * 3.0, 1.0 + (i % 3) as f64))
            .collect();
        let mut fwd = vec![seg(0.0, 0.0, 50.0, 4.0)];
        let mut rev = vec![seg(50.0, 4.0, 0.0, 0.0)];
        associate_points_to_lines(&kps, &mut fwd, 3.0);
        associate_points_to_lines(&kps, &mut rev, 3.0);
        assert_eq!(fwd[0].keypoint_ids, rev[0].keypoint_ids);
    }

    fn line_with_ids(ids: &[usize]) -> LineSegment2D {
        let mut l = seg(0.0, 0.0, 10.0, 10.0);
        l.keypoint_ids = ids.to_vec();
        l
    }

    #[test]
    fn perfect_score_accepted() {
        // N_pm = 5, N_a = 10, N_b = 5 -> S = 1.0
        let la = vec![line_with_ids(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])];
        let lb = vec![line_with_ids(&[0, 1, 2, 3, 4])];
        let matches: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).collect();
        let out = match_lines(&la, &lb, &matches, &LineMatchConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 1.0);
        assert_eq!(out[0].shared, 5);
    }

    #[test]
    fn too_few_shared_rejected() {
        let la = vec![line_with_ids(&[0, 1])];
        let lb = vec![line_with_ids(&[0, 1])];
        let matches = vec![(0, 0), (1, 1)];
        // shared = 2, delta_n = 3 -> rejected regardless of score 1.0
        let out = match_lines(&la, &lb, &matches, &LineMatchConfig::default());
        assert!(out.is_empty());
    }

    #[test]
    fn output_is_a_partial_injection() {
        // Two A-lines share points with one B-line; only one survives.
        let la = vec![line_with_ids(&[0, 1, 2, 3, 4]), line_with_ids(&[0, 1, 2, 3])];
        let lb = vec![line_with_ids(&[0, 1, 2, 3, 4])];
        let matches: Vec<(usize, usize)> = (0..5).map(|i| (i, i)).collect();
        let out = match_lines(&la, &lb, &matches, &LineMatchConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].index_a, 0, "higher-score pair wins");
    }
}
