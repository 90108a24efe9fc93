//! Structural average precision for line detections: a detection is a true
//! positive iff the summed squared endpoint error against some unconsumed
//! ground-truth line (over both endpoint orderings) is at most the
//! threshold.

use nalgebra::Vector2;

/// A detected segment with a ranking confidence. Coordinates are expected in
/// the evaluation frame (conventionally images rescaled to 512x512).
#[derive(Clone, Copy, Debug)]
pub struct ScoredSegment {
    pub p1: Vector2<f64>,
    pub p2: Vector2<f64>,
    pub score: f64,
}

impl ScoredSegment {
    pub fn new(p1: Vector2<f64>, p2: Vector2<f64>, score: f64) -> Self {
        Self { p1, p2, score }
    }
}

fn endpoint_error(det: &ScoredSegment, truth: &(Vector2<f64>, Vector2<f64>)) -> f64 {
    let direct = (det.p1 - truth.0).norm_squared() + (det.p2 - truth.1).norm_squared();
    let swapped = (det.p1 - truth.1).norm_squared() + (det.p2 - truth.0).norm_squared();
    direct.min(swapped)
}

/// Average precision of ranked line detections at squared-error threshold
/// `vartheta`.
///
/// Conventions: no ground truth and no detections scores 1 (vacuous truth);
/// detections against empty truth score 0; truth with no detections scores 0.
pub fn sap_score(
    detections: &[ScoredSegment],
    truths: &[(Vector2<f64>, Vector2<f64>)],
    vartheta: f64,
) -> f64 {
    if truths.is_empty() {
        return if detections.is_empty() { 1.0 } else { 0.0 };
    }
    if detections.is_empty() {
        return 0.0;
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then(a.cmp(&b))
    });

    let mut consumed = vec![false; truths.len()];
    let mut true_positives = 0usize;
    let mut ap = 0.0;
    for (rank, &det_idx) in order.iter().enumerate() {
        let det = &detections[det_idx];
        let mut best: Option<(f64, usize)> = None;
        for (t_idx, truth) in truths.iter().enumerate() {
            if consumed[t_idx] {
                continue;
            }
            let err = endpoint_error(det, truth);
            if err <= vartheta && best.map_or(true, |(b, _)| err < b) {
                best = Some((err, t_idx));
            }
        }
        if let Some((_, t_idx)) = best {
            consumed[t_idx] = true;
            true_positives += 1;
            // Precision at this rank times the recall step 1/M.
            ap += true_positives as f64 / (rank + 1) as f64;
        }
    }
    ap / truths.len() as f64
}
