//! Landmark fusion across verified loop pairs: duplicated map points are
//! unified through the loop feature matches, duplicated 3D lines through
//! their shared associated map points.

use std::collections::BTreeMap;

use crate::{LineId, LoopPair, PointId, SlamMap};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MergeReport {
    pub points_merged: usize,
    pub lines_merged: usize,
}

/// Fuses duplicated landmarks. Point pairs come from the loop matches;
/// line pairs are those sharing strictly more than three associated map
/// points. Covisibility and associations are rebuilt afterwards.
pub fn merge_landmarks(map: &mut SlamMap, pairs: &[LoopPair]) -> MergeReport {
    let mut report = MergeReport::default();

    for pair in pairs {
        for (qi, ci) in &pair.matches {
            let pa = map.keyframes[&pair.from].point_links[*qi as usize];
            let pb = map.keyframes[&pair.to].point_links[*ci as usize];
            let (Some(pa), Some(pb)) = (pa, pb) else { continue };
            if pa == pb {
                continue;
            }
            merge_points(map, pa, pb);
            report.points_merged += 1;
        }
    }

    map.refresh_line_point_associations();

    // Merge lines sharing strictly more than three associated points,
    // repeating until no pair qualifies (a fused line can newly exceed the
    // threshold against a third one).
    loop {
        let mut by_point: BTreeMap<PointId, Vec<LineId>> = BTreeMap::new();
        for line in map.lines.values() {
            for pid in &line.associated_points {
                by_point.entry(*pid).or_default().push(line.id);
            }
        }
        let mut shared: BTreeMap<(LineId, LineId), usize> = BTreeMap::new();
        for lines in by_point.values() {
            for i in 0..lines.len() {
                for j in (i + 1)..lines.len() {
                    let key = if lines[i] < lines[j] {
                        (lines[i], lines[j])
                    } else {
                        (lines[j], lines[i])
                    };
                    *shared.entry(key).or_insert(0) += 1;
                }
            }
        }
        let mut merged_any = false;
        for ((a, b), count) in shared {
            if count <= 3 {
                continue;
            }
            if !map.lines.contains_key(&a) || !map.lines.contains_key(&b) {
                continue;
            }
            merge_lines(map, a, b);
            report.lines_merged += 1;
            merged_any = true;
        }
        if !merged_any {
            break;
        }
    }

    map.recompute_covisibility();
    report
}

/// Keeps the smaller id; observations and stereo observations move over.
fn merge_points(map: &mut SlamMap, a: PointId, b: PointId) {
    let (keep, drop) = if a < b { (a, b) } else { (b, a) };
    let Some(dropped) = map.points.remove(&drop) else { return };
    for (kf, idx) in &dropped.observations {
        if let Some(frame) = map.keyframes.get_mut(kf) {
            frame.point_links[*idx as usize] = Some(keep);
        }
    }
    for line in map.lines.values_mut() {
        if line.associated_points.remove(&drop) {
            line.associated_points.insert(keep);
        }
    }
    let target = map.points.get_mut(&keep).expect("kept point exists");
    target.observations.extend(dropped.observations);
    target
        .stereo_observations
        .extend(dropped.stereo_observations);
}

fn merge_lines(map: &mut SlamMap, a: LineId, b: LineId) {
    let (keep, drop) = if a < b { (a, b) } else { (b, a) };
    let Some(dropped) = map.lines.remove(&drop) else { return };
    for (kf, idx) in &dropped.observations {
        if let Some(frame) = map.keyframes.get_mut(kf) {
            frame.line_links[*idx as usize] = Some(keep);
        }
    }
    let target = map.lines.get_mut(&keep).expect("kept line exists");
    target.observations.extend(dropped.observations);
    target
        .associated_points
        .extend(dropped.associated_points.iter().copied());
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Vector2, Vector3};
    use pl_features::{Descriptor, FrontendOutput, Keypoint, LineSegment2D};
    use pl_geometry::{CameraIntrinsics, PluckerLine, Pose};

    fn features_with_lines(n_kp: usize, n_lines: usize) -> FrontendOutput {
        let keypoints = (0..n_kp)
            .map(|k| Keypoint {
                position: Vector2::new(10.0 * k as f64, 5.0),
                descriptor: Descriptor::new(vec![1.0, k as f32]),
                score: 1.0,
            })
            .collect();
        let lines = (0..n_lines)
            .map(|l| {
                let mut seg = LineSegment2D::from_endpoints(
                    Vector2::new(0.0, 30.0 + l as f64 * 20.0),
                    Vector2::new(200.0, 30.0 + l as f64 * 20.0),
                )
                .unwrap();
                seg.keypoint_ids = (0..n_kp).collect();
                seg
            })
            .collect();
        FrontendOutput {
            image_id: 0,
            keypoints,
            lines,
            junctions: Vec::new(),
        }
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480, 0.1).unwrap()
    }

    #[test]
    fn matched_points_collapse_to_one() {
        let mut map = SlamMap::new(camera());
        let a = map.insert_keyframe(0.0, Pose::identity(), features_with_lines(2, 0));
        let b = map.insert_keyframe(1.0, Pose::identity(), features_with_lines(2, 0));
        let pa = map.new_point(Vector3::z(), Descriptor::new(vec![1.0]));
        let pb = map.new_point(Vector3::z(), Descriptor::new(vec![1.0]));
        map.add_point_observation(pa, a, 0);
        map.add_point_observation(pb, b, 0);
        let pair = LoopPair {
            from: b,
            to: a,
            relative: Pose::identity(),
            inliers: 1,
            matches: vec![(0, 0)],
        };
        let report = merge_landmarks(&mut map, &[pair]);
        assert_eq!(report.points_merged, 1);
        assert_eq!(map.points.len(), 1);
        let survivor = map.points.values().next().unwrap();
        assert_eq!(survivor.observations.len(), 2);
        map.validate().unwrap();
    }

    #[test]
    fn lines_sharing_exactly_three_points_do_not_merge() {
        let mut map = SlamMap::new(camera());
        let kf = map.insert_keyframe(0.0, Pose::identity(), features_with_lines(3, 2));
        let l1 = map.new_line(PluckerLine::through_points(&Vector3::z(), &Vector3::new(1.0, 0.0, 1.0)).unwrap());
        let l2 = map.new_line(PluckerLine::through_points(&Vector3::z(), &Vector3::new(0.0, 1.0, 1.0)).unwrap());
        map.add_line_observation(l1, kf, 0);
        map.add_line_observation(l2, kf, 1);
        for k in 0..3 {
            let p = map.new_point(Vector3::new(k as f64, 0.0, 2.0), Descriptor::new(vec![1.0]));
            map.add_point_observation(p, kf, k as u32);
        }
        let report = merge_landmarks(&mut map, &[]);
        // Both 2D lines associate the same three keypoints: exactly 3
        // shared points is not enough.
        assert_eq!(report.lines_merged, 0);
        assert_eq!(map.lines.len(), 2);
    }

    #[test]
    fn lines_sharing_more_than_three_points_merge() {
        let mut map = SlamMap::new(camera());
        let kf = map.insert_keyframe(0.0, Pose::identity(), features_with_lines(4, 2));
        let l1 = map.new_line(PluckerLine::through_points(&Vector3::z(), &Vector3::new(1.0, 0.0, 1.0)).unwrap());
        let l2 = map.new_line(PluckerLine::through_points(&Vector3::z(), &Vector3::new(0.0, 1.0, 1.0)).unwrap());
        map.add_line_observation(l1, kf, 0);
        map.add_line_observation(l2, kf, 1);
        for k in 0..4 {
            let p = map.new_point(Vector3::new(k as f64, 0.0, 2.0), Descriptor::new(vec![1.0]));
            map.add_point_observation(p, kf, k as u32);
        }
        let report = merge_landmarks(&mut map, &[]);
        assert_eq!(report.lines_merged, 1);
        assert_eq!(map.lines.len(), 1);
        map.validate().unwrap();
    }

    #[test]
    fn no_loops_leaves_points_untouched() {
        let mut map = SlamMap::new(camera());
        let kf = map.insert_keyframe(0.0, Pose::identity(), features_with_lines(2, 0));
        let p = map.new_point(Vector3::z(), Descriptor::new(vec![1.0]));
        map.add_point_observation(p, kf, 0);
        let before_points = map.points.len();
        let report = merge_landmarks(&mut map, &[]);
        assert_eq!(report.points_merged, 0);
        assert_eq!(map.points.len(), before_points);
    }
}
