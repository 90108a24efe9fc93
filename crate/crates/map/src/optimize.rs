//! Offline map optimization: pose graph optimization over sequential and
//! loop edges, and the staged global bundle adjustment.

use std::collections::BTreeMap;

use nalgebra::{DVector, Vector3};
use pl_geometry::{orthonormal_to_plucker, plucker_to_orthonormal, Pose};
use pl_optimizer::{
    solve_lm, LmOptions, OutlierPolicy, Problem, Residual, RobustLoss, SolveReport, VariableKey,
    VariableValue,
};

use crate::{KeyframeId, LoopPair, SlamMap};

#[derive(Clone, Copy, Debug)]
pub struct PgoConfig {
    pub max_iterations: usize,
}

impl Default for PgoConfig {
    fn default() -> Self {
        Self { max_iterations: 50 }
    }
}

#[derive(Clone, Debug)]
pub struct PgoReport {
    pub solve: SolveReport,
    /// Connected components of the pose graph (1 when fully connected).
    pub components: usize,
}

/// Optimizes keyframe poses only, over sequential odometry edges and the
/// loop edges, then rigidly moves every landmark with its anchor keyframe
/// (the first one observing it).
pub fn pose_graph_optimize(
    map: &mut SlamMap,
    loop_pairs: &[LoopPair],
    config: &PgoConfig,
) -> PgoReport {
    let ids: Vec<KeyframeId> = map.keyframes.keys().copied().collect();
    let old_poses: BTreeMap<KeyframeId, Pose> =
        ids.iter().map(|id| (*id, map.keyframes[id].pose)).collect();

    // Connected components over sequential + loop edges.
    let index: BTreeMap<KeyframeId, usize> =
        ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let (ra, rb) = (find(parent, a), find(parent, b));
        if ra != rb {
            parent[ra] = rb;
        }
    };
    for w in ids.windows(2) {
        union(&mut parent, index[&w[0]], index[&w[1]]);
    }
    for pair in loop_pairs {
        union(&mut parent, index[&pair.from], index[&pair.to]);
    }
    let mut component_roots: Vec<usize> = Vec::new();
    for i in 0..ids.len() {
        let r = find(&mut parent, i);
        if !component_roots.contains(&r) {
            component_roots.push(r);
        }
    }

    let mut problem = Problem::new();
    let mut keys: BTreeMap<KeyframeId, VariableKey> = BTreeMap::new();
    // Fix the lowest keyframe of each component as its anchor.
    let mut anchored: Vec<bool> = vec![false; ids.len()];
    for (i, id) in ids.iter().enumerate() {
        let root = find(&mut parent, i);
        let is_anchor = !anchored[root];
        if is_anchor {
            anchored[root] = true;
        }
        keys.insert(
            *id,
            problem.add_variable(VariableValue::Pose(map.keyframes[id].pose), is_anchor),
        );
    }

    let info = DVector::from_element(6, 1.0);
    for w in ids.windows(2) {
        let measurement = old_poses[&w[0]].compose(&old_poses[&w[1]].inverse());
        problem
            .add_residual(
                Residual::RelativePose {
                    pose_i: keys[&w[0]],
                    pose_j: keys[&w[1]],
                    measurement,
                },
                info.clone(),
                RobustLoss::None,
            )
            .expect("valid pose graph edge");
    }
    for pair in loop_pairs {
        problem
            .add_residual(
                Residual::RelativePose {
                    pose_i: keys[&pair.from],
                    pose_j: keys[&pair.to],
                    measurement: pair.relative,
                },
                info.clone(),
                RobustLoss::None,
            )
            .expect("valid loop edge");
    }

    let solve = solve_lm(
        &mut problem,
        &LmOptions {
            max_iterations: config.max_iterations,
            ..Default::default()
        },
    );

    for id in &ids {
        map.keyframes.get_mut(id).unwrap().pose = problem.pose(keys[id]);
    }

    // Landmarks follow the correction of their anchor keyframe.
    let correction: BTreeMap<KeyframeId, Pose> = ids
        .iter()
        .map(|id| {
            let new_pose = map.keyframes[id].pose;
            (*id, new_pose.inverse().compose(&old_poses[id]))
        })
        .collect();
    let point_ids: Vec<crate::PointId> = map.points.keys().copied().collect();
    for pid in point_ids {
        let anchor = map.points[&pid]
            .observations
            .iter()
            .map(|(kf, _)| *kf)
            .min();
        let Some(anchor) = anchor else { continue };
        let c = &correction[&anchor];
        let p = map.points.get_mut(&pid).unwrap();
        p.position = c.transform_point(&p.position);
    }
    let line_ids: Vec<crate::LineId> = map.lines.keys().copied().collect();
    for lid in line_ids {
        let anchor = map.lines[&lid].observations.iter().map(|(kf, _)| *kf).min();
        let Some(anchor) = anchor else { continue };
        let c = &correction[&anchor];
        let l = map.lines.get_mut(&lid).unwrap();
        l.line = pl_geometry::transform_line(c, &l.line).normalized();
    }

    PgoReport {
        solve,
        components: component_roots.len(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GbaConfig {
    /// Iterations without outlier rejection.
    pub first_iterations: usize,
    /// Iterations after deactivating gross outliers.
    pub second_iterations: usize,
    /// Run PGO first when the map holds more than this many points
    /// (production default 80k; desk-scale tests configure lower).
    pub pgo_point_trigger: usize,
    /// Pixel noise used to whiten reprojection residuals.
    pub pixel_sigma: f64,
    /// Huber threshold in pixels.
    pub huber_px: f64,
    pub chi2_gate: f64,
}

impl Default for GbaConfig {
    fn default() -> Self {
        Self {
            first_iterations: 50,
            second_iterations: 40,
            pgo_point_trigger: 80_000,
            pixel_sigma: 1.0,
            huber_px: 2.0,
            chi2_gate: 5.99,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GbaReport {
    pub solve: SolveReport,
    pub pgo_ran: bool,
    pub pgo: Option<PgoReport>,
}

/// Global bundle adjustment over all keyframes and landmarks with the
/// staged schedule (first round without, second round with outlier
/// rejection). Maps above the point trigger run PGO first.
pub fn global_bundle_adjustment(
    map: &mut SlamMap,
    loop_pairs: &[LoopPair],
    config: &GbaConfig,
) -> GbaReport {
    let pgo = if map.points.len() > config.pgo_point_trigger {
        Some(pose_graph_optimize(map, loop_pairs, &PgoConfig::default()))
    } else {
        None
    };

    let intr = map.camera;
    let mut problem = Problem::new();
    let ids: Vec<KeyframeId> = map.keyframes.keys().copied().collect();
    let mut pose_keys: BTreeMap<KeyframeId, VariableKey> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        pose_keys.insert(
            *id,
            problem.add_variable(VariableValue::Pose(map.keyframes[id].pose), i == 0),
        );
    }

    let w = 1.0 / (config.pixel_sigma * config.pixel_sigma);
    let info = DVector::from_element(2, w);
    let huber = RobustLoss::Huber(config.huber_px / config.pixel_sigma);
    let right_offset = Vector3::new(-intr.baseline, 0.0, 0.0);

    let mut point_keys: BTreeMap<crate::PointId, VariableKey> = BTreeMap::new();
    for (pid, point) in &map.points {
        if point.observation_count() < 2 {
            continue;
        }
        let key = problem.add_variable(VariableValue::Point(point.position), false);
        point_keys.insert(*pid, key);
        for (kf, idx) in &point.observations {
            let obs = map.keyframes[kf].features.keypoints[*idx as usize].position;
            problem
                .add_residual(
                    Residual::PointReprojection {
                        pose: pose_keys[kf],
                        point: key,
                        observation: obs,
                        intrinsics: intr,
                        camera_offset: Vector3::zeros(),
                    },
                    info.clone(),
                    huber,
                )
                .expect("valid point residual");
        }
        for (kf, pixel) in &point.stereo_observations {
            problem
                .add_residual(
                    Residual::PointReprojection {
                        pose: pose_keys[kf],
                        point: key,
                        observation: *pixel,
                        intrinsics: intr,
                        camera_offset: right_offset,
                    },
                    info.clone(),
                    huber,
                )
                .expect("valid stereo residual");
        }
    }

    let mut line_keys: BTreeMap<crate::LineId, VariableKey> = BTreeMap::new();
    for (lid, line) in &map.lines {
        if line.observations.len() < 2 {
            continue;
        }
        let Ok(on) = plucker_to_orthonormal(&line.line) else {
            continue;
        };
        let key = problem.add_variable(VariableValue::Line(on), false);
        line_keys.insert(*lid, key);
        for (kf, idx) in &line.observations {
            let seg = &map.keyframes[kf].features.lines[*idx as usize];
            problem
                .add_residual(
                    Residual::LineReprojection {
                        pose: pose_keys[kf],
                        line: key,
                        endpoints: (seg.p1, seg.p2),
                        intrinsics: intr,
                    },
                    info.clone(),
                    huber,
                )
                .expect("valid line residual");
        }
    }

    let solve = solve_lm(
        &mut problem,
        &LmOptions {
            max_iterations: config.first_iterations,
            outlier_rejection: Some(OutlierPolicy {
                point_chi2: config.chi2_gate,
                line_chi2: config.chi2_gate,
                second_round_iterations: config.second_iterations,
            }),
            ..Default::default()
        },
    );

    for (id, key) in &pose_keys {
        map.keyframes.get_mut(id).unwrap().pose = problem.pose(*key);
    }
    for (pid, key) in &point_keys {
        map.points.get_mut(pid).unwrap().position = problem.point(*key);
    }
    for (lid, key) in &line_keys {
        map.lines.get_mut(lid).unwrap().line =
            orthonormal_to_plucker(&problem.line(*key)).normalized();
    }

    GbaReport {
        solve,
        pgo_ran: pgo.is_some(),
        pgo,
    }
}
