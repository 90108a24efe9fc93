//! Test fixtures shared by the map, relocalization and CLI test suites:
//! ground-truth maps built straight from the simulator with a controllable
//! drift warp, bypassing the odometry pipeline.

use std::collections::HashMap;

use nalgebra::{UnitQuaternion, Vector3};
use pl_features::{associate_points_to_lines, Frontend, ViewId};
use pl_geometry::{CameraIntrinsics, PluckerLine, Pose};
use pl_map::{KeyframeId, PointId, SlamMap};
use pl_simulator::{
    generate_world, MatchMode, ObservationModel, SimFrontend, SimTrajectory, SimWorld, WorldSpec,
};

pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480, 0.12).unwrap()
}

/// A world-side warp applied before viewing: simulates odometry drift that
/// grows with the keyframe index while keeping each keyframe locally
/// consistent with the landmarks it created.
pub fn drift_warp(k: usize, yaw_per_kf: f64, translation_per_kf: Vector3<f64>) -> Pose {
    let yaw = yaw_per_kf * k as f64;
    Pose::new(
        UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
        translation_per_kf * k as f64,
    )
}

pub struct SimMapFixture {
    pub map: SlamMap,
    /// Ground-truth world→camera pose per keyframe.
    pub gt_poses: Vec<(KeyframeId, Pose)>,
    pub frontend: SimFrontend,
    /// Keyframe index → source frame index.
    pub frames: Vec<usize>,
}

pub struct FixtureConfig {
    pub world_seed: u64,
    pub observation: ObservationModel,
    pub laps: usize,
    pub frames_per_lap: usize,
    pub keyframe_stride: usize,
    /// Drift warp per keyframe index (identity for a drift-free map).
    pub drift: Box<dyn Fn(usize) -> Pose>,
    /// A landmark unseen for more than this many keyframes starts a fresh
    /// duplicate track on re-observation, matching odometry that associates
    /// against the last keyframe only.
    pub track_gap: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            world_seed: 7,
            observation: ObservationModel::default(),
            laps: 1,
            frames_per_lap: 60,
            keyframe_stride: 3,
            drift: Box::new(|_| Pose::identity()),
            track_gap: 1,
        }
    }
}

/// Builds a map from ground truth: keyframes at warped ground-truth poses,
/// landmarks created in the first observing keyframe's warped world, and
/// oracle observations throughout.
pub fn build_sim_map(config: FixtureConfig) -> SimMapFixture {
    let world = generate_world(&WorldSpec::default(), config.world_seed);
    build_sim_map_with_world(config, world)
}

pub fn build_sim_map_with_world(config: FixtureConfig, world: SimWorld) -> SimMapFixture {
    let intr = default_intrinsics();
    let trajectory = SimTrajectory::orbit(
        Vector3::zeros(),
        6.0,
        0.4,
        config.laps,
        16,
        30.0,
    );
    let camera_hz = config.frames_per_lap as f64 * config.laps as f64
        / (trajectory.end_time() - trajectory.start_time());
    let mut frontend = SimFrontend::new(
        world,
        trajectory,
        intr,
        camera_hz,
        config.observation,
        MatchMode::GroundTruth,
        config.world_seed ^ 0xF00D,
    );

    let mut map = SlamMap::new(intr);
    let mut gt_poses = Vec::new();
    let mut frames = Vec::new();
    // World landmark index → (map landmark, keyframe index last seen).
    let mut known_points: HashMap<usize, (PointId, usize)> = HashMap::new();
    let mut known_lines: HashMap<usize, (pl_map::LineId, usize)> = HashMap::new();

    let n_frames = frontend.num_frames();
    let mut kf_index = 0usize;
    for frame in (0..n_frames).step_by(config.keyframe_stride) {
        let gt_pose = frontend.gt_pose_cw(ViewId::left(frame));
        let warp = (config.drift)(kf_index);
        // Drifted pose views the warped world consistently.
        let pose = gt_pose.compose(&warp.inverse());

        let mut left = frontend.detect(ViewId::left(frame));
        associate_points_to_lines(&left.keypoints, &mut left.lines, 3.0);
        let gt = frontend.ground_truth(left.image_id).unwrap().clone();

        let right = frontend.detect(ViewId::right(frame));
        let gt_right = frontend.ground_truth(right.image_id).unwrap().clone();
        let right_of_world: HashMap<usize, usize> = gt_right
            .keypoint_to_point
            .iter()
            .enumerate()
            .map(|(i, w)| (*w, i))
            .collect();

        let kf_id = map.insert_keyframe(frame as f64, pose, left.clone());
        gt_poses.push((kf_id, gt_pose));
        frames.push(frame);

        for (kp_idx, world_idx) in gt.keypoint_to_point.iter().enumerate() {
            let reuse = known_points
                .get(world_idx)
                .filter(|(_, last)| kf_index - last <= config.track_gap)
                .map(|(pid, _)| *pid);
            let pid = match reuse {
                Some(pid) => pid,
                None => {
                    let gt_position = frontend.world.points[*world_idx].position;
                    let position = warp.transform_point(&gt_position);
                    map.new_point(
                        position,
                        left.keypoints[kp_idx].descriptor.clone(),
                    )
                }
            };
            known_points.insert(*world_idx, (pid, kf_index));
            map.add_point_observation(pid, kf_id, kp_idx as u32);
            if let Some(right_idx) = right_of_world.get(world_idx) {
                map.add_stereo_observation(
                    pid,
                    kf_id,
                    right.keypoints[*right_idx].position,
                );
            }
        }

        for (line_idx, world_idx) in gt.line_to_world.iter().enumerate() {
            let reuse = known_lines
                .get(world_idx)
                .filter(|(_, last)| kf_index - last <= config.track_gap)
                .map(|(lid, _)| *lid);
            let lid = match reuse {
                Some(lid) => lid,
                None => {
                    let wl = &frontend.world.lines[*world_idx];
                    let a = warp.transform_point(&wl.a);
                    let b = warp.transform_point(&wl.b);
                    let Ok(line) = PluckerLine::through_points(&a, &b) else {
                        continue;
                    };
                    map.new_line(line)
                }
            };
            known_lines.insert(*world_idx, (lid, kf_index));
            map.add_line_observation(lid, kf_id, line_idx as u32);
        }

        kf_index += 1;
    }

    map.refresh_line_point_associations();
    SimMapFixture {
        map,
        gt_poses,
        frontend,
        frames,
    }
}

/// RMSE of keyframe camera centers against ground truth without alignment
/// (fixtures share the gauge of the first keyframe).
pub fn keyframe_ate(map: &SlamMap, gt_poses: &[(KeyframeId, Pose)]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0;
    for (id, gt) in gt_poses {
        let est = map.keyframes[id].pose;
        let c_est = est.inverse().translation();
        let c_gt = gt.inverse().translation();
        sum += (c_est - c_gt).norm_squared();
        n += 1;
    }
    (sum / n as f64).sqrt()
}
