//! The oracle frontend: detection by projecting the ground-truth world,
//! matching either by oracle correspondences or by descriptors.

use std::collections::HashMap;

use nalgebra::Vector3;
use pl_features::{
    match_descriptors, CameraSide, Frontend, FrontendOutput, MatcherConfig, ViewId,
};
use pl_geometry::{CameraIntrinsics, Pose};
use pl_imu::ImuSample;

use crate::{derive_seed, observe, GroundTruthLinks, ObservationModel, SimTrajectory, SimWorld};

#[derive(Clone, Copy, Debug)]
pub enum MatchMode {
    /// Match through the oracle world-point identities.
    GroundTruth,
    /// Mutual nearest-neighbor descriptor matching with ratio test.
    Descriptor(MatcherConfig),
}

/// Frontend over a simulated world and trajectory. Caches the ground-truth
/// links of every detected view (one instance per thread).
pub struct SimFrontend {
    pub world: SimWorld,
    pub trajectory: SimTrajectory,
    pub intrinsics: CameraIntrinsics,
    pub camera_hz: f64,
    pub model: ObservationModel,
    pub match_mode: MatchMode,
    seed: u64,
    gt_cache: HashMap<u64, GroundTruthLinks>,
}

impl SimFrontend {
    pub fn new(
        world: SimWorld,
        trajectory: SimTrajectory,
        intrinsics: CameraIntrinsics,
        camera_hz: f64,
        model: ObservationModel,
        match_mode: MatchMode,
        seed: u64,
    ) -> Self {
        Self {
            world,
            trajectory,
            intrinsics,
            camera_hz,
            model,
            match_mode,
            seed,
            gt_cache: HashMap::new(),
        }
    }

    pub fn frame_time(&self, frame: usize) -> f64 {
        self.trajectory.start_time() + frame as f64 / self.camera_hz
    }

    pub fn num_frames(&self) -> usize {
        ((self.trajectory.end_time() - self.trajectory.start_time()) * self.camera_hz).floor()
            as usize
    }

    /// Ground-truth world→camera pose of a view (left camera at the body
    /// origin, right camera at +baseline along body x).
    pub fn gt_pose_cw(&self, view: ViewId) -> Pose {
        let t = self.frame_time(view.frame);
        let wb = self.trajectory.pose_wb(t).expect("frame inside trajectory");
        let body_to_cam = match view.side {
            CameraSide::Left => Pose::identity(),
            CameraSide::Right => Pose::new(
                nalgebra::UnitQuaternion::identity(),
                Vector3::new(-self.intrinsics.baseline, 0.0, 0.0),
            ),
        };
        body_to_cam.compose(&wb.inverse())
    }

    /// Oracle links of a previously detected view.
    pub fn ground_truth(&self, image_id: u64) -> Option<&GroundTruthLinks> {
        self.gt_cache.get(&image_id)
    }

    /// Detect a view at a pose that is NOT on the trajectory (query
    /// generation for relocalization).
    pub fn detect_at_pose(&mut self, pose_cw: &Pose, image_id: u64) -> FrontendOutput {
        let seed = derive_seed(self.seed, image_id.wrapping_add(0x5eed));
        let (mut out, gt) =
            observe(&self.world, pose_cw, &self.intrinsics, &self.model, seed, false);
        out.image_id = image_id;
        self.gt_cache.insert(image_id, gt);
        out
    }
}

impl Frontend for SimFrontend {
    fn detect(&mut self, view: ViewId) -> FrontendOutput {
        let pose = self.gt_pose_cw(view);
        let image_id = view.image_id();
        // Noise streams are shared by the two views of a frame so stereo
        // errors stay correlated.
        let frame_seed = derive_seed(self.seed, view.frame as u64);
        let (mut out, gt) = observe(
            &self.world,
            &pose,
            &self.intrinsics,
            &self.model,
            frame_seed,
            matches!(view.side, CameraSide::Right),
        );
        out.image_id = image_id;
        self.gt_cache.insert(image_id, gt);
        out
    }

    fn match_features(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)> {
        match self.match_mode {
            MatchMode::Descriptor(cfg) => match_descriptors(&a.keypoints, &b.keypoints, &cfg),
            MatchMode::GroundTruth => {
                let (Some(gt_a), Some(gt_b)) = (
                    self.gt_cache.get(&a.image_id),
                    self.gt_cache.get(&b.image_id),
                ) else {
                    return Vec::new();
                };
                let index_b: HashMap<usize, usize> = gt_b
                    .keypoint_to_point
                    .iter()
                    .enumerate()
                    .map(|(i, w)| (*w, i))
                    .collect();
                gt_a.keypoint_to_point
                    .iter()
                    .enumerate()
                    .filter_map(|(i, w)| index_b.get(w).map(|j| (i, *j)))
                    .collect()
            }
        }
    }
}

/// A complete simulated sequence: the frontend plus the per-frame
/// timestamps, the IMU stream and the ground-truth camera poses.
pub struct SimSequence {
    pub frontend: SimFrontend,
    pub timestamps: Vec<f64>,
    pub imu: Vec<ImuSample>,
    /// Ground-truth world→camera pose of the left camera per frame.
    pub gt_poses_cw: Vec<Pose>,
    pub gravity: Vector3<f64>,
}

impl SimSequence {
    pub fn build(
        world: SimWorld,
        trajectory: SimTrajectory,
        intrinsics: CameraIntrinsics,
        camera_hz: f64,
        imu_hz: f64,
        model: ObservationModel,
        match_mode: MatchMode,
        seed: u64,
    ) -> Self {
        let gravity = Vector3::new(0.0, 0.0, -9.81);
        let imu = trajectory.synthesize_imu(
            imu_hz,
            if model.imu_noise_enabled() {
                Some(&model.imu_noise)
            } else {
                None
            },
            &model.imu_bias,
            &gravity,
            derive_seed(seed, 0x1b0),
        );
        let frontend = SimFrontend::new(
            world,
            trajectory,
            intrinsics,
            camera_hz,
            model,
            match_mode,
            seed,
        );
        let n = frontend.num_frames();
        let timestamps: Vec<f64> = (0..n).map(|f| frontend.frame_time(f)).collect();
        let gt_poses_cw: Vec<Pose> = (0..n)
            .map(|f| frontend.gt_pose_cw(ViewId::left(f)))
            .collect();
        Self {
            frontend,
            timestamps,
            imu,
            gt_poses_cw,
            gravity,
        }
    }
}

impl ObservationModel {
    /// IMU noise is injected only when explicitly enabled through a
    /// nonzero flag sigma; the default model synthesizes noiseless streams.
    pub fn imu_noise_enabled(&self) -> bool {
        self.imu_noise_on
    }
}
