//! The frame loop: stage A (detection + matching against the reference
//! keyframe) feeds stage B (pose estimation, keyframe insertion,
//! triangulation, local BA) through a bounded queue. The single-threaded
//! driver runs both stages in sequence and produces bit-identical results
//! to the pipelined driver.

use std::collections::BTreeMap;
use std::sync::{Condvar, Mutex};

use nalgebra::{DVector, Vector2, Vector3};
use pl_features::{
    associate_points_to_lines, Frontend, FrontendOutput, LineMatchConfig, ViewId,
};
use pl_geometry::pnp::{solve_pnp_ransac, PnpConfig};
use pl_geometry::{
    plucker_to_orthonormal, triangulate_line_planes, CameraIntrinsics, PluckerLine, Pose,
};
use pl_imu::{preintegrate, ImuBias, ImuNoise, ImuPreintegration, ImuSample};
use pl_map::{KeyframeId, LineId, PointId, SlamMap};
use pl_optimizer::{
    solve_lm, LmOptions, OutlierPolicy, Problem, Residual, RobustLoss, VariableKey, VariableValue,
};

use crate::imu_init::slice_between;
use crate::keyframe::{select_keyframe, KeyframeThresholds, TrackStats};
use crate::stereo::{filter_stereo_matches, stereo_triangulate_point, StereoMatchConfig};
use crate::{initialize_imu, ImuInitConfig, VoError};

#[derive(Clone, Debug, Default)]
pub struct SequenceInfo {
    pub timestamps: Vec<f64>,
    pub imu: Vec<ImuSample>,
    pub gravity: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct VoConfig {
    pub intrinsics: CameraIntrinsics,
    pub keyframe: KeyframeThresholds,
    /// Local BA window size N_o.
    pub window: usize,
    pub pnp: PnpConfig,
    pub line_match: LineMatchConfig,
    pub stereo: StereoMatchConfig,
    /// Pixel noise for residual whitening.
    pub pixel_sigma: f64,
    pub huber_px: f64,
    pub local_ba_iterations: usize,
    pub use_imu: bool,
    pub imu_noise: ImuNoise,
    pub imu_init: ImuInitConfig,
    /// Ground-truth injection `(gravity, bias)` replacing estimation.
    pub imu_ground_truth: Option<(Vector3<f64>, ImuBias)>,
    pub seed: u64,
    pub config_hash: String,
    /// Queue capacity of the pipelined driver.
    pub pipeline_depth: usize,
}

impl VoConfig {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            keyframe: KeyframeThresholds::default(),
            window: 8,
            pnp: PnpConfig {
                iterations: 200,
                inlier_threshold_px: 3.0,
                min_inliers: 20,
                refine_iterations: 10,
                seed: 0,
            },
            line_match: LineMatchConfig::default(),
            stereo: StereoMatchConfig::default(),
            pixel_sigma: 1.0,
            huber_px: 2.0,
            local_ba_iterations: 12,
            use_imu: false,
            imu_noise: ImuNoise::default(),
            imu_init: ImuInitConfig::default(),
            imu_ground_truth: None,
            seed: 0,
            config_hash: String::new(),
            pipeline_depth: 2,
        }
    }

    /// New-landmark acceptance gate: twice the noise level with a floor
    /// for the noiseless case.
    fn line_gate(&self) -> f64 {
        (2.0 * self.pixel_sigma).max(2.0)
    }
}

#[derive(Clone, Debug, Default)]
pub struct VoReport {
    pub keyframes: Vec<KeyframeId>,
    /// Frames where tracking was lost and the map restarted from the last
    /// good pose.
    pub tracking_losses: Vec<usize>,
    /// Keyframe count at which the IMU initialized.
    pub imu_initialized_at: Option<usize>,
    pub deferred_lines: usize,
}

pub struct VoOutput {
    pub map: SlamMap,
    /// Per-frame world→camera poses.
    pub trajectory: Vec<(f64, Pose)>,
    pub report: VoReport,
}

/// Stage-A product: detections of the left image (with line associations)
/// and matches against the reference keyframe.
#[derive(Clone, Debug)]
struct FramePacket {
    frame: usize,
    left: FrontendOutput,
    /// (current keypoint index, reference keypoint index)
    matches: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
struct RefSnapshot {
    kf: KeyframeId,
    features: FrontendOutput,
    detected: usize,
}

fn stage_a<F: Frontend>(
    frontend: &mut F,
    frame: usize,
    reference: Option<&RefSnapshot>,
    config: &VoConfig,
) -> FramePacket {
    let mut left = frontend.detect(ViewId::left(frame));
    associate_points_to_lines(
        &left.keypoints,
        &mut left.lines,
        config.line_match.association_px,
    );
    let matches = reference
        .map(|r| frontend.match_features(&left, &r.features))
        .unwrap_or_default();
    FramePacket {
        frame,
        left,
        matches,
    }
}

/// Per-keyframe inertial state tracked by the backend.
#[derive(Clone, Debug)]
struct KfImuState {
    kf: KeyframeId,
    time: f64,
    velocity: Vector3<f64>,
    bias: ImuBias,
}

struct Backend<'a> {
    config: &'a VoConfig,
    seq: &'a SequenceInfo,
    map: SlamMap,
    trajectory: Vec<(f64, Pose)>,
    report: VoReport,
    last_pose: Pose,
    reference: Option<RefSnapshot>,
    kf_states: Vec<KfImuState>,
    /// Preintegration between consecutive keyframes, aligned with
    /// `kf_states` (entry i spans i → i+1).
    preintegrations: Vec<ImuPreintegration>,
    imu_gravity: Option<Vector3<f64>>,
}

impl<'a> Backend<'a> {
    fn new(seq: &'a SequenceInfo, config: &'a VoConfig) -> Self {
        let mut map = SlamMap::new(config.intrinsics);
        map.metadata.config_hash = config.config_hash.clone();
        Self {
            config,
            seq,
            map,
            trajectory: Vec::new(),
            report: VoReport::default(),
            last_pose: Pose::identity(),
            reference: None,
            kf_states: Vec::new(),
            preintegrations: Vec::new(),
            imu_gravity: None,
        }
    }

    fn process(
        &mut self,
        packet: FramePacket,
        detect_right: &mut dyn FnMut(usize) -> FrontendOutput,
    ) -> Result<(), VoError> {
        let time = self.seq.timestamps[packet.frame];
        let Some(reference) = self.reference.clone() else {
            // First frame bootstraps the map at the identity pose.
            self.trajectory.push((time, Pose::identity()));
            self.last_pose = Pose::identity();
            self.make_keyframe(packet, Pose::identity(), &[], detect_right)?;
            return Ok(());
        };

        let ref_kf = &self.map.keyframes[&reference.kf];
        let mut world = Vec::new();
        let mut pixels = Vec::new();
        let mut linked_matches: Vec<(usize, PointId)> = Vec::new();
        for (cur_idx, ref_idx) in &packet.matches {
            let Some(pid) = ref_kf.point_links[*ref_idx] else {
                continue;
            };
            world.push(self.map.points[&pid].position);
            pixels.push(packet.left.keypoints[*cur_idx].position);
            linked_matches.push((*cur_idx, pid));
        }

        let pnp_cfg = PnpConfig {
            seed: self
                .config
                .seed
                .wrapping_mul(0x9E37_79B9)
                .wrapping_add(packet.frame as u64),
            ..self.config.pnp
        };
        let pnp = solve_pnp_ransac(
            &world,
            &pixels,
            &self.config.intrinsics,
            Some(&self.last_pose),
            &pnp_cfg,
        );
        let pnp = match pnp {
            Ok(res) => res,
            Err(_) => {
                // Tracking lost: restart a submap anchored at the last good
                // pose; the frame becomes a keyframe with fresh landmarks.
                self.report.tracking_losses.push(packet.frame);
                let pose = self.last_pose;
                self.trajectory.push((time, pose));
                self.make_keyframe(packet, pose, &[], detect_right)?;
                return Ok(());
            }
        };

        self.trajectory.push((time, pnp.pose));
        self.last_pose = pnp.pose;

        let stats = TrackStats {
            tracked: packet.matches.len(),
            mean_parallax: mean_parallax(&packet, &reference),
        };
        let policy = self.config.keyframe.with_reference(
            reference.detected,
            self.config.intrinsics.width,
            self.config.intrinsics.height,
        );
        if !select_keyframe(&stats, &policy) {
            return Ok(());
        }

        // Inlier links carried into the new keyframe.
        let links: Vec<(usize, PointId)> = linked_matches
            .iter()
            .zip(pnp.inlier_mask.iter())
            .filter(|(_, ok)| **ok)
            .map(|(pair, _)| *pair)
            .collect();
        let pose = pnp.pose;
        self.make_keyframe(packet, pose, &links, detect_right)?;
        Ok(())
    }

    /// Inserts the frame as a keyframe: links tracked landmarks, runs the
    /// stereo side, triangulates new points and lines, updates the IMU
    /// chain and runs local BA.
    fn make_keyframe(
        &mut self,
        packet: FramePacket,
        pose: Pose,
        links: &[(usize, PointId)],
        detect_right: &mut dyn FnMut(usize) -> FrontendOutput,
    ) -> Result<(), VoError> {
        let time = self.seq.timestamps[packet.frame];
        let intr = self.config.intrinsics;
        let previous_ref = self.reference.clone();

        let kf_id = self
            .map
            .insert_keyframe(time, pose, packet.left.clone());
        self.report.keyframes.push(kf_id);

        for (cur_idx, pid) in links {
            self.map
                .add_point_observation(*pid, kf_id, *cur_idx as u32);
        }

        // Stereo side.
        let mut right = detect_right(packet.frame);
        associate_points_to_lines(
            &right.keypoints,
            &mut right.lines,
            self.config.line_match.association_px,
        );
        let raw_stereo = {
            // Descriptor matching between the rectified pair.
            pl_features::match_descriptors(
                &packet.left.keypoints,
                &right.keypoints,
                &pl_features::MatcherConfig::default(),
            )
        };
        let left_px: Vec<Vector2<f64>> =
            packet.left.keypoints.iter().map(|k| k.position).collect();
        let right_px: Vec<Vector2<f64>> =
            right.keypoints.iter().map(|k| k.position).collect();
        let stereo_matches =
            filter_stereo_matches(&left_px, &right_px, &raw_stereo, &self.config.stereo);

        let pose_inv = pose.inverse();
        for (l_idx, r_idx) in &stereo_matches {
            let existing = self.map.keyframes[&kf_id].point_links[*l_idx];
            if let Some(pid) = existing {
                self.map
                    .add_stereo_observation(pid, kf_id, right_px[*r_idx]);
                continue;
            }
            let Some(xc) = stereo_triangulate_point(
                &left_px[*l_idx],
                &right_px[*r_idx],
                &intr,
                self.config.stereo.min_disparity,
            ) else {
                continue;
            };
            if xc.z > 60.0 {
                continue;
            }
            let world = pose_inv.transform_point(&xc);
            let pid = self.map.new_point(
                world,
                packet.left.keypoints[*l_idx].descriptor.clone(),
            );
            self.map.add_point_observation(pid, kf_id, *l_idx as u32);
            self.map
                .add_stereo_observation(pid, kf_id, right_px[*r_idx]);
        }

        self.process_lines(kf_id, &packet, &right, &stereo_matches, previous_ref.as_ref());

        // IMU chain between the previous keyframe and this one.
        if self.config.use_imu {
            self.extend_imu_chain(kf_id, time)?;
        }

        self.local_bundle_adjustment();

        let pose_after = self.map.keyframes[&kf_id].pose;
        self.last_pose = pose_after;
        self.reference = Some(RefSnapshot {
            kf: kf_id,
            detected: packet.left.keypoints.len(),
            features: self.map.keyframes[&kf_id].features.clone(),
        });
        Ok(())
    }

    /// Line landmark handling: track continuation from the reference
    /// keyframe, plane-plane triangulation (stereo pair first, then
    /// reference view), and the two-associated-points fallback.
    fn process_lines(
        &mut self,
        kf_id: KeyframeId,
        packet: &FramePacket,
        right: &FrontendOutput,
        stereo_matches: &[(usize, usize)],
        reference: Option<&RefSnapshot>,
    ) {
        let intr = self.config.intrinsics;
        let pose = self.map.keyframes[&kf_id].pose;
        let gate = self.config.line_gate();
        let right_pose = right_camera_pose(&pose, &intr);

        let stereo_line_matches = pl_features::match_lines(
            &packet.left.lines,
            &right.lines,
            stereo_matches,
            &self.config.line_match,
        );
        let stereo_of: BTreeMap<usize, usize> = stereo_line_matches
            .iter()
            .map(|m| (m.index_a, m.index_b))
            .collect();

        // Matches from the reference keyframe's lines to the current ones.
        let mut ref_line_of: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ref_pose = None;
        if let Some(reference) = reference {
            let inverted: Vec<(usize, usize)> = packet
                .matches
                .iter()
                .map(|(cur, re)| (*re, *cur))
                .collect();
            let ref_features = &self.map.keyframes[&reference.kf].features;
            for m in pl_features::match_lines(
                &ref_features.lines,
                &packet.left.lines,
                &inverted,
                &self.config.line_match,
            ) {
                ref_line_of.insert(m.index_b, m.index_a);
            }
            ref_pose = Some(self.map.keyframes[&reference.kf].pose);
        }

        for n in 0..packet.left.lines.len() {
            let seg = packet.left.lines[n].clone();
            // Continue an existing 3D line track.
            if let (Some(reference), Some(m)) = (reference, ref_line_of.get(&n)) {
                if let Some(lid) = self.map.keyframes[&reference.kf].line_links[*m] {
                    if self.line_reprojects(lid, &seg, &pose, gate) {
                        self.map.add_line_observation(lid, kf_id, n as u32);
                        continue;
                    }
                }
            }

            // New line: plane-plane from the reference view first (the
            // wider baseline conditions the intersection far better than
            // the stereo pair).
            let mut candidate: Option<PluckerLine> = None;
            let mut ref_gate: Option<(usize, Pose)> = None;
            if let (Some(m), Some(rp)) = (ref_line_of.get(&n), ref_pose.as_ref()) {
                let reference = reference.unwrap();
                let ref_seg = &self.map.keyframes[&reference.kf].features.lines[*m];
                candidate =
                    triangulate_line_planes(&seg.line, &pose, &ref_seg.line, rp, &intr).ok();
                ref_gate = Some((*m, *rp));
            }
            // Stereo pair as the narrow-baseline backup; only close lines
            // give the pair a usable dihedral angle.
            if candidate.is_none() {
                if let Some(r_idx) = stereo_of.get(&n) {
                    let right_line = &right.lines[*r_idx].line;
                    let n1 = pl_geometry::BackProjectedPlane::from_observation(
                        &seg.line, &pose, &intr,
                    )
                    .normal
                    .normalize();
                    let n2 = pl_geometry::BackProjectedPlane::from_observation(
                        right_line,
                        &right_pose,
                        &intr,
                    )
                    .normal
                    .normalize();
                    let dihedral = n1.dot(&n2).abs().min(1.0).acos().to_degrees();
                    if dihedral > 2.0 {
                        candidate = triangulate_line_planes(
                            &seg.line,
                            &pose,
                            right_line,
                            &right_pose,
                            &intr,
                        )
                        .ok();
                    }
                }
            }
            // Fallback: associated, already triangulated points closest to
            // the segment in the image; among the closest supports take
            // the widest-separated pair so point noise does not dominate
            // the direction.
            if candidate.is_none() {
                let kf = &self.map.keyframes[&kf_id];
                let mut supports: Vec<(f64, PointId)> = seg
                    .keypoint_ids
                    .iter()
                    .filter_map(|kp_idx| {
                        let pid = kf.point_links[*kp_idx]?;
                        let d = seg.line.distance_to(&kf.features.keypoints[*kp_idx].position);
                        Some((d, pid))
                    })
                    .collect();
                supports.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                supports.dedup_by_key(|(_, pid)| *pid);
                supports.truncate(4);
                let mut best: Option<(f64, PointId, PointId)> = None;
                for i in 0..supports.len() {
                    for j in (i + 1)..supports.len() {
                        let sep = (self.map.points[&supports[i].1].position
                            - self.map.points[&supports[j].1].position)
                            .norm();
                        if best.map_or(true, |(b, ..)| sep > b) {
                            best = Some((sep, supports[i].1, supports[j].1));
                        }
                    }
                }
                if let Some((sep, a, b)) = best {
                    if sep > 0.3 {
                        let x1 = self.map.points[&a].position;
                        let x2 = self.map.points[&b].position;
                        candidate = PluckerLine::through_points(&x1, &x2).ok();
                    }
                }
            }

            let Some(line3d) = candidate else {
                self.report.deferred_lines += 1;
                continue;
            };
            // Accept only lines that reproject onto their observation, and
            // onto the reference observation too when the track spans both
            // (a narrow-baseline line that is wrong in depth fails there).
            if !reprojects(&line3d, &seg, &pose, &intr, gate) {
                self.report.deferred_lines += 1;
                continue;
            }
            if let Some((m, rp)) = &ref_gate {
                let reference = reference.unwrap();
                let ref_seg = &self.map.keyframes[&reference.kf].features.lines[*m];
                if !reprojects(&line3d, ref_seg, rp, &intr, gate) {
                    self.report.deferred_lines += 1;
                    continue;
                }
            }
            let lid = self.map.new_line(line3d.normalized());
            self.map.add_line_observation(lid, kf_id, n as u32);
            if let (Some(reference), Some(m)) = (reference, ref_line_of.get(&n)) {
                if self.map.keyframes[&reference.kf].line_links[*m].is_none() {
                    self.map
                        .add_line_observation(lid, reference.kf, *m as u32);
                }
            }
        }
        self.map.refresh_line_point_associations();
    }

    fn line_reprojects(&self, lid: LineId, seg: &pl_features::LineSegment2D, pose: &Pose, gate: f64) -> bool {
        reprojects(
            &self.map.lines[&lid].line,
            seg,
            pose,
            &self.config.intrinsics,
            gate,
        )
    }

    fn extend_imu_chain(&mut self, kf_id: KeyframeId, time: f64) -> Result<(), VoError> {
        let bias = self
            .kf_states
            .last()
            .map(|s| s.bias)
            .unwrap_or_default();
        if let Some(prev) = self.kf_states.last() {
            let slice = slice_between(&self.seq.imu, prev.time, time);
            if slice.len() >= 2 {
                self.preintegrations
                    .push(preintegrate(slice, &bias, &self.config.imu_noise)?);
            } else {
                // No coverage: a zero-length surrogate keeps the chain
                // aligned but is skipped by BA.
                self.preintegrations.push(preintegrate(
                    &[
                        ImuSample {
                            timestamp: prev.time,
                            gyro: Vector3::zeros(),
                            accel: Vector3::zeros(),
                        },
                        ImuSample {
                            timestamp: time,
                            gyro: Vector3::zeros(),
                            accel: Vector3::zeros(),
                        },
                    ],
                    &bias,
                    &self.config.imu_noise,
                )?);
            }
        }
        // Predicted velocity for the new keyframe.
        let velocity = match (self.kf_states.last(), self.imu_gravity) {
            (Some(prev), Some(g)) => {
                let pre = self.preintegrations.last().unwrap();
                let r_prev = self.map.keyframes[&prev.kf]
                    .pose
                    .rotation()
                    .inverse()
                    .to_rotation_matrix()
                    .into_inner();
                prev.velocity + g * pre.dt + r_prev * pre.delta_velocity
            }
            _ => Vector3::zeros(),
        };
        self.kf_states.push(KfImuState {
            kf: kf_id,
            time,
            velocity,
            bias,
        });

        if self.imu_gravity.is_none() && self.kf_states.len() >= self.config.imu_init.min_keyframes
        {
            self.try_initialize_imu()?;
        }
        Ok(())
    }

    fn try_initialize_imu(&mut self) -> Result<(), VoError> {
        let keyframes: Vec<(f64, Pose)> = self
            .kf_states
            .iter()
            .map(|s| (s.time, self.map.keyframes[&s.kf].pose))
            .collect();
        let init = if let Some((gravity, bias)) = self.config.imu_ground_truth {
            // Injection mode: velocities from central differences of the
            // keyframe centers.
            let centers: Vec<Vector3<f64>> = keyframes
                .iter()
                .map(|(_, p)| p.inverse().translation())
                .collect();
            let n = centers.len();
            let velocities: Vec<Vector3<f64>> = (0..n)
                .map(|i| {
                    let (a, b) = if i == 0 {
                        (0, 1)
                    } else if i == n - 1 {
                        (n - 2, n - 1)
                    } else {
                        (i - 1, i + 1)
                    };
                    (centers[b] - centers[a]) / (keyframes[b].0 - keyframes[a].0)
                })
                .collect();
            crate::ImuInit {
                gravity,
                bias,
                velocities,
            }
        } else {
            match initialize_imu(
                &keyframes,
                &self.seq.imu,
                &self.config.imu_noise,
                &self.config.imu_init,
            ) {
                Ok(init) => init,
                // Keep collecting keyframes and retry later.
                Err(_) => return Ok(()),
            }
        };

        self.imu_gravity = Some(init.gravity);
        self.report.imu_initialized_at = Some(self.kf_states.len());
        for (state, velocity) in self.kf_states.iter_mut().zip(init.velocities.iter()) {
            state.velocity = *velocity;
            state.bias = init.bias;
        }
        // Re-linearize the stored intervals at the estimated bias.
        for (i, pre) in self.preintegrations.iter_mut().enumerate() {
            let slice = slice_between(
                &self.seq.imu,
                self.kf_states[i].time,
                self.kf_states[i + 1].time,
            );
            if slice.len() >= 2 {
                *pre = preintegrate(slice, &init.bias, &self.config.imu_noise)?;
            }
        }
        Ok(())
    }

    /// Windowed BA: the last `window` keyframes plus fixed anchors (older
    /// keyframes observing window landmarks).
    fn local_bundle_adjustment(&mut self) {
        let n_kf = self.report.keyframes.len();
        if n_kf < 2 {
            return;
        }
        let window_start = n_kf.saturating_sub(self.config.window);
        let window: Vec<KeyframeId> = self.report.keyframes[window_start..].to_vec();
        let window_set: std::collections::BTreeSet<KeyframeId> =
            window.iter().copied().collect();

        // Landmarks observed inside the window.
        let mut points: Vec<PointId> = Vec::new();
        for (pid, point) in &self.map.points {
            if point.observation_count() < 2 {
                continue;
            }
            if point
                .observations
                .iter()
                .any(|(kf, _)| window_set.contains(kf))
            {
                points.push(*pid);
            }
        }
        let mut lines: Vec<LineId> = Vec::new();
        for (lid, line) in &self.map.lines {
            if line.observations.len() < 2 {
                continue;
            }
            if line
                .observations
                .iter()
                .any(|(kf, _)| window_set.contains(kf))
            {
                lines.push(*lid);
            }
        }

        // Anchor keyframes: outside the window but observing the landmarks.
        let mut involved: std::collections::BTreeSet<KeyframeId> = window_set.clone();
        for pid in &points {
            for (kf, _) in &self.map.points[pid].observations {
                involved.insert(*kf);
            }
        }
        for lid in &lines {
            for (kf, _) in &self.map.lines[lid].observations {
                involved.insert(*kf);
            }
        }

        let first_kf = self.report.keyframes[0];
        let mut problem = Problem::new();
        let mut pose_keys: BTreeMap<KeyframeId, VariableKey> = BTreeMap::new();
        for kf in &involved {
            let fixed = !window_set.contains(kf) || *kf == first_kf;
            pose_keys.insert(
                *kf,
                problem.add_variable(VariableValue::Pose(self.map.keyframes[kf].pose), fixed),
            );
        }
        // Gauge: everything free (early map) still needs an anchor.
        if window_set.contains(&first_kf) || involved.iter().all(|kf| window_set.contains(kf)) {
            problem.set_fixed(pose_keys[&window[0]], true);
        }

        let sigma = self.config.pixel_sigma.max(1e-3);
        let info = DVector::from_element(2, 1.0 / (sigma * sigma));
        let huber = RobustLoss::Huber(self.config.huber_px / sigma);
        let intr = self.config.intrinsics;
        let right_offset = Vector3::new(-intr.baseline, 0.0, 0.0);

        let mut point_keys: BTreeMap<PointId, VariableKey> = BTreeMap::new();
        for pid in &points {
            let point = &self.map.points[pid];
            let key = problem.add_variable(VariableValue::Point(point.position), false);
            point_keys.insert(*pid, key);
            for (kf, idx) in &point.observations {
                let obs = self.map.keyframes[kf].features.keypoints[*idx as usize].position;
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
                    .expect("valid BA residual");
            }
            for (kf, px) in &point.stereo_observations {
                problem
                    .add_residual(
                        Residual::PointReprojection {
                            pose: pose_keys[kf],
                            point: key,
                            observation: *px,
                            intrinsics: intr,
                            camera_offset: right_offset,
                        },
                        info.clone(),
                        huber,
                    )
                    .expect("valid BA stereo residual");
            }
        }

        let mut line_keys: BTreeMap<LineId, VariableKey> = BTreeMap::new();
        for lid in &lines {
            let line = &self.map.lines[lid];
            let Ok(on) = plucker_to_orthonormal(&line.line) else {
                continue;
            };
            let key = problem.add_variable(VariableValue::Line(on), false);
            line_keys.insert(*lid, key);
            for (kf, idx) in &line.observations {
                let seg = &self.map.keyframes[kf].features.lines[*idx as usize];
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
                    .expect("valid BA line residual");
            }
        }

        // Inertial factors across the window.
        let mut imu_keys: BTreeMap<KeyframeId, (VariableKey, VariableKey)> = BTreeMap::new();
        if let Some(gravity) = self.imu_gravity {
            for state in &self.kf_states {
                if !window_set.contains(&state.kf) {
                    continue;
                }
                let v = problem.add_variable(VariableValue::Velocity(state.velocity), false);
                let b = problem.add_variable(VariableValue::Bias(state.bias), false);
                imu_keys.insert(state.kf, (v, b));
            }
            for (i, pre) in self.preintegrations.iter().enumerate() {
                let kf_i = self.kf_states[i].kf;
                let kf_j = self.kf_states[i + 1].kf;
                let (Some((vi, bi)), Some((vj, bj))) =
                    (imu_keys.get(&kf_i), imu_keys.get(&kf_j))
                else {
                    continue;
                };
                let w = &pre.information;
                let mut info15 = DVector::from_element(15, 1.0);
                for k in 0..3 {
                    info15[k] = w.rotation;
                    info15[3 + k] = w.velocity;
                    info15[6 + k] = w.position;
                    info15[9 + k] = w.gyro_bias;
                    info15[12 + k] = w.accel_bias;
                }
                problem
                    .add_residual(
                        Residual::Imu {
                            pose_i: pose_keys[&kf_i],
                            velocity_i: *vi,
                            bias_i: *bi,
                            pose_j: pose_keys[&kf_j],
                            velocity_j: *vj,
                            bias_j: *bj,
                            preintegration: Box::new(pre.clone()),
                            gravity,
                        },
                        info15,
                        RobustLoss::None,
                    )
                    .expect("valid IMU residual");
            }
        }

        let report = solve_lm(
            &mut problem,
            &LmOptions {
                max_iterations: self.config.local_ba_iterations,
                outlier_rejection: Some(OutlierPolicy {
                    point_chi2: 5.99,
                    line_chi2: 5.99,
                    second_round_iterations: 4,
                }),
                ..Default::default()
            },
        );
        let _ = report;

        for (kf, key) in &pose_keys {
            if !problem.is_fixed(*key) {
                self.map.keyframes.get_mut(kf).unwrap().pose = problem.pose(*key);
            }
        }
        for (pid, key) in &point_keys {
            self.map.points.get_mut(pid).unwrap().position = problem.point(*key);
        }
        for (lid, key) in &line_keys {
            self.map.lines.get_mut(lid).unwrap().line =
                pl_geometry::orthonormal_to_plucker(&problem.line(*key)).normalized();
        }
        for state in self.kf_states.iter_mut() {
            if let Some((v, b)) = imu_keys.get(&state.kf) {
                state.velocity = problem.velocity(*v);
                state.bias = problem.bias(*b);
            }
        }
    }

    fn finish(self) -> VoOutput {
        VoOutput {
            map: self.map,
            trajectory: self.trajectory,
            report: self.report,
        }
    }
}

fn mean_parallax(packet: &FramePacket, reference: &RefSnapshot) -> f64 {
    if packet.matches.is_empty() {
        return 0.0;
    }
    let sum: f64 = packet
        .matches
        .iter()
        .map(|(cur, re)| {
            (packet.left.keypoints[*cur].position - reference.features.keypoints[*re].position)
                .norm()
        })
        .sum();
    sum / packet.matches.len() as f64
}

/// World→camera pose of the right camera of the rectified pair.
fn right_camera_pose(left_pose: &Pose, intr: &CameraIntrinsics) -> Pose {
    Pose::new(
        nalgebra::UnitQuaternion::identity(),
        Vector3::new(-intr.baseline, 0.0, 0.0),
    )
    .compose(left_pose)
}

fn reprojects(
    line: &PluckerLine,
    seg: &pl_features::LineSegment2D,
    pose: &Pose,
    intr: &CameraIntrinsics,
    gate: f64,
) -> bool {
    let cam = pl_geometry::transform_line(pose, line);
    let Ok(l2d) = pl_geometry::project_line(intr, &cam) else {
        return false;
    };
    l2d.distance_to(&seg.p1) < gate && l2d.distance_to(&seg.p2) < gate
}

/// Runs the pipeline single-threaded: stage A then stage B per frame.
pub fn run_vo<F: Frontend>(
    frontend: &mut F,
    seq: &SequenceInfo,
    config: &VoConfig,
) -> Result<VoOutput, VoError> {
    let mut backend = Backend::new(seq, config);
    for frame in 0..seq.timestamps.len() {
        let packet = stage_a(frontend, frame, backend.reference.as_ref(), config);
        let mut detect_right = |f: usize| {
            let mut right = frontend.detect(ViewId::right(f));
            right.image_id = ViewId::right(f).image_id();
            right
        };
        // The borrow checker cannot see the disjoint use, so stage B takes
        // the frontend through the closure only.
        backend.process(packet, &mut detect_right)?;
    }
    Ok(backend.finish())
}

/// Runs the same pipeline with stage A on a worker thread, communicating
/// through a bounded queue. Detection of frame k+1 overlaps stage B of
/// frame k; matching waits for the keyframe decision, which keeps the
/// result bit-identical to [`run_vo`].
pub fn run_vo_pipelined<F: Frontend + Send>(
    frontend: &mut F,
    seq: &SequenceInfo,
    config: &VoConfig,
) -> Result<VoOutput, VoError> {
    let n = seq.timestamps.len();
    if n == 0 {
        return Ok(Backend::new(seq, config).finish());
    }

    struct Shared {
        processed_upto: isize,
        reference: Option<RefSnapshot>,
    }
    let shared = Mutex::new(Shared {
        processed_upto: -1,
        reference: None,
    });
    let ready = Condvar::new();
    let frontend_cell = Mutex::new(frontend);
    let (tx, rx) = std::sync::mpsc::sync_channel::<FramePacket>(config.pipeline_depth.max(1));

    let mut backend = Backend::new(seq, config);
    std::thread::scope(|scope| -> Result<(), VoError> {
        let shared_ref = &shared;
        let ready_ref = &ready;
        let frontend_ref = &frontend_cell;
        scope.spawn(move || {
            for frame in 0..n {
                // Detection may run ahead of stage B.
                let mut left = {
                    let mut fe = frontend_ref.lock().unwrap();
                    fe.detect(ViewId::left(frame))
                };
                associate_points_to_lines(
                    &left.keypoints,
                    &mut left.lines,
                    config.line_match.association_px,
                );
                // Matching needs the keyframe decision of the previous
                // frame.
                let reference = {
                    let mut guard = shared_ref.lock().unwrap();
                    while guard.processed_upto < frame as isize - 1 {
                        guard = ready_ref.wait(guard).unwrap();
                    }
                    guard.reference.clone()
                };
                let matches = reference
                    .as_ref()
                    .map(|r| {
                        let mut fe = frontend_ref.lock().unwrap();
                        fe.match_features(&left, &r.features)
                    })
                    .unwrap_or_default();
                if tx
                    .send(FramePacket {
                        frame,
                        left,
                        matches,
                    })
                    .is_err()
                {
                    return;
                }
            }
        });

        for _ in 0..n {
            let packet = rx.recv().expect("stage A feeds every frame");
            let frame = packet.frame;
            let mut detect_right = |f: usize| {
                let mut fe = frontend_cell.lock().unwrap();
                fe.detect(ViewId::right(f))
            };
            backend.process(packet, &mut detect_right)?;
            let mut guard = shared.lock().unwrap();
            guard.processed_upto = frame as isize;
            guard.reference = backend.reference.clone();
            drop(guard);
            ready.notify_all();
        }
        Ok(())
    })?;

    Ok(backend.finish())
}
