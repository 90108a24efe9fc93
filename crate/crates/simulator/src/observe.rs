//! Oracle feature observation: projects the world through a camera with
//! occlusion, clipping, noise, dropout and brightness-dependent degradation.

use nalgebra::{Vector2, Vector3};
use pl_features::{Descriptor, FrontendOutput, Junction, Keypoint, LineSegment2D};
use pl_geometry::{CameraIntrinsics, Pose};
use pl_imu::{ImuBias, ImuNoise};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::world::SimWorld;

/// Brightness transfer parameters of the gamma nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrightnessLevel {
    pub a: f64,
    pub gamma: f64,
}

impl BrightnessLevel {
    pub fn identity() -> Self {
        Self { a: 1.0, gamma: 1.0 }
    }

    /// Mean output brightness for uniformly distributed input.
    pub fn mean_brightness(&self) -> f64 {
        self.a * self.gamma / (self.gamma + 1.0)
    }
}

/// `V_out = A · V_in^(1/γ)`, clamped to [0, 1].
pub fn gamma_transform(v_in: f64, a: f64, gamma: f64) -> f64 {
    (a * v_in.powf(1.0 / gamma)).clamp(0.0, 1.0)
}

/// The 13 brightness levels (0 = unchanged); `A` and `γ` alternate in
/// descending order so the image gets progressively darker.
pub fn brightness_levels() -> Vec<BrightnessLevel> {
    let mut out = vec![BrightnessLevel::identity()];
    let mut a = 1.0;
    let mut gamma = 1.0;
    for i in 1..=12 {
        if i % 2 == 1 {
            a *= 0.82;
        } else {
            gamma *= 0.82;
        }
        out.push(BrightnessLevel { a, gamma });
    }
    out
}

#[derive(Clone, Debug)]
pub struct ObservationModel {
    /// Pixel noise sigma on keypoints and line endpoints.
    pub pixel_sigma: f64,
    /// Gaussian noise added to descriptors before renormalization.
    pub descriptor_sigma: f64,
    /// Per-feature detection dropout probability.
    pub dropout: f64,
    /// Segments shorter than this after clipping are dropped.
    pub min_line_px: f64,
    pub brightness: BrightnessLevel,
    pub imu_noise: ImuNoise,
    /// Whether IMU synthesis injects noise (the parameters above still
    /// weight the residuals either way).
    pub imu_noise_on: bool,
    /// True sensor biases used for IMU synthesis.
    pub imu_bias: ImuBias,
}

impl Default for ObservationModel {
    fn default() -> Self {
        Self {
            pixel_sigma: 0.0,
            descriptor_sigma: 0.0,
            dropout: 0.0,
            min_line_px: 20.0,
            brightness: BrightnessLevel::identity(),
            imu_noise: ImuNoise::default(),
            imu_noise_on: false,
            imu_bias: ImuBias::zero(),
        }
    }
}

/// Degrades a model to the given brightness level: detections drop out and
/// descriptors get noisier as the images darken.
pub fn night_mode(base: &ObservationModel, level: usize) -> ObservationModel {
    let levels = brightness_levels();
    let level = level.min(levels.len() - 1);
    ObservationModel {
        dropout: (base.dropout + 0.05 * level as f64).min(0.9),
        descriptor_sigma: base.descriptor_sigma + 0.02 * level as f64,
        brightness: levels[level],
        ..base.clone()
    }
}

/// Oracle links from emitted features back to world entities. Test-only
/// ground truth; the estimator path never sees it.
#[derive(Clone, Debug, Default)]
pub struct GroundTruthLinks {
    /// Emitted keypoint index → world point index.
    pub keypoint_to_point: Vec<usize>,
    /// Emitted line index → world line index.
    pub line_to_world: Vec<usize>,
    /// Emitted junction index → world vertex index.
    pub junction_to_vertex: Vec<usize>,
}

const NEAR_PLANE: f64 = 0.2;
const EDGE_VISIBILITY_SAMPLES: usize = 12;
/// Residual independent noise of the right view, as a fraction of
/// `pixel_sigma`: stereo correspondence errors are strongly correlated
/// between the rectified images, so the effective disparity noise is much
/// smaller than the detection noise.
const STEREO_JITTER_FRACTION: f64 = 0.3;

/// Projects the world into a camera at `pose_cw` with the given observation
/// model. Returns the frontend output plus the oracle correspondences.
///
/// All per-landmark randomness derives from `frame_seed` alone, so the two
/// views of a stereo pair see correlated noise; `right_eye` adds the small
/// independent disparity jitter.
pub fn observe(
    world: &SimWorld,
    pose_cw: &Pose,
    intr: &CameraIntrinsics,
    model: &ObservationModel,
    frame_seed: u64,
    right_eye: bool,
) -> (FrontendOutput, GroundTruthLinks) {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let eye = pose_cw.inverse().translation();
    let stream = |salt: u64, idx: usize| -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(crate::derive_seed(
            frame_seed,
            salt.wrapping_add(idx as u64),
        ))
    };

    let mut output = FrontendOutput::default();
    let mut gt = GroundTruthLinks::default();

    // Keypoints from world landmark points.
    for (idx, point) in world.points.iter().enumerate() {
        let xc = pose_cw.transform_point(&point.position);
        if xc.z < NEAR_PLANE {
            continue;
        }
        let Ok(px) = intr.project_point(&xc) else { continue };
        if !intr.contains(&px) {
            continue;
        }
        if world.occluded(&eye, &point.position) {
            continue;
        }
        let mut rng = stream(0x1000_0000, idx);
        if model.dropout > 0.0 && rng.random::<f64>() < model.dropout {
            continue;
        }
        let mut noisy = px
            + Vector2::new(
                model.pixel_sigma * normal.sample(&mut rng),
                model.pixel_sigma * normal.sample(&mut rng),
            );
        if right_eye && model.pixel_sigma > 0.0 {
            let mut jitter = stream(0x5000_0000, idx);
            noisy.x +=
                STEREO_JITTER_FRACTION * model.pixel_sigma * normal.sample(&mut jitter);
        }
        if !intr.contains(&noisy) {
            continue;
        }
        let descriptor = if model.descriptor_sigma > 0.0 {
            let values: Vec<f32> = point
                .descriptor
                .values()
                .iter()
                .map(|v| v + (model.descriptor_sigma * normal.sample(&mut rng)) as f32)
                .collect();
            Descriptor::new(values)
        } else {
            point.descriptor.clone()
        };
        output.keypoints.push(Keypoint {
            position: noisy,
            descriptor,
            score: rng.random_range(0.5..1.0),
        });
        gt.keypoint_to_point.push(idx);
    }

    // Noised projected positions of visible vertices; shared between the
    // incident line endpoints and the junction so they coincide exactly.
    let mut vertex_px: Vec<Option<Vector2<f64>>> = vec![None; world.vertices.len()];
    for (v_idx, vertex) in world.vertices.iter().enumerate() {
        let xc = pose_cw.transform_point(&vertex.position);
        if xc.z < NEAR_PLANE {
            continue;
        }
        let Ok(px) = intr.project_point(&xc) else { continue };
        if !intr.contains(&px) || world.occluded(&eye, &vertex.position) {
            continue;
        }
        let mut rng = stream(0x2000_0000, v_idx);
        let noisy = px
            + Vector2::new(
                model.pixel_sigma * normal.sample(&mut rng),
                model.pixel_sigma * normal.sample(&mut rng),
            );
        if intr.contains(&noisy) {
            vertex_px[v_idx] = Some(noisy);
        }
    }

    // Lines: clip to the visible portion, project, drop short leftovers.
    // endpoint_vertices marks emitted endpoints that sit exactly on a
    // visible vertex (junction bookkeeping).
    let mut line_emitted: Vec<Option<usize>> = vec![None; world.lines.len()];
    for (l_idx, line) in world.lines.iter().enumerate() {
        let mut rng = stream(0x3000_0000, l_idx);
        if model.dropout > 0.0 && rng.random::<f64>() < model.dropout {
            continue;
        }
        let Some((t0, t1)) = visible_span(world, &eye, pose_cw, &line.a, &line.b) else {
            continue;
        };
        let a3 = line.a + t0 * (line.b - line.a);
        let b3 = line.a + t1 * (line.b - line.a);
        let (Ok(pa), Ok(pb)) = (
            intr.project_point(&pose_cw.transform_point(&a3)),
            intr.project_point(&pose_cw.transform_point(&b3)),
        ) else {
            continue;
        };
        let Some((mut qa, mut qb)) = clip_to_image(&pa, &pb, intr) else {
            continue;
        };
        if (qa - qb).norm() < model.min_line_px {
            continue;
        }
        // Endpoints at visible corners reuse the shared vertex position;
        // interior endpoints get their own noise.
        let mut snap = |q: &mut Vector2<f64>, vertex: usize, t_val: f64, t_edge: f64| -> bool {
            if (t_val - t_edge).abs() < 1e-9 {
                if let Some(vpx) = vertex_px[vertex] {
                    if (*q - vpx).norm() < 4.0 * model.pixel_sigma + 3.0 {
                        *q = vpx;
                        return true;
                    }
                }
            }
            *q += Vector2::new(
                model.pixel_sigma * normal.sample(&mut rng),
                model.pixel_sigma * normal.sample(&mut rng),
            );
            false
        };
        let a_at_vertex = snap(&mut qa, line.vertices.0, t0, 0.0);
        let b_at_vertex = snap(&mut qb, line.vertices.1, t1, 1.0);
        let Ok(mut seg) = LineSegment2D::from_endpoints(qa, qb) else {
            continue;
        };
        seg.score = rng.random_range(0.5..1.0);
        line_emitted[l_idx] = Some(output.lines.len());
        let _ = (a_at_vertex, b_at_vertex);
        output.lines.push(seg);
        gt.line_to_world.push(l_idx);
    }

    // Junctions: visible vertices terminating at least two emitted lines
    // whose shared endpoint survived.
    for (v_idx, vertex) in world.vertices.iter().enumerate() {
        let Some(vpx) = vertex_px[v_idx] else { continue };
        let incident: Vec<usize> = vertex
            .lines
            .iter()
            .filter_map(|l| line_emitted[*l])
            .filter(|emitted| {
                let seg = &output.lines[*emitted];
                (seg.p1 - vpx).norm() < 1e-9 || (seg.p2 - vpx).norm() < 1e-9
            })
            .collect();
        if incident.len() < 2 {
            continue;
        }
        output.junctions.push(Junction {
            position: vpx,
            line_ids: incident,
        });
        gt.junction_to_vertex.push(v_idx);
    }

    (output, gt)
}

/// Longest visible (unoccluded, in front of the near plane) parameter span
/// of a world segment.
fn visible_span(
    world: &SimWorld,
    eye: &Vector3<f64>,
    pose_cw: &Pose,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
) -> Option<(f64, f64)> {
    // Clip to the near plane first.
    let za = pose_cw.transform_point(a).z;
    let zb = pose_cw.transform_point(b).z;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if za < NEAR_PLANE && zb < NEAR_PLANE {
        return None;
    }
    if za < NEAR_PLANE {
        lo = (NEAR_PLANE - za) / (zb - za);
    }
    if zb < NEAR_PLANE {
        hi = (NEAR_PLANE - za) / (zb - za);
    }
    if hi <= lo {
        return None;
    }
    // Occlusion sampling: keep the longest contiguous visible run.
    let n = EDGE_VISIBILITY_SAMPLES;
    let mut best: Option<(usize, usize)> = None;
    let mut run_start: Option<usize> = None;
    for k in 0..=n {
        let t = lo + (hi - lo) * k as f64 / n as f64;
        let p = a + t * (b - a);
        let visible = !world.occluded(eye, &p);
        if visible {
            if run_start.is_none() {
                run_start = Some(k);
            }
            let start = run_start.unwrap();
            if best.map_or(true, |(s, e)| e - s < k - start) {
                best = Some((start, k));
            }
        } else {
            run_start = None;
        }
    }
    let (s, e) = best?;
    if e == s {
        return None;
    }
    let t_of = |k: usize| lo + (hi - lo) * k as f64 / n as f64;
    Some((t_of(s), t_of(e)))
}

/// Liang-Barsky clip of a 2D segment to the image rectangle.
fn clip_to_image(
    p1: &Vector2<f64>,
    p2: &Vector2<f64>,
    intr: &CameraIntrinsics,
) -> Option<(Vector2<f64>, Vector2<f64>)> {
    let (w, h) = (f64::from(intr.width) - 1.0, f64::from(intr.height) - 1.0);
    let d = p2 - p1;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    let checks = [
        (-d.x, p1.x),
        (d.x, w - p1.x),
        (-d.y, p1.y),
        (d.y, h - p1.y),
    ];
    for (den, num) in checks {
        if den.abs() < 1e-12 {
            if num < 0.0 {
                return None;
            }
            continue;
        }
        let t = num / den;
        if den < 0.0 {
            t0 = t0.max(t);
        } else {
            t1 = t1.min(t);
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((p1 + t0 * d, p1 + t1 * d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldSpec};
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0, 640, 480, 0.12).unwrap()
    }

    #[test]
    fn gamma_unit_cases() {
        assert_eq!(gamma_transform(0.37, 1.0, 1.0), 0.37);
        assert_relative_eq!(gamma_transform(0.25, 0.5, 0.5), 0.03125);
        // monotone in the input
        let mut last = 0.0;
        for k in 0..=20 {
            let v = gamma_transform(k as f64 / 20.0, 0.8, 0.7);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn brightness_levels_darken_monotonically() {
        let levels = brightness_levels();
        assert_eq!(levels.len(), 13);
        assert_eq!(levels[0], BrightnessLevel::identity());
        for pair in levels.windows(2) {
            assert!(pair[1].mean_brightness() < pair[0].mean_brightness());
        }
    }

    #[test]
    fn night_mode_degrades_monotonically() {
        let base = ObservationModel::default();
        let mut last_dropout = -1.0;
        let mut last_sigma = -1.0;
        for level in 0..=12 {
            let m = night_mode(&base, level);
            assert!(m.dropout >= last_dropout);
            assert!(m.descriptor_sigma >= last_sigma);
            last_dropout = m.dropout;
            last_sigma = m.descriptor_sigma;
        }
        let level0 = night_mode(&base, 0);
        assert_eq!(level0.dropout, base.dropout);
        assert_eq!(level0.descriptor_sigma, base.descriptor_sigma);
    }

    /// Camera centered in front of a single box must see exactly the four
    /// front-face edges (the rest are occluded by the box body).
    #[test]
    fn frontal_box_shows_exactly_front_edges() {
        let mut world = SimWorld::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        world.add_box(
            Vector3::new(0.0, 0.0, 4.0),
            Vector3::new(1.0, 1.0, 1.0),
            2,
            16,
            &mut rng,
        );
        let pose = Pose::identity();
        let (out, gt) = observe(&world, &pose, &intr(), &ObservationModel::default(), 1, false);
        assert_eq!(out.lines.len(), 4, "expected the 4 front edges");
        for &w in &gt.line_to_world {
            let line = &world.lines[w];
            // Front face edges have both endpoints at z = 3.
            assert!(line.a.z < 3.5 && line.b.z < 3.5, "non-front edge observed");
        }
        // The four front corners form junctions with two visible edges.
        assert_eq!(out.junctions.len(), 4);
        out.validate().unwrap();
    }

    #[test]
    fn dropout_one_empties_the_output() {
        let world = generate_world(&WorldSpec::default(), 5);
        let model = ObservationModel {
            dropout: 1.0,
            ..Default::default()
        };
        let pose = Pose::new(
            nalgebra::UnitQuaternion::identity(),
            Vector3::new(0.0, 0.0, 8.0),
        );
        let (out, _) = observe(&world, &pose, &intr(), &model, 2, false);
        assert!(out.keypoints.is_empty());
        assert!(out.lines.is_empty());
        assert!(out.junctions.is_empty());
    }

    #[test]
    fn observations_back_project_to_their_landmarks() {
        let world = generate_world(&WorldSpec::default(), 6);
        let model = ObservationModel {
            pixel_sigma: 0.5,
            ..Default::default()
        };
        // Camera on the orbit looking inward.
        let traj = crate::SimTrajectory::orbit(Vector3::zeros(), 6.0, 0.4, 1, 12, 30.0);
        let pose = traj.pose_wb(2.0).unwrap().inverse();
        let intr = intr();
        let (out, gt) = observe(&world, &pose, &intr, &model, 7, false);
        assert!(out.keypoints.len() > 30, "too few keypoints: {}", out.keypoints.len());
        for (k, kp) in out.keypoints.iter().enumerate() {
            let world_pt = &world.points[gt.keypoint_to_point[k]];
            let px = intr
                .project_point(&pose.transform_point(&world_pt.position))
                .unwrap();
            assert!((px - kp.position).norm() < 4.0 * model.pixel_sigma.max(0.5));
        }
    }

    #[test]
    fn projected_points_on_lines_stay_close_to_projected_parent_line() {
        let world = generate_world(&WorldSpec::default(), 8);
        let sigma = 0.5;
        let model = ObservationModel {
            pixel_sigma: sigma,
            ..Default::default()
        };
        let traj = crate::SimTrajectory::orbit(Vector3::zeros(), 6.0, 0.4, 1, 12, 30.0);
        let pose = traj.pose_wb(5.0).unwrap().inverse();
        let intr = intr();
        let (out, gt) = observe(&world, &pose, &intr, &model, 9, false);
        let mut checked = 0;
        for (k, kp) in out.keypoints.iter().enumerate() {
            let world_pt = &world.points[gt.keypoint_to_point[k]];
            let Some(parent) = world_pt.on_line else { continue };
            let Some(emitted) = gt.line_to_world.iter().position(|w| *w == parent) else {
                continue;
            };
            let d = out.lines[emitted].line.distance_to(&kp.position);
            // Keypoint noise plus endpoint noise tilting the line.
            assert!(d < 6.0 * sigma, "point strayed {d} px from its line");
            checked += 1;
        }
        assert!(checked > 5, "no on-line points verified ({checked})");
    }

    #[test]
    fn identical_seeds_are_bit_identical() {
        let world = generate_world(&WorldSpec::default(), 10);
        let model = ObservationModel {
            pixel_sigma: 1.0,
            descriptor_sigma: 0.05,
            dropout: 0.2,
            ..Default::default()
        };
        let pose = Pose::new(
            nalgebra::UnitQuaternion::identity(),
            Vector3::new(0.0, 0.0, 9.0),
        );
        let (a, _) = observe(&world, &pose, &intr(), &model, 42, false);
        let (b, _) = observe(&world, &pose, &intr(), &model, 42, false);
        assert_eq!(a.keypoints.len(), b.keypoints.len());
        for (ka, kb) in a.keypoints.iter().zip(b.keypoints.iter()) {
            assert_eq!(ka.position, kb.position);
            assert_eq!(ka.descriptor.values(), kb.descriptor.values());
        }
        assert_eq!(a.lines.len(), b.lines.len());
        for (la, lb) in a.lines.iter().zip(b.lines.iter()) {
            assert_eq!(la.p1, lb.p1);
            assert_eq!(la.p2, lb.p2);
        }
    }
}
