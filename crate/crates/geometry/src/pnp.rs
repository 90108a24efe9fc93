//! Absolute pose from 3D-2D correspondences: a P3P minimal solver inside a
//! seeded RANSAC loop, followed by Gauss-Newton refinement on the inliers.

use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{so3, CameraIntrinsics, GeometryError, Pose};

#[derive(Clone, Copy, Debug)]
pub struct PnpConfig {
    /// RANSAC iterations.
    pub iterations: usize,
    /// Reprojection inlier threshold in pixels.
    pub inlier_threshold_px: f64,
    /// Minimum inliers for the estimate to count as a success.
    pub min_inliers: usize,
    /// Gauss-Newton refinement iterations on the inlier set.
    pub refine_iterations: usize,
    /// Seed for the RANSAC sampler.
    pub seed: u64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold_px: 3.0,
            min_inliers: 20,
            refine_iterations: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PnpResult {
    /// Estimated world→camera pose.
    pub pose: Pose,
    pub inlier_mask: Vec<bool>,
    pub num_inliers: usize,
}

/// Solves for the world→camera pose with RANSAC over P3P hypotheses followed
/// by Gauss-Newton refinement on the inliers.
pub fn solve_pnp_ransac(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    prior: Option<&Pose>,
    config: &PnpConfig,
) -> Result<PnpResult, GeometryError> {
    assert_eq!(world.len(), pixels.len());
    let n = world.len();
    if n < 4 {
        return Err(GeometryError::InsufficientCorrespondences { needed: 4, got: n });
    }

    let bearings: Vec<Vector3<f64>> = pixels.iter().map(|p| intr.bearing(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best_pose: Option<Pose> = None;
    let mut best_inliers = 0usize;

    let consider = |pose: &Pose, best_pose: &mut Option<Pose>, best_inliers: &mut usize| {
        let count = count_inliers(world, pixels, intr, pose, config.inlier_threshold_px);
        if count > *best_inliers {
            *best_inliers = count;
            *best_pose = Some(*pose);
        }
    };

    if let Some(p) = prior {
        consider(p, &mut best_pose, &mut best_inliers);
    }

    for _ in 0..config.iterations {
        let idx = sample(&mut rng, n, 3).into_vec();
        let pw = [world[idx[0]], world[idx[1]], world[idx[2]]];
        let f = [bearings[idx[0]], bearings[idx[1]], bearings[idx[2]]];
        for pose in p3p(&pw, &f) {
            consider(&pose, &mut best_pose, &mut best_inliers);
        }
        if best_inliers == n {
            break;
        }
    }

    let Some(mut pose) = best_pose else {
        return Err(GeometryError::TooFewInliers {
            inliers: 0,
            minimum: config.min_inliers,
        });
    };

    // Refine on inliers, then reclassify; one extra pass tightens the set.
    for _ in 0..2 {
        let mask = inlier_mask(world, pixels, intr, &pose, config.inlier_threshold_px);
        let (w_in, p_in): (Vec<_>, Vec<_>) = world
            .iter()
            .zip(pixels.iter())
            .zip(mask.iter())
            .filter(|(_, &m)| m)
            .map(|((w, p), _)| (*w, *p))
            .unzip();
        if w_in.len() < 3 {
            break;
        }
        pose = refine_pose(&w_in, &p_in, intr, &pose, config.refine_iterations);
    }

    let mask = inlier_mask(world, pixels, intr, &pose, config.inlier_threshold_px);
    let num_inliers = mask.iter().filter(|&&m| m).count();
    if num_inliers < config.min_inliers {
        return Err(GeometryError::TooFewInliers {
            inliers: num_inliers,
            minimum: config.min_inliers,
        });
    }
    Ok(PnpResult {
        pose,
        inlier_mask: mask,
        num_inliers,
    })
}

fn reprojection_error(
    world: &Vector3<f64>,
    pixel: &Vector2<f64>,
    intr: &CameraIntrinsics,
    pose: &Pose,
) -> f64 {
    match intr.project_point(&pose.transform_point(world)) {
        Ok(px) => (px - pixel).norm(),
        Err(_) => f64::INFINITY,
    }
}

fn inlier_mask(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    pose: &Pose,
    threshold: f64,
) -> Vec<bool> {
    world
        .iter()
        .zip(pixels.iter())
        .map(|(w, p)| reprojection_error(w, p, intr, pose) < threshold)
        .collect()
}

fn count_inliers(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    pose: &Pose,
    threshold: f64,
) -> usize {
    world
        .iter()
        .zip(pixels.iter())
        .filter(|(w, p)| reprojection_error(w, p, intr, pose) < threshold)
        .count()
}

/// Gauss-Newton on the reprojection error over a single pose, with the
/// right-multiplicative SE(3) update.
pub fn refine_pose(
    world: &[Vector3<f64>],
    pixels: &[Vector2<f64>],
    intr: &CameraIntrinsics,
    initial: &Pose,
    iterations: usize,
) -> Pose {
    let mut pose = *initial;
    for _ in 0..iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        let r = pose.rotation_matrix();
        for (w, px) in world.iter().zip(pixels.iter()) {
            let xc = pose.transform_point(w);
            if xc.z <= 1e-9 {
                continue;
            }
            let Ok(proj) = intr.project_point(&xc) else {
                continue;
            };
            let res = px - proj;
            let z_inv = 1.0 / xc.z;
            // d(pi)/d(Xc)
            let dproj = nalgebra::Matrix2x3::new(
                intr.fx * z_inv,
                0.0,
                -intr.fx * xc.x * z_inv * z_inv,
                0.0,
                intr.fy * z_inv,
                -intr.fy * xc.y * z_inv * z_inv,
            );
            // Xc = R Xw + t, right perturbation: dXc/d(rho) = R,
            // dXc/d(phi) = -R [Xw]x
            let mut dx = nalgebra::Matrix3x6::zeros();
            dx.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
            dx.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&(-r * so3::hat(w)));
            // residual = obs - proj, so J = -dproj * dx
            let j = -(dproj * dx);
            h += j.transpose() * j;
            g += -j.transpose() * res;
        }
        let mut damped = h;
        for i in 0..6 {
            damped[(i, i)] += 1e-9 + 1e-6 * h[(i, i)];
        }
        let Some(chol) = damped.cholesky() else { break };
        let delta = chol.solve(&g);
        if delta.norm() < 1e-14 {
            break;
        }
        pose = pose.retract(&delta);
    }
    pose
}

/// P3P: camera poses consistent with three world points and their bearing
/// vectors. Returns up to four solutions.
pub fn p3p(world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let mut out = Vec::new();

    let side_a = (world[1] - world[2]).norm();
    let side_b = (world[0] - world[2]).norm();
    let side_c = (world[0] - world[1]).norm();
    if side_a < 1e-9 || side_b < 1e-9 || side_c < 1e-9 {
        return out;
    }
    // Collinear world points give an ambiguous pose.
    if (world[1] - world[0])
        .cross(&(world[2] - world[0]))
        .norm()
        < 1e-9 * side_b * side_c
    {
        return out;
    }

    let cos_a = bearings[1].dot(&bearings[2]);
    let cos_b = bearings[0].dot(&bearings[2]);
    let cos_g = bearings[0].dot(&bearings[1]);

    let ratio_a = (side_a * side_a) / (side_b * side_b);
    let ratio_c = (side_c * side_c) / (side_b * side_b);

    // With u = s2/s1, v = s3/s1, the two ratio equations reduce to
    // u = num(v) / den(v); substituting back yields a quartic in v.
    let num = [
        ratio_a + 1.0 - ratio_c,
        -2.0 * cos_b * (ratio_a - ratio_c),
        -(1.0 - ratio_a + ratio_c),
        0.0,
        0.0,
    ];
    let den = [2.0 * cos_g, -2.0 * cos_a, 0.0, 0.0, 0.0];
    // g(v) = -C v^2 + 2 C cos_b v + (1 - C)
    let gpoly = [1.0 - ratio_c, 2.0 * ratio_c * cos_b, -ratio_c, 0.0, 0.0];

    let num_sq = poly_mul(&num, &num);
    let num_den = poly_scale(&poly_mul(&num, &den), -2.0 * cos_g);
    let den_sq = poly_mul(&den, &den);
    let g_densq = poly_mul(&gpoly, &den_sq);
    let quartic = poly_add(&poly_add(&num_sq, &num_den), &g_densq);

    for v in real_positive_roots(&quartic) {
        let d = poly_eval(&den, v);
        if d.abs() < 1e-12 {
            continue;
        }
        let u = poly_eval(&num, v) / d;
        if u <= 0.0 {
            continue;
        }
        let s1_sq = (side_b * side_b) / (1.0 + v * v - 2.0 * v * cos_b);
        if !(s1_sq.is_finite() && s1_sq > 0.0) {
            continue;
        }
        let s1 = s1_sq.sqrt();
        let s2 = u * s1;
        let s3 = v * s1;
        let cam = [s1 * bearings[0], s2 * bearings[1], s3 * bearings[2]];
        if let Some(pose) = align_world_to_camera(world, &cam) {
            out.push(pose);
        }
    }
    out
}

/// Rigid alignment mapping world points onto camera-frame points (Kabsch).
fn align_world_to_camera(world: &[Vector3<f64>; 3], cam: &[Vector3<f64>; 3]) -> Option<Pose> {
    let wc: Vector3<f64> = (world[0] + world[1] + world[2]) / 3.0;
    let cc: Vector3<f64> = (cam[0] + cam[1] + cam[2]) / 3.0;
    let mut cov = Matrix3::<f64>::zeros();
    for k in 0..3 {
        cov += (world[k] - wc) * (cam[k] - cc).transpose();
    }
    let svd = cov.svd(true, true);
    let u = svd.u?;
    let vt = svd.v_t?;
    let mut r = vt.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut flip = Matrix3::identity();
        flip[(2, 2)] = -1.0;
        r = vt.transpose() * flip * u.transpose();
    }
    let t = cc - r * wc;
    Pose::from_matrix(&r, t).ok()
}

// Dense polynomial helpers over coefficient arrays indexed by degree.

fn poly_mul(a: &[f64; 5], b: &[f64; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (j, &bj) in b.iter().enumerate() {
            if i + j < 5 && bj != 0.0 {
                out[i + j] += ai * bj;
            }
        }
    }
    out
}

fn poly_add(a: &[f64; 5], b: &[f64; 5]) -> [f64; 5] {
    let mut out = [0.0; 5];
    for k in 0..5 {
        out[k] = a[k] + b[k];
    }
    out
}

fn poly_scale(a: &[f64; 5], s: f64) -> [f64; 5] {
    let mut out = *a;
    for c in &mut out {
        *c *= s;
    }
    out
}

fn poly_eval(a: &[f64; 5], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Real positive roots of a polynomial of degree ≤ 4, via the companion
/// matrix of the trimmed polynomial.
fn real_positive_roots(coeffs: &[f64; 5]) -> Vec<f64> {
    let max_coeff = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_coeff == 0.0 {
        return Vec::new();
    }
    let mut degree = 4;
    while degree > 0 && coeffs[degree].abs() < 1e-12 * max_coeff {
        degree -= 1;
    }
    if degree == 0 {
        return Vec::new();
    }
    let lead = coeffs[degree];
    let mut companion = DMatrix::<f64>::zeros(degree, degree);
    for row in 1..degree {
        companion[(row, row - 1)] = 1.0;
    }
    for row in 0..degree {
        companion[(row, degree - 1)] = -coeffs[row] / lead;
    }
    // The companion matrix is laid out so its characteristic polynomial is
    // the trimmed input; its eigenvalues are the roots.
    let eigen = companion.complex_eigenvalues();
    let mut roots = Vec::new();
    for e in eigen.iter() {
        if e.im.abs() < 1e-8 * (1.0 + e.re.abs()) && e.re > 0.0 {
            roots.push(e.re);
        }
    }
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::Rng;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480, 0.1).unwrap()
    }

    fn scene(
        rng: &mut ChaCha8Rng,
        n: usize,
        pose: &Pose,
        intr: &CameraIntrinsics,
    ) -> (Vec<Vector3<f64>>, Vec<Vector2<f64>>) {
        let mut world = Vec::new();
        let mut pixels = Vec::new();
        while world.len() < n {
            let w = Vector3::new(
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(2.0..8.0),
            );
            // Points are generated in the camera frame of the true pose and
            // mapped back to the world so everything is in view.
            let world_pt = pose.inverse().transform_point(&w);
            if let Ok(px) = intr.project_point(&w) {
                if intr.contains(&px) {
                    world.push(world_pt);
                    pixels.push(px);
                }
            }
        }
        (world, pixels)
    }

    #[test]
    fn quartic_roots_match_known_factorization() {
        // (v - 1)(v - 2)(v - 3)(v + 4) expanded
        let p = [24.0, -14.0, -7.0, 4.0, 1.0];
        // p(v) = v^4 + 4v^3 ... recompute directly instead of trusting the
        // constants above:
        let mut c = [1.0, 0.0, 0.0, 0.0, 0.0];
        for r in [1.0, 2.0, 3.0, -4.0] {
            let factor = [-r, 1.0, 0.0, 0.0, 0.0];
            c = poly_mul(&c, &factor);
        }
        let _ = p;
        let mut roots = real_positive_roots(&c);
        roots.sort_by(f64::total_cmp);
        assert_eq!(roots.len(), 3);
        assert_relative_eq!(roots[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(roots[1], 2.0, epsilon = 1e-8);
        assert_relative_eq!(roots[2], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn p3p_recovers_exact_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let intr = intr();
        for _ in 0..50 {
            let truth = Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                    rng.random_range(-0.4..0.4),
                ),
                Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            );
            let (world, pixels) = scene(&mut rng, 3, &truth, &intr);
            let bearings = [
                intr.bearing(&pixels[0]),
                intr.bearing(&pixels[1]),
                intr.bearing(&pixels[2]),
            ];
            let solutions = p3p(
                &[world[0], world[1], world[2]],
                &bearings,
            );
            let best = solutions
                .iter()
                .map(|p| truth.translation_distance(p) + truth.rotation_distance(p))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "no P3P solution close to truth: {best}");
        }
    }

    #[test]
    fn ransac_noiseless_recovers_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let intr = intr();
        let truth = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.4, -0.1, 0.8),
        );
        let (world, pixels) = scene(&mut rng, 60, &truth, &intr);
        let res = solve_pnp_ransac(&world, &pixels, &intr, None, &PnpConfig::default()).unwrap();
        assert!(truth.translation_distance(&res.pose) < 1e-6);
        assert!(truth.rotation_distance(&res.pose) < 1e-6);
        assert_eq!(res.num_inliers, 60);
    }

    #[test]
    fn ransac_with_outliers_and_noise() {
        let intr = intr();
        let mut rot_errs = Vec::new();
        let mut trans_errs = Vec::new();
        for trial in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let truth = Pose::new(
                UnitQuaternion::from_euler_angles(
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.3..0.3),
                ),
                Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)),
            );
            let (world, mut pixels) = scene(&mut rng, 100, &truth, &intr);
            for px in pixels.iter_mut() {
                px.x += rng.random_range(-1.0..1.0);
                px.y += rng.random_range(-1.0..1.0);
            }
            // 30% uniform outliers
            for k in 0..30 {
                pixels[k * 3] = Vector2::new(
                    rng.random_range(0.0..640.0),
                    rng.random_range(0.0..480.0),
                );
            }
            let cfg = PnpConfig {
                seed: trial,
                ..Default::default()
            };
            let res = solve_pnp_ransac(&world, &pixels, &intr, None, &cfg).unwrap();
            rot_errs.push(truth.rotation_distance(&res.pose).to_degrees());
            trans_errs.push(truth.translation_distance(&res.pose));
        }
        let mean_rot = rot_errs.iter().sum::<f64>() / rot_errs.len() as f64;
        let mean_trans = trans_errs.iter().sum::<f64>() / trans_errs.len() as f64;
        assert!(mean_rot < 0.5, "rotation error {mean_rot} deg");
        assert!(mean_trans < 0.02, "translation error {mean_trans} m");
    }

    #[test]
    fn too_few_correspondences() {
        let intr = intr();
        let world = vec![Vector3::z(); 3];
        let pixels = vec![Vector2::zeros(); 3];
        assert!(matches!(
            solve_pnp_ransac(&world, &pixels, &intr, None, &PnpConfig::default()),
            Err(GeometryError::InsufficientCorrespondences { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let intr = intr();
        let truth = Pose::new(
            UnitQuaternion::from_euler_angles(0.2, 0.1, -0.1),
            Vector3::new(0.1, 0.2, 0.3),
        );
        let (world, mut pixels) = scene(&mut rng, 50, &truth, &intr);
        for px in pixels.iter_mut() {
            px.x += rng.random_range(-0.5..0.5);
        }
        let cfg = PnpConfig {
            seed: 42,
            ..Default::default()
        };
        let a = solve_pnp_ransac(&world, &pixels, &intr, None, &cfg).unwrap();
        let b = solve_pnp_ransac(&world, &pixels, &intr, None, &cfg).unwrap();
        assert_eq!(a.pose, b.pose);
        assert_eq!(a.inlier_mask, b.inlier_mask);
    }
}
