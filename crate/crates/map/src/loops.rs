//! Coarse-to-fine loop closure detection: BoW retrieval with co-visibility
//! exclusion and score grouping, then descriptor matching and a
//! RANSAC-verified relative pose.

use std::collections::HashMap;

use nalgebra::{Vector2, Vector3};
use pl_features::{match_descriptors, MatcherConfig};
use pl_geometry::pnp::{solve_pnp_ransac, PnpConfig};
use pl_geometry::Pose;

use crate::{KeyframeId, SlamMap};

#[derive(Clone, Debug)]
pub struct LoopConfig {
    /// Keep candidates scoring above `score_ratio · S_max`.
    pub score_ratio: f64,
    /// Keyframes sharing more than this many features group together.
    pub group_min_shared: u32,
    /// Number of top groups retained.
    pub top_groups: usize,
    /// A pair is accepted when the verified inliers exceed this count.
    pub min_inliers: usize,
    /// Candidates sharing at least this many landmarks with the query
    /// count as covisibility-connected and are excluded. The production
    /// rule excludes on any shared feature (1); synthetic worlds with a
    /// few perpetually visible landmarks need a small allowance.
    pub covisibility_exclusion: u32,
    pub matcher: MatcherConfig,
    pub pnp: PnpConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            score_ratio: 0.3,
            group_min_shared: 10,
            top_groups: 3,
            min_inliers: 50,
            covisibility_exclusion: 1,
            matcher: MatcherConfig::default(),
            pnp: PnpConfig {
                min_inliers: 4,
                ..Default::default()
            },
        }
    }
}

/// A verified loop closure between keyframe `from` (the later one) and
/// `to`, with the measured relative pose `ΔT̃ = T_from⁻¹ T_to` in
/// camera-to-world convention.
#[derive(Clone, Debug)]
pub struct LoopPair {
    pub from: KeyframeId,
    pub to: KeyframeId,
    pub relative: Pose,
    pub inliers: usize,
    /// Inlier keypoint matches `(index in from, index in to)`.
    pub matches: Vec<(u32, u32)>,
}

/// BoW retrieval candidates for one query against a keyframe pool, shared
/// with the relocalization pipeline: score filtering by
/// `score_ratio · S_max`, grouping by co-visibility, best keyframe per
/// group, groups ranked by their summed score.
pub fn retrieve_grouped_candidates(
    map: &SlamMap,
    query_bow: &crate::BowVector,
    pool: &[KeyframeId],
    score_ratio: f64,
    group_min_shared: u32,
) -> Vec<(KeyframeId, f64)> {
    let mut scored: Vec<(KeyframeId, f64)> = Vec::new();
    for id in pool {
        let Some(kf) = map.keyframes.get(id) else { continue };
        let Some(bow) = &kf.bow else { continue };
        let s = query_bow.similarity(bow);
        if s > 0.0 {
            scored.push((*id, s));
        }
    }
    if scored.is_empty() {
        return Vec::new();
    }
    let s_max = scored
        .iter()
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    scored.retain(|(_, s)| *s > score_ratio * s_max);

    // Union-find grouping: two candidates join when they share more than
    // `group_min_shared` features.
    let n = scored.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if map.covisibility_weight(scored[i].0, scored[j].0) > group_min_shared {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri] = rj;
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    // Rank groups by their summed score; represent each by its best member.
    let mut ranked: Vec<(f64, KeyframeId, f64)> = groups
        .values()
        .map(|members| {
            let total: f64 = members.iter().map(|&i| scored[i].1).sum();
            let best = members
                .iter()
                .max_by(|&&a, &&b| {
                    scored[a]
                        .1
                        .total_cmp(&scored[b].1)
                        .then(scored[b].0.cmp(&scored[a].0))
                })
                .unwrap();
            (total, scored[*best].0, scored[*best].1)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().map(|(_, id, s)| (id, s)).collect()
}

/// Detects loop closures over the whole map. Requires keyframe bags of
/// words (see [`build_keypoint_vocabulary`]).
///
/// [`build_keypoint_vocabulary`]: crate::build_keypoint_vocabulary
pub fn detect_loops(map: &SlamMap, config: &LoopConfig) -> Vec<LoopPair> {
    let ids: Vec<KeyframeId> = map.keyframes.keys().copied().collect();
    let mut pairs = Vec::new();

    for (pos, &query_id) in ids.iter().enumerate() {
        let query = &map.keyframes[&query_id];
        let Some(query_bow) = &query.bow else { continue };
        // Earlier keyframes not connected in the co-visibility graph.
        let pool: Vec<KeyframeId> = ids[..pos]
            .iter()
            .copied()
            .filter(|j| map.covisibility_weight(query_id, *j) < config.covisibility_exclusion)
            .collect();
        if pool.is_empty() {
            continue;
        }
        let groups = retrieve_grouped_candidates(
            map,
            query_bow,
            &pool,
            config.score_ratio,
            config.group_min_shared,
        );
        for (candidate_id, _) in groups.into_iter().take(config.top_groups) {
            if let Some(pair) = verify_candidate(map, query_id, candidate_id, config) {
                pairs.push(pair);
                break; // one verified loop per query keyframe
            }
        }
    }
    pairs
}

/// Fine stage: match descriptors, lift the candidate's keypoints to map
/// points, solve PnP for the query pose and keep the pair when the inliers
/// exceed the acceptance count.
fn verify_candidate(
    map: &SlamMap,
    query_id: KeyframeId,
    candidate_id: KeyframeId,
    config: &LoopConfig,
) -> Option<LoopPair> {
    let query = &map.keyframes[&query_id];
    let candidate = &map.keyframes[&candidate_id];
    let matches = match_descriptors(
        &query.features.keypoints,
        &candidate.features.keypoints,
        &config.matcher,
    );
    if matches.len() <= config.min_inliers {
        return None;
    }
    let mut world: Vec<Vector3<f64>> = Vec::new();
    let mut pixels: Vec<Vector2<f64>> = Vec::new();
    let mut pair_of_row: Vec<(u32, u32)> = Vec::new();
    for (qi, ci) in &matches {
        let Some(pid) = candidate.point_links[*ci] else { continue };
        let point = &map.points[&pid];
        world.push(point.position);
        pixels.push(query.features.keypoints[*qi].position);
        pair_of_row.push((*qi as u32, *ci as u32));
    }
    if world.len() <= config.min_inliers {
        return None;
    }
    let intr = map.camera;
    let pnp_cfg = PnpConfig {
        seed: config.pnp.seed ^ query_id.0,
        ..config.pnp
    };
    let result = solve_pnp_ransac(&world, &pixels, &intr, Some(&query.pose), &pnp_cfg).ok()?;
    if result.num_inliers <= config.min_inliers {
        return None;
    }
    let inlier_matches: Vec<(u32, u32)> = pair_of_row
        .iter()
        .zip(result.inlier_mask.iter())
        .filter(|(_, m)| **m)
        .map(|(p, _)| *p)
        .collect();
    // ΔT̃ = T̂_from⁻¹ T_to with camera-to-world poses: the PnP-corrected
    // query pose against the candidate's current estimate.
    let relative = result.pose.compose(&candidate.pose.inverse());
    Some(LoopPair {
        from: query_id,
        to: candidate_id,
        relative,
        inliers: result.num_inliers,
        matches: inlier_matches,
    })
}
