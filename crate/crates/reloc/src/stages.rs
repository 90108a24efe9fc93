//! The three relocalization stages and their composition.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};
use pl_features::{match_descriptors, FrontendOutput, MatcherConfig};
use pl_geometry::pnp::{solve_pnp_ransac, PnpConfig};
use pl_geometry::Pose;
use pl_map::{junction_descriptor_indices, retrieve_grouped_candidates, KeyframeId, SlamMap};

use crate::graph::{structure_score, JunctionGraph, SimilarityScore, StructureMode};

#[derive(Clone, Debug)]
pub struct RelocConfig {
    /// Stage-1 score filter relative to the best candidate.
    pub score_ratio: f64,
    /// Covisibility weight that merges candidates into one group.
    pub group_min_shared: u32,
    /// Candidates surviving stage 2 (N_C).
    pub top_candidates: usize,
    /// Success needs at least this many PnP inliers.
    pub min_inliers: usize,
    pub structure_mode: StructureMode,
    /// Junction-keypoint coincidence radius for junction descriptors.
    pub junction_radius_px: f64,
    pub matcher: MatcherConfig,
    pub pnp: PnpConfig,
    pub seed: u64,
}

impl Default for RelocConfig {
    fn default() -> Self {
        Self {
            score_ratio: 0.3,
            group_min_shared: 10,
            top_candidates: 3,
            min_inliers: 20,
            structure_mode: StructureMode::default(),
            junction_radius_px: 2.0,
            matcher: MatcherConfig::default(),
            pnp: PnpConfig {
                min_inliers: 4,
                ..Default::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelocStatus {
    Success,
    NoCandidates,
    InsufficientInliers,
}

impl RelocStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelocStatus::Success => "Success",
            RelocStatus::NoCandidates => "NoCandidates",
            RelocStatus::InsufficientInliers => "InsufficientInliers",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RelocResult {
    pub status: RelocStatus,
    /// World→camera pose of the query (present on Success and on the best
    /// failed attempt when one exists).
    pub pose: Option<Pose>,
    pub best_keyframe: Option<KeyframeId>,
    pub inliers: usize,
    /// Per-stage wall time in milliseconds.
    pub stage_ms: [f64; 3],
    /// Set when the map lacks a junction vocabulary and stage 2 degraded
    /// to a keypoint-score passthrough.
    pub degraded_stage2: bool,
}

/// Stage-2 outcome per surviving candidate.
#[derive(Clone, Debug)]
pub struct StageTwoScore {
    pub keyframe: KeyframeId,
    pub score: SimilarityScore,
}

/// Stage 1: appearance retrieval. All keyframes compete (no co-visibility
/// exclusion); every group's best keyframe is retained.
pub fn stage1_retrieve(
    query: &FrontendOutput,
    map: &SlamMap,
    config: &RelocConfig,
) -> Vec<(KeyframeId, f64)> {
    let Some(vocab) = &map.keypoint_vocabulary else {
        return Vec::new();
    };
    if map.keyframes.is_empty() {
        return Vec::new();
    }
    let bow = vocab.bow(query.keypoints.iter().map(|k| &k.descriptor));
    let pool: Vec<KeyframeId> = map.keyframes.keys().copied().collect();
    retrieve_grouped_candidates(map, &bow, &pool, config.score_ratio, config.group_min_shared)
}

/// Stage 2: junction-word matching, structure graphs and the combined
/// similarity; keeps the top `top_candidates`. Without a junction
/// vocabulary the top candidates by keypoint score pass through.
pub fn stage2_structure_filter(
    query: &FrontendOutput,
    candidates: &[(KeyframeId, f64)],
    map: &SlamMap,
    config: &RelocConfig,
) -> (Vec<StageTwoScore>, bool) {
    let Some(vocab) = &map.junction_vocabulary else {
        let passthrough = candidates
            .iter()
            .take(config.top_candidates)
            .map(|(kf, s)| StageTwoScore {
                keyframe: *kf,
                score: SimilarityScore {
                    keypoint: *s,
                    junction: 0.0,
                    structure: 0.0,
                    matches: 0,
                },
            })
            .collect();
        return (passthrough, true);
    };

    // Query-side junction descriptors, words and bag of words.
    let query_pairs = junction_descriptor_indices(query, config.junction_radius_px);
    let query_words: Vec<(usize, u32)> = query_pairs
        .iter()
        .map(|(j_idx, k_idx)| (*j_idx, vocab.quantize(&query.keypoints[*k_idx].descriptor)))
        .collect();
    let query_bow = vocab.bow(
        query_pairs
            .iter()
            .map(|(_, k_idx)| &query.keypoints[*k_idx].descriptor),
    );

    let mut scored: Vec<StageTwoScore> = Vec::new();
    for (kf_id, s_keypoint) in candidates {
        let kf = &map.keyframes[kf_id];
        let cand_pairs = junction_descriptor_indices(&kf.features, config.junction_radius_px);
        let cand_words: Vec<(usize, u32)> = cand_pairs
            .iter()
            .map(|(j_idx, k_idx)| {
                (*j_idx, vocab.quantize(&kf.features.keypoints[*k_idx].descriptor))
            })
            .collect();
        let junction_bow = match &kf.junction_bow {
            Some(b) => b.clone(),
            None => vocab.bow(
                cand_pairs
                    .iter()
                    .map(|(_, k_idx)| &kf.features.keypoints[*k_idx].descriptor),
            ),
        };
        let s_junction = query_bow.similarity(&junction_bow);

        // One-to-one junction matching inside shared words, by descriptor
        // distance.
        let matches = match_junctions_by_word(
            &query_words,
            &query_pairs,
            query,
            &cand_words,
            &cand_pairs,
            &kf.features,
        );
        let n = matches.len();
        let s_structure = if n > 0 && config.structure_mode != StructureMode::Off {
            let q_graph = JunctionGraph::build(
                query,
                &matches.iter().map(|(q, _)| *q).collect::<Vec<_>>(),
            );
            let b_graph = JunctionGraph::build(
                &kf.features,
                &matches.iter().map(|(_, b)| *b).collect::<Vec<_>>(),
            );
            structure_score(&q_graph, &b_graph, config.structure_mode)
        } else {
            0.0
        };
        let score = SimilarityScore {
            keypoint: *s_keypoint,
            junction: s_junction,
            structure: s_structure,
            matches: if config.structure_mode == StructureMode::Off {
                0
            } else {
                n
            },
        };
        scored.push(StageTwoScore {
            keyframe: *kf_id,
            score,
        });
    }
    scored.sort_by(|a, b| {
        b.score
            .combined()
            .total_cmp(&a.score.combined())
            .then(a.keyframe.cmp(&b.keyframe))
    });
    scored.truncate(config.top_candidates);
    (scored, false)
}

/// Junction pairs `(query junction idx, candidate junction idx)` matched
/// inside shared vocabulary words, one-to-one by descriptor distance.
fn match_junctions_by_word(
    query_words: &[(usize, u32)],
    query_pairs: &[(usize, usize)],
    query: &FrontendOutput,
    cand_words: &[(usize, u32)],
    cand_pairs: &[(usize, usize)],
    cand: &FrontendOutput,
) -> Vec<(usize, usize)> {
    let desc_of_query: BTreeMap<usize, usize> = query_pairs.iter().copied().collect();
    let desc_of_cand: BTreeMap<usize, usize> = cand_pairs.iter().copied().collect();

    let mut by_word: BTreeMap<u32, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (j, w) in query_words {
        by_word.entry(*w).or_default().0.push(*j);
    }
    for (j, w) in cand_words {
        by_word.entry(*w).or_default().1.push(*j);
    }

    let mut out = Vec::new();
    for (_, (qs, bs)) in by_word {
        if qs.is_empty() || bs.is_empty() {
            continue;
        }
        // Greedy by ascending descriptor distance inside the word.
        let mut pairs: Vec<(f32, usize, usize)> = Vec::new();
        for &q in &qs {
            for &b in &bs {
                let dq = &query.keypoints[desc_of_query[&q]].descriptor;
                let db = &cand.keypoints[desc_of_cand[&b]].descriptor;
                pairs.push((dq.distance(db), q, b));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut used_q = std::collections::BTreeSet::new();
        let mut used_b = std::collections::BTreeSet::new();
        for (_, q, b) in pairs {
            if used_q.contains(&q) || used_b.contains(&b) {
                continue;
            }
            used_q.insert(q);
            used_b.insert(b);
            out.push((q, b));
        }
    }
    out.sort_unstable();
    out
}

/// Stage 3: feature matching against the surviving candidates, map-point
/// association through the best one, PnP with RANSAC.
pub fn stage3_match_and_pnp(
    query: &FrontendOutput,
    candidates: &[StageTwoScore],
    map: &SlamMap,
    config: &RelocConfig,
) -> RelocResult {
    if candidates.is_empty() {
        return RelocResult {
            status: RelocStatus::NoCandidates,
            pose: None,
            best_keyframe: None,
            inliers: 0,
            stage_ms: [0.0; 3],
            degraded_stage2: false,
        };
    }
    // The candidate with the most feature matches wins.
    let mut best: Option<(usize, KeyframeId, Vec<(usize, usize)>)> = None;
    for c in candidates {
        let kf = &map.keyframes[&c.keyframe];
        let matches = match_descriptors(&query.keypoints, &kf.features.keypoints, &config.matcher);
        if best.as_ref().map_or(true, |(n, ..)| matches.len() > *n) {
            best = Some((matches.len(), c.keyframe, matches));
        }
    }
    let (_, best_kf, matches) = best.expect("nonempty candidates");

    let kf = &map.keyframes[&best_kf];
    let mut world: Vec<Vector3<f64>> = Vec::new();
    let mut pixels: Vec<Vector2<f64>> = Vec::new();
    for (qi, ci) in &matches {
        let Some(pid) = kf.point_links[*ci] else { continue };
        world.push(map.points[&pid].position);
        pixels.push(query.keypoints[*qi].position);
    }
    let pnp_cfg = PnpConfig {
        seed: config.seed ^ query.image_id,
        ..config.pnp
    };
    match solve_pnp_ransac(&world, &pixels, &map.camera, Some(&kf.pose), &pnp_cfg) {
        Ok(res) if res.num_inliers >= config.min_inliers => RelocResult {
            status: RelocStatus::Success,
            pose: Some(res.pose),
            best_keyframe: Some(best_kf),
            inliers: res.num_inliers,
            stage_ms: [0.0; 3],
            degraded_stage2: false,
        },
        Ok(res) => RelocResult {
            status: RelocStatus::InsufficientInliers,
            pose: Some(res.pose),
            best_keyframe: Some(best_kf),
            inliers: res.num_inliers,
            stage_ms: [0.0; 3],
            degraded_stage2: false,
        },
        Err(_) => RelocResult {
            status: RelocStatus::InsufficientInliers,
            pose: None,
            best_keyframe: Some(best_kf),
            inliers: 0,
            stage_ms: [0.0; 3],
            degraded_stage2: false,
        },
    }
}

/// The full three-stage pipeline with per-stage timings.
pub fn relocalize(query: &FrontendOutput, map: &SlamMap, config: &RelocConfig) -> RelocResult {
    let t0 = Instant::now();
    let candidates = stage1_retrieve(query, map, config);
    let t1 = Instant::now();
    let (survivors, degraded) = stage2_structure_filter(query, &candidates, map, config);
    let t2 = Instant::now();
    let mut result = stage3_match_and_pnp(query, &survivors, map, config);
    let t3 = Instant::now();
    result.stage_ms = [
        t1.duration_since(t0).as_secs_f64() * 1e3,
        t2.duration_since(t1).as_secs_f64() * 1e3,
        t3.duration_since(t2).as_secs_f64() * 1e3,
    ];
    result.degraded_stage2 = degraded;
    result
}

/// Runs a query batch and writes one report line per query:
/// `query_id status tx ty tz qx qy qz qw inliers t1_ms t2_ms t3_ms`
/// (pose camera-to-world; identity when no pose was estimated).
pub fn run_query_batch<W: Write>(
    queries: &[(String, FrontendOutput)],
    map: &SlamMap,
    config: &RelocConfig,
    mut out: W,
) -> std::io::Result<Vec<RelocResult>> {
    let mut results = Vec::with_capacity(queries.len());
    for (id, query) in queries {
        let result = relocalize(query, map, config);
        let wc = result
            .pose
            .map(|p| p.inverse())
            .unwrap_or_else(Pose::identity);
        let q = wc.rotation();
        let c = wc.translation();
        writeln!(
            out,
            "{} {} {:.6} {:.6} {:.6} {:.9} {:.9} {:.9} {:.9} {} {:.3} {:.3} {:.3}",
            id,
            result.status.as_str(),
            c.x,
            c.y,
            c.z,
            q.i,
            q.j,
            q.k,
            q.w,
            result.inliers,
            result.stage_ms[0],
            result.stage_ms[1],
            result.stage_ms[2],
        )?;
        results.push(result);
    }
    Ok(results)
}
