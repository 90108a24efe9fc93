//! Hierarchical k-means vocabulary tree with inverse-document-frequency
//! weights, and the L1 bag-of-words similarity.

use std::collections::BTreeMap;

use pl_features::Descriptor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{MapError, SlamMap};

#[derive(Clone, Debug, PartialEq)]
pub struct VocabNode {
    pub centroid: Vec<f32>,
    pub children: Vec<u32>,
    /// Word id when this node is a leaf.
    pub word: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VocabularyTree {
    pub branching: u32,
    pub depth: u32,
    pub dim: u32,
    pub nodes: Vec<VocabNode>,
    pub idf: Vec<f64>,
}

impl VocabularyTree {
    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    /// Descends the tree greedily to the closest leaf.
    pub fn quantize(&self, descriptor: &Descriptor) -> u32 {
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if let Some(word) = n.word {
                return word;
            }
            debug_assert!(!n.children.is_empty());
            let mut best = (f32::INFINITY, n.children[0]);
            for &child in &n.children {
                let d = sq_dist(&self.nodes[child as usize].centroid, descriptor.values());
                if d < best.0 {
                    best = (d, child);
                }
            }
            node = best.1 as usize;
        }
    }

    /// TF-IDF bag of words, L1-normalized.
    pub fn bow(&self, descriptors: impl Iterator<Item = impl AsRef<Descriptor>>) -> BowVector {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        let mut total = 0usize;
        for d in descriptors {
            *counts.entry(self.quantize(d.as_ref())).or_insert(0.0) += 1.0;
            total += 1;
        }
        if total == 0 {
            return BowVector::default();
        }
        let mut weights: BTreeMap<u32, f64> = counts
            .into_iter()
            .map(|(w, c)| (w, c / total as f64 * self.idf[w as usize]))
            .filter(|(_, v)| *v > 0.0)
            .collect();
        let sum: f64 = weights.values().sum();
        if sum > 0.0 {
            for v in weights.values_mut() {
                *v /= sum;
            }
        }
        BowVector { weights }
    }
}

fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Sparse L1-normalized word histogram.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BowVector {
    pub weights: BTreeMap<u32, f64>,
}

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// `s = 1 − ½‖a − b‖₁` over L1-normalized vectors, in [0, 1].
    /// Two empty vectors score 0 (no evidence).
    pub fn similarity(&self, other: &BowVector) -> f64 {
        if self.is_empty() || other.is_empty() {
            return 0.0;
        }
        let mut l1 = 0.0;
        let mut ia = self.weights.iter().peekable();
        let mut ib = other.weights.iter().peekable();
        loop {
            match (ia.peek(), ib.peek()) {
                (Some((wa, va)), Some((wb, vb))) => {
                    if wa == wb {
                        l1 += (*va - *vb).abs();
                        ia.next();
                        ib.next();
                    } else if wa < wb {
                        l1 += va.abs();
                        ia.next();
                    } else {
                        l1 += vb.abs();
                        ib.next();
                    }
                }
                (Some((_, va)), None) => {
                    l1 += va.abs();
                    ia.next();
                }
                (None, Some((_, vb))) => {
                    l1 += vb.abs();
                    ib.next();
                }
                (None, None) => break,
            }
        }
        (1.0 - 0.5 * l1).clamp(0.0, 1.0)
    }

    /// Shared word count with another vector.
    pub fn shared_words(&self, other: &BowVector) -> usize {
        self.weights
            .keys()
            .filter(|w| other.weights.contains_key(w))
            .count()
    }
}

/// Trains a hierarchical k-means tree (k-means++ seeding, deterministic for
/// a given seed). With fewer descriptors than branches the effective tree
/// is simply shallower.
pub fn train_vocabulary(
    descriptors: &[Descriptor],
    branching: u32,
    depth: u32,
    seed: u64,
) -> VocabularyTree {
    let dim = descriptors.first().map(|d| d.dim()).unwrap_or(0) as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![VocabNode {
        centroid: vec![0.0; dim as usize],
        children: Vec::new(),
        word: None,
    }];
    let refs: Vec<&Descriptor> = descriptors.iter().collect();
    let mut word_counts: Vec<usize> = Vec::new();
    split_node(
        0,
        &refs,
        branching as usize,
        depth,
        &mut nodes,
        &mut word_counts,
        &mut rng,
    );
    let total = descriptors.len().max(1) as f64;
    let idf = word_counts
        .iter()
        .map(|c| (total / (*c).max(1) as f64).ln().max(1e-3))
        .collect();
    VocabularyTree {
        branching,
        depth,
        dim,
        nodes,
        idf,
    }
}

fn split_node(
    node: usize,
    descriptors: &[&Descriptor],
    branching: usize,
    remaining_depth: u32,
    nodes: &mut Vec<VocabNode>,
    word_counts: &mut Vec<usize>,
    rng: &mut ChaCha8Rng,
) {
    if remaining_depth == 0 || descriptors.len() <= 1 || descriptors.len() <= branching {
        // Leaf: one word.
        let word = word_counts.len() as u32;
        nodes[node].word = Some(word);
        word_counts.push(descriptors.len());
        return;
    }
    let (centroids, assignment) = kmeans(descriptors, branching, rng);
    // All descriptors identical (or collapsed): stop splitting.
    let distinct = {
        let mut seen = [false; 64];
        let mut n = 0;
        for &a in &assignment {
            if !seen[a] {
                seen[a] = true;
                n += 1;
            }
        }
        n
    };
    if distinct <= 1 {
        let word = word_counts.len() as u32;
        nodes[node].word = Some(word);
        word_counts.push(descriptors.len());
        return;
    }
    for (c, centroid) in centroids.into_iter().enumerate() {
        let members: Vec<&Descriptor> = descriptors
            .iter()
            .zip(assignment.iter())
            .filter(|(_, a)| **a == c)
            .map(|(d, _)| *d)
            .collect();
        if members.is_empty() {
            continue;
        }
        let child = nodes.len();
        nodes.push(VocabNode {
            centroid,
            children: Vec::new(),
            word: None,
        });
        nodes[node].children.push(child as u32);
        split_node(
            child,
            &members,
            branching,
            remaining_depth - 1,
            nodes,
            word_counts,
            rng,
        );
    }
}

/// Lloyd's algorithm with k-means++ seeding.
fn kmeans(
    descriptors: &[&Descriptor],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Vec<f32>>, Vec<usize>) {
    let k = k.min(descriptors.len());
    let dim = descriptors[0].dim();

    // k-means++ seeding
    let mut centroids: Vec<Vec<f32>> = Vec::with_capacity(k);
    let first = rng.random_range(0..descriptors.len());
    centroids.push(descriptors[first].values().to_vec());
    let mut dist2: Vec<f32> = descriptors
        .iter()
        .map(|d| sq_dist(d.values(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = dist2.iter().map(|d| f64::from(*d)).sum();
        let chosen = if total <= 1e-20 {
            rng.random_range(0..descriptors.len())
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut idx = 0;
            for (i, d) in dist2.iter().enumerate() {
                target -= f64::from(*d);
                if target <= 0.0 {
                    idx = i;
                    break;
                }
            }
            idx
        };
        centroids.push(descriptors[chosen].values().to_vec());
        for (i, d) in descriptors.iter().enumerate() {
            dist2[i] = dist2[i].min(sq_dist(d.values(), centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; descriptors.len()];
    for _ in 0..25 {
        let mut changed = false;
        for (i, d) in descriptors.iter().enumerate() {
            let mut best = (f32::INFINITY, 0usize);
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_dist(d.values(), centroid);
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if assignment[i] != best.1 {
                assignment[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0f64; dim];
            let mut count = 0usize;
            for (i, d) in descriptors.iter().enumerate() {
                if assignment[i] == c {
                    for (s, v) in sum.iter_mut().zip(d.values()) {
                        *s += f64::from(*v);
                    }
                    count += 1;
                }
            }
            if count > 0 {
                for (dst, s) in centroid.iter_mut().zip(sum.iter()) {
                    *dst = (*s / count as f64) as f32;
                }
            }
        }
    }
    (centroids, assignment)
}

/// Junction → index of a keypoint coincident with it (within `radius_px`),
/// whose descriptor stands in for the junction.
pub fn junction_descriptor_indices(
    features: &pl_features::FrontendOutput,
    radius_px: f64,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (j_idx, junction) in features.junctions.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (k_idx, kp) in features.keypoints.iter().enumerate() {
            let d = (kp.position - junction.position).norm();
            if d <= radius_px && best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, k_idx));
            }
        }
        if let Some((_, k_idx)) = best {
            out.push((j_idx, k_idx));
        }
    }
    out
}

/// Trains the keypoint vocabulary (10 branches, 4 levels) on all keyframe
/// descriptors and fills each keyframe's bag of words.
pub fn build_keypoint_vocabulary(map: &mut SlamMap, seed: u64) -> Result<usize, MapError> {
    let descriptors: Vec<Descriptor> = map
        .keyframes
        .values()
        .flat_map(|kf| kf.features.keypoints.iter().map(|k| k.descriptor.clone()))
        .collect();
    if descriptors.is_empty() {
        return Err(MapError::Validation(
            "cannot train a keypoint vocabulary on an empty map".into(),
        ));
    }
    let vocab = train_vocabulary(&descriptors, 10, 4, seed);
    let ids: Vec<crate::KeyframeId> = map.keyframes.keys().copied().collect();
    for id in ids {
        let kf = map.keyframes.get_mut(&id).unwrap();
        let bow = vocab.bow(kf.features.keypoints.iter().map(|k| &k.descriptor));
        kf.bow = Some(bow);
    }
    let words = vocab.word_count();
    map.keypoint_vocabulary = Some(vocab);
    Ok(words)
}

/// Trains the scene-dependent junction vocabulary (10 branches, 3 levels)
/// on the descriptors of keypoints coincident with junctions; absent when
/// the map has no junctions (relocalization then degrades to keypoints
/// only).
pub fn build_junction_vocabulary(map: &mut SlamMap, seed: u64) -> Result<usize, MapError> {
    let mut descriptors = Vec::new();
    for kf in map.keyframes.values() {
        for (_, k_idx) in junction_descriptor_indices(&kf.features, 2.0) {
            descriptors.push(kf.features.keypoints[k_idx].descriptor.clone());
        }
    }
    if descriptors.is_empty() {
        map.junction_vocabulary = None;
        return Ok(0);
    }
    let vocab = train_vocabulary(&descriptors, 10, 3, seed);
    let ids: Vec<crate::KeyframeId> = map.keyframes.keys().copied().collect();
    for id in ids {
        let kf = map.keyframes.get_mut(&id).unwrap();
        let pairs = junction_descriptor_indices(&kf.features, 2.0);
        let bow = vocab.bow(
            pairs
                .iter()
                .map(|(_, k_idx)| &kf.features.keypoints[*k_idx].descriptor),
        );
        kf.junction_bow = Some(bow);
    }
    let words = vocab.word_count();
    map.junction_vocabulary = Some(vocab);
    Ok(words)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desc(values: &[f32]) -> Descriptor {
        Descriptor::new(values.to_vec())
    }

    #[test]
    fn two_clear_clusters_give_two_words() {
        let descriptors = vec![
            desc(&[1.0, 0.0]),
            desc(&[0.99, 0.01]),
            desc(&[0.0, 1.0]),
            desc(&[0.01, 0.99]),
        ];
        let vocab = train_vocabulary(&descriptors, 2, 1, 3);
        assert_eq!(vocab.word_count(), 2);
        let w0 = vocab.quantize(&descriptors[0]);
        assert_eq!(vocab.quantize(&descriptors[1]), w0);
        let w2 = vocab.quantize(&descriptors[2]);
        assert_eq!(vocab.quantize(&descriptors[3]), w2);
        assert_ne!(w0, w2);
    }

    #[test]
    fn identical_descriptors_collapse_to_one_word() {
        let descriptors = vec![desc(&[0.5, 0.5]); 10];
        let vocab = train_vocabulary(&descriptors, 3, 2, 0);
        let w: Vec<u32> = descriptors.iter().map(|d| vocab.quantize(d)).collect();
        assert!(w.iter().all(|x| *x == w[0]));
        assert_eq!(vocab.word_count(), 1);
    }

    #[test]
    fn seed_changes_permute_but_do_not_split_partitions() {
        // Three well-separated clusters; the assignment partition must not
        // depend on the seed.
        let mut descriptors = Vec::new();
        for k in 0..3 {
            for j in 0..5 {
                let mut v = vec![0.0f32; 6];
                v[k * 2] = 1.0;
                v[k * 2 + 1] = 0.05 * j as f32;
                descriptors.push(Descriptor::new(v));
            }
        }
        let va = train_vocabulary(&descriptors, 3, 1, 1);
        let vb = train_vocabulary(&descriptors, 3, 1, 99);
        let part = |v: &VocabularyTree| -> Vec<Vec<usize>> {
            let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, d) in descriptors.iter().enumerate() {
                groups.entry(v.quantize(d)).or_default().push(i);
            }
            let mut out: Vec<Vec<usize>> = groups.into_values().collect();
            out.sort();
            out
        };
        assert_eq!(part(&va), part(&vb));
    }

    #[test]
    fn every_descriptor_quantizes_to_a_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let descriptors: Vec<Descriptor> = (0..300)
            .map(|_| {
                Descriptor::new((0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())
            })
            .collect();
        let vocab = train_vocabulary(&descriptors, 4, 3, 8);
        assert!(vocab.word_count() <= 64);
        for d in &descriptors {
            let w = vocab.quantize(d);
            assert!((w as usize) < vocab.word_count());
        }
    }

    #[test]
    fn bow_similarity_hand_case() {
        let a = BowVector {
            weights: [(0u32, 0.5), (1, 0.5)].into_iter().collect(),
        };
        let b = BowVector {
            weights: [(1u32, 0.5), (2, 0.5)].into_iter().collect(),
        };
        assert_eq!(a.similarity(&b), 0.5);
        assert_eq!(a.similarity(&a), 1.0);
        let c = BowVector {
            weights: [(7u32, 1.0)].into_iter().collect(),
        };
        assert_eq!(a.similarity(&c), 0.0);
        // symmetric and bounded
        assert_eq!(a.similarity(&b), b.similarity(&a));
    }

    #[test]
    fn bow_weights_are_l1_normalized() {
        let descriptors = vec![desc(&[1.0, 0.0]), desc(&[0.9, 0.1]), desc(&[0.0, 1.0])];
        let vocab = train_vocabulary(&descriptors, 2, 1, 2);
        let bow = vocab.bow(descriptors.iter());
        let sum: f64 = bow.weights.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(bow.weights.values().all(|v| *v >= 0.0));
    }
}
