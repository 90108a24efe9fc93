//! Junction structure graphs: adjacency of matched junctions ("two
//! endpoints of the same line") and the structure similarity between the
//! query's and a candidate's graphs.

use pl_features::FrontendOutput;

/// Which structure term enters the combined similarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StructureMode {
    /// `S_G = Σ|q_ij − b_ij|` as printed in the scoring rule (counts
    /// disagreements).
    #[default]
    Literal,
    /// `S_G = Σ q_ij·b_ij` (counts agreements); the ablation benchmark
    /// uses this variant.
    Agreement,
    /// Structure term disabled: rank by `S_K + S_J` only.
    Off,
}

/// Adjacency over a matched-junction subset: `A[i][j] = 1` iff junctions i
/// and j terminate a common line. Symmetric with a zero diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct JunctionGraph {
    n: usize,
    adjacency: Vec<bool>,
}

impl JunctionGraph {
    /// Builds the graph for the given junction indices of a frame.
    pub fn build(features: &FrontendOutput, junction_indices: &[usize]) -> Self {
        let n = junction_indices.len();
        let mut adjacency = vec![false; n * n];
        for i in 0..n {
            let ji = &features.junctions[junction_indices[i]];
            for j in (i + 1)..n {
                let jj = &features.junctions[junction_indices[j]];
                let connected = ji
                    .line_ids
                    .iter()
                    .any(|line| jj.line_ids.contains(line));
                adjacency[i * n + j] = connected;
                adjacency[j * n + i] = connected;
            }
        }
        Self { n, adjacency }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn connected(&self, i: usize, j: usize) -> bool {
        self.adjacency[i * self.n + j]
    }
}

/// Structure similarity of two graphs over the same matched pairs.
pub fn structure_score(a: &JunctionGraph, b: &JunctionGraph, mode: StructureMode) -> f64 {
    debug_assert_eq!(a.n, b.n);
    let mut score = 0.0;
    for i in 0..a.n {
        for j in 0..a.n {
            if i == j {
                continue;
            }
            let qa = a.connected(i, j) as u32 as f64;
            let qb = b.connected(i, j) as u32 as f64;
            score += match mode {
                StructureMode::Literal => (qa - qb).abs(),
                StructureMode::Agreement => qa * qb,
                StructureMode::Off => 0.0,
            };
        }
    }
    score
}

/// The per-candidate similarity decomposition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityScore {
    /// Keypoint BoW score from stage 1.
    pub keypoint: f64,
    /// Junction BoW score.
    pub junction: f64,
    /// Structure graph score.
    pub structure: f64,
    /// Number of junction match pairs n.
    pub matches: usize,
}

impl SimilarityScore {
    /// `S = S_K + S_J (1 + S_G / n)` for n > 0, `S_K + S_J` otherwise.
    pub fn combined(&self) -> f64 {
        if self.matches == 0 {
            self.keypoint + self.junction
        } else {
            self.keypoint + self.junction * (1.0 + self.structure / self.matches as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;
    use pl_features::{Junction, LineSegment2D};

    fn frame_with_junctions(edges: &[(usize, usize)], n: usize) -> FrontendOutput {
        // One synthetic 2D line per edge; junction k carries the incident
        // line ids.
        let mut lines = Vec::new();
        let mut junctions: Vec<Junction> = (0..n)
            .map(|k| Junction {
                position: Vector2::new(10.0 * k as f64, 5.0),
                line_ids: Vec::new(),
            })
            .collect();
        for (idx, (a, b)) in edges.iter().enumerate() {
            lines.push(
                LineSegment2D::from_endpoints(
                    Vector2::new(10.0 * *a as f64, 5.0),
                    Vector2::new(10.0 * *b as f64, 5.1),
                )
                .unwrap(),
            );
            junctions[*a].line_ids.push(idx);
            junctions[*b].line_ids.push(idx);
        }
        FrontendOutput {
            image_id: 0,
            keypoints: Vec::new(),
            lines,
            junctions,
        }
    }

    #[test]
    fn adjacency_is_symmetric_with_zero_diagonal() {
        let frame = frame_with_junctions(&[(0, 1), (1, 2)], 3);
        let g = JunctionGraph::build(&frame, &[0, 1, 2]);
        for i in 0..3 {
            assert!(!g.connected(i, i));
            for j in 0..3 {
                assert_eq!(g.connected(i, j), g.connected(j, i));
            }
        }
        assert!(g.connected(0, 1));
        assert!(g.connected(1, 2));
        assert!(!g.connected(0, 2));
    }

    #[test]
    fn hand_case_two_matches_one_disagreement() {
        // n = 2: query has the edge, candidate does not.
        let query = frame_with_junctions(&[(0, 1)], 2);
        let candidate = frame_with_junctions(&[], 2);
        let gq = JunctionGraph::build(&query, &[0, 1]);
        let gb = JunctionGraph::build(&candidate, &[0, 1]);
        let s_g = structure_score(&gq, &gb, StructureMode::Literal);
        // both symmetric entries count
        assert_eq!(s_g, 2.0);
        let score = SimilarityScore {
            keypoint: 0.4,
            junction: 0.25,
            structure: s_g,
            matches: 2,
        };
        // S_K + S_J (1 + 2/2) = S_K + 2 S_J
        assert!((score.combined() - (0.4 + 2.0 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn structure_score_is_permutation_invariant() {
        let query = frame_with_junctions(&[(0, 1), (2, 3)], 4);
        let candidate = frame_with_junctions(&[(0, 1)], 4);
        let order_a = [0usize, 1, 2, 3];
        let order_b = [3usize, 2, 1, 0];
        let s_a = structure_score(
            &JunctionGraph::build(&query, &order_a),
            &JunctionGraph::build(&candidate, &order_a),
            StructureMode::Literal,
        );
        let s_b = structure_score(
            &JunctionGraph::build(&query, &order_b),
            &JunctionGraph::build(&candidate, &order_b),
            StructureMode::Literal,
        );
        assert_eq!(s_a, s_b);
    }

    #[test]
    fn zero_matches_convention() {
        let score = SimilarityScore {
            keypoint: 0.7,
            junction: 0.2,
            structure: 0.0,
            matches: 0,
        };
        assert!((score.combined() - 0.9).abs() < 1e-12);
    }
}
