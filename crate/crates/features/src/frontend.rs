//! The pluggable frontend contract that stands in for learned detection and
//! matching networks, plus the descriptor matcher shared by its
//! implementations.

use crate::{FrontendOutput, Keypoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CameraSide {
    Left,
    Right,
}

/// Identifies one image of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ViewId {
    pub frame: usize,
    pub side: CameraSide,
}

impl ViewId {
    pub fn left(frame: usize) -> Self {
        Self {
            frame,
            side: CameraSide::Left,
        }
    }

    pub fn right(frame: usize) -> Self {
        Self {
            frame,
            side: CameraSide::Right,
        }
    }

    /// Stable image id for outputs and file names.
    pub fn image_id(&self) -> u64 {
        2 * self.frame as u64
            + match self.side {
                CameraSide::Left => 0,
                CameraSide::Right => 1,
            }
    }
}

/// Feature detection and matching abstraction. Implementations must be
/// deterministic given their seed; stateful caches are allowed, so a given
/// instance is used from one thread at a time.
pub trait Frontend {
    fn detect(&mut self, view: ViewId) -> FrontendOutput;

    /// Returns keypoint index pairs `(index in a, index in b)`.
    fn match_features(&mut self, a: &FrontendOutput, b: &FrontendOutput) -> Vec<(usize, usize)>;
}

#[derive(Clone, Copy, Debug)]
pub struct MatcherConfig {
    /// Lowe ratio: the best distance must be below `ratio` times the second
    /// best.
    pub ratio: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { ratio: 0.8 }
    }
}

/// Mutual nearest-neighbor descriptor matching with a ratio test.
pub fn match_descriptors(
    a: &[Keypoint],
    b: &[Keypoint],
    config: &MatcherConfig,
) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let nearest = |from: &[Keypoint], to: &[Keypoint]| -> Vec<Option<usize>> {
        from.iter()
            .map(|kp| {
                let mut best = (f32::INFINITY, usize::MAX);
                let mut second = f32::INFINITY;
                for (j, other) in to.iter().enumerate() {
                    let d = kp.descriptor.distance(&other.descriptor);
                    if d < best.0 {
                        second = best.0;
                        best = (d, j);
                    } else if d < second {
                        second = d;
                    }
                }
                if best.1 == usize::MAX {
                    return None;
                }
                if second.is_finite() && f64::from(best.0) >= config.ratio * f64::from(second) {
                    return None;
                }
                Some(best.1)
            })
            .collect()
    };
    let ab = nearest(a, b);
    let ba = nearest(b, a);
    ab.iter()
        .enumerate()
        .filter_map(|(i, j)| {
            let j = (*j)?;
            (ba[j] == Some(i)).then_some((i, j))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Descriptor;
    use nalgebra::Vector2;

    fn kp(desc: Vec<f32>) -> Keypoint {
        Keypoint {
            position: Vector2::zeros(),
            descriptor: Descriptor::new(desc),
            score: 1.0,
        }
    }

    #[test]
    fn mutual_nn_matches_identical_sets() {
        let a = vec![kp(vec![1.0, 0.0, 0.0]), kp(vec![0.0, 1.0, 0.0])];
        let b = vec![kp(vec![0.0, 1.0, 0.1]), kp(vec![1.0, 0.1, 0.0])];
        let m = match_descriptors(&a, &b, &MatcherConfig::default());
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ratio_test_rejects_ambiguous() {
        let a = vec![kp(vec![1.0, 0.0])];
        // Two nearly identical candidates: ambiguous.
        let b = vec![kp(vec![1.0, 0.01]), kp(vec![1.0, -0.01])];
        let m = match_descriptors(&a, &b, &MatcherConfig::default());
        assert!(m.is_empty());
    }

    #[test]
    fn empty_inputs_match_nothing() {
        let a = vec![kp(vec![1.0, 0.0])];
        assert!(match_descriptors(&a, &[], &MatcherConfig::default()).is_empty());
        assert!(match_descriptors(&[], &a, &MatcherConfig::default()).is_empty());
    }
}
