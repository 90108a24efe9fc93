//! Keyframe selection: a frame is promoted when tracking against the
//! reference keyframe weakens or the viewpoint has moved on.

/// Thresholds and the reference-keyframe context the decision is made in.
#[derive(Clone, Copy, Debug)]
pub struct KeyframePolicy {
    /// Tracked-feature fraction threshold α₁.
    pub alpha1: f64,
    /// Parallax threshold factor α₂ (against √(W·H)).
    pub alpha2: f64,
    /// Absolute tracked-feature floor N_kf.
    pub min_tracked: usize,
    /// Detected feature count of the reference keyframe (N_s).
    pub reference_features: usize,
    pub width: u32,
    pub height: u32,
}

impl KeyframePolicy {
    pub fn thresholds(alpha1: f64, alpha2: f64, min_tracked: usize) -> KeyframeThresholds {
        KeyframeThresholds {
            alpha1,
            alpha2,
            min_tracked,
        }
    }
}

/// The configuration part of the policy, without the per-reference context.
#[derive(Clone, Copy, Debug)]
pub struct KeyframeThresholds {
    pub alpha1: f64,
    pub alpha2: f64,
    pub min_tracked: usize,
}

impl Default for KeyframeThresholds {
    fn default() -> Self {
        Self {
            alpha1: 0.65,
            alpha2: 0.1,
            min_tracked: 80,
        }
    }
}

impl KeyframeThresholds {
    pub fn with_reference(
        &self,
        reference_features: usize,
        width: u32,
        height: u32,
    ) -> KeyframePolicy {
        KeyframePolicy {
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            min_tracked: self.min_tracked,
            reference_features,
            width,
            height,
        }
    }
}

/// Statistics of matching the current frame against the last keyframe.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrackStats {
    pub tracked: usize,
    /// Mean pixel displacement of the matched keypoints.
    pub mean_parallax: f64,
}

/// True when any promotion rule fires: too few tracked features relative to
/// the reference, large average parallax, or too few tracked features in
/// absolute terms.
pub fn select_keyframe(stats: &TrackStats, policy: &KeyframePolicy) -> bool {
    let few_relative = (stats.tracked as f64) < policy.alpha1 * policy.reference_features as f64;
    let diag = (f64::from(policy.width) * f64::from(policy.height)).sqrt();
    let large_parallax = stats.mean_parallax > policy.alpha2 * diag;
    let few_absolute = stats.tracked < policy.min_tracked;
    few_relative || large_parallax || few_absolute
}
