//! Synthetic ground-truth world, trajectories, IMU streams and oracle
//! feature observations: the verification backbone for the SLAM stack.
//!
//! All randomness flows from explicit seeds; identical seeds give identical
//! output.

mod frontend;
mod observe;
mod trajectory;
mod world;

pub use frontend::{MatchMode, SimFrontend, SimSequence};
pub use observe::{
    brightness_levels, gamma_transform, night_mode, observe, BrightnessLevel, GroundTruthLinks,
    ObservationModel,
};
pub use trajectory::{SimTrajectory, TrajectoryError};
pub use world::{generate_world, SimWorld, WorldLine, WorldPoint, WorldSpec, WorldVertex};

/// Derives a per-image RNG seed from the base seed.
pub(crate) fn derive_seed(base: u64, stream: u64) -> u64 {
    // splitmix64 step
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
