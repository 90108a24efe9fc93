//! The stereo visual(-inertial) odometry pipeline: feature tracking against
//! the last keyframe, RANSAC pose estimation, keyframe selection, stereo
//! and two-view landmark triangulation, IMU preintegration and windowed
//! local bundle adjustment. Output is an initial map plus the per-frame
//! trajectory.

mod imu_init;
mod keyframe;
mod stereo;
mod trajectory_io;
mod vo;

pub use imu_init::{initialize_imu, ImuInit, ImuInitConfig, ImuInitError};
pub use keyframe::{select_keyframe, KeyframePolicy, TrackStats};
pub use stereo::{filter_stereo_matches, stereo_triangulate_point, StereoMatchConfig};
pub use trajectory_io::{read_tum, write_tum};
pub use vo::{run_vo, run_vo_pipelined, SequenceInfo, VoConfig, VoOutput, VoReport};

#[derive(Debug, thiserror::Error)]
pub enum VoError {
    #[error("sequence is empty")]
    EmptySequence,
    #[error(transparent)]
    Imu(#[from] pl_imu::ImuError),
    #[error(transparent)]
    Map(#[from] pl_map::MapError),
    #[error("trajectory file format error: {0}")]
    TrajectoryFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
