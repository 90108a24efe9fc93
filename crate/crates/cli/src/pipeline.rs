//! Shared orchestration between the CLI binary and the acceptance suite:
//! building the simulated sequence from a config, writing/reading feature
//! directories, running the offline optimization chain and the query
//! generation.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use pl_features::{write_frontend_output, Frontend, FrontendOutput, MatcherConfig, ViewId};
use pl_geometry::Pose;
use pl_map::{
    build_junction_vocabulary, build_keypoint_vocabulary, detect_loops, global_bundle_adjustment,
    merge_landmarks, GbaReport, LoopPair, MergeReport, SlamMap,
};
use pl_odometry::SequenceInfo;
use pl_simulator::{generate_world, MatchMode, SimFrontend, SimSequence, SimTrajectory};

use crate::config::Config;
use crate::CliError;

/// Builds the simulated mapping sequence described by the config.
pub fn build_sequence(config: &Config) -> Result<SimSequence, CliError> {
    let world = generate_world(&config.world_spec(), config.seed);
    let trajectory = SimTrajectory::orbit(
        Vector3::zeros(),
        config.trajectory.radius,
        config.trajectory.height,
        config.trajectory.laps,
        config.trajectory.control_points_per_lap,
        config.trajectory.seconds_per_lap,
    );
    Ok(SimSequence::build(
        world,
        trajectory,
        config.intrinsics()?,
        config.trajectory.camera_hz,
        config.trajectory.imu_hz,
        config.observation_model(config.observation.night_level),
        MatchMode::Descriptor(MatcherConfig {
            ratio: config.vo.matcher_ratio,
        }),
        config.seed ^ 0x51,
    ))
}

/// Writes the sequence as feature files plus IMU text, ground truth and a
/// sequence manifest.
pub fn write_sequence(seq: &mut SimSequence, directory: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(directory)?;
    let n = seq.frontend.num_frames();
    for frame in 0..n {
        for (view, name) in [
            (ViewId::left(frame), crate::file_frontend::left_file_name(frame)),
            (
                ViewId::right(frame),
                crate::file_frontend::right_file_name(frame),
            ),
        ] {
            let output = seq.frontend.detect(view);
            let file = std::fs::File::create(directory.join(name))?;
            write_frontend_output(std::io::BufWriter::new(file), &output)
                .map_err(|e| CliError::Eval(format!("feature write: {e}")))?;
        }
    }
    let imu_file = std::fs::File::create(directory.join("imu.txt"))?;
    pl_imu::io::write_imu_text(std::io::BufWriter::new(imu_file), &seq.imu)?;

    let gt: Vec<(f64, Pose)> = seq
        .timestamps
        .iter()
        .zip(seq.gt_poses_cw.iter())
        .map(|(t, p)| (*t, *p))
        .collect();
    let gt_file = std::fs::File::create(directory.join("groundtruth.tum"))?;
    pl_odometry::write_tum(std::io::BufWriter::new(gt_file), &gt)?;

    let mut manifest = std::fs::File::create(directory.join("sequence.toml"))?;
    writeln!(manifest, "frames = {n}")?;
    writeln!(manifest, "timestamps = {:?}", seq.timestamps)?;
    Ok(())
}

/// Reads the manifest back into a [`SequenceInfo`].
pub fn read_sequence_info(
    directory: &Path,
    gravity: Vector3<f64>,
) -> Result<SequenceInfo, CliError> {
    let manifest = std::fs::read_to_string(directory.join("sequence.toml"))
        .map_err(|e| CliError::Config(format!("missing sequence manifest: {e}")))?;
    let mut timestamps = Vec::new();
    for line in manifest.lines() {
        if let Some(rest) = line.strip_prefix("timestamps = [") {
            let body = rest.trim_end_matches(']');
            timestamps = body
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::Config(format!("bad manifest: {e}")))?;
        }
    }
    if timestamps.is_empty() {
        return Err(CliError::Config("manifest lists no timestamps".into()));
    }
    let imu_path = directory.join("imu.txt");
    let imu = if imu_path.exists() {
        let file = std::fs::File::open(imu_path)?;
        pl_imu::io::read_imu_text(std::io::BufReader::new(file))
            .map_err(|e| CliError::Config(format!("imu stream: {e}")))?
    } else {
        Vec::new()
    };
    Ok(SequenceInfo {
        timestamps,
        imu,
        gravity,
    })
}

#[derive(Debug)]
pub struct OptimizeSummary {
    pub keypoint_words: usize,
    pub junction_words: usize,
    pub loops: Vec<LoopPair>,
    pub merge: MergeReport,
    pub gba: GbaReport,
}

/// The offline optimization chain: keypoint vocabulary, loop detection,
/// landmark merging, (PGO-triggered) global bundle adjustment and the
/// scene-dependent junction vocabulary.
pub fn optimize_map(map: &mut SlamMap, config: &Config) -> Result<OptimizeSummary, CliError> {
    let keypoint_words = build_keypoint_vocabulary(map, config.seed ^ 0xB0)
        .map_err(|e| CliError::Eval(format!("vocabulary: {e}")))?;
    let loops = detect_loops(map, &config.loop_config());
    let merge = merge_landmarks(map, &loops);
    let gba = global_bundle_adjustment(map, &loops, &config.gba_config());
    let junction_words = build_junction_vocabulary(map, config.seed ^ 0xB1)
        .map_err(|e| CliError::Eval(format!("junction vocabulary: {e}")))?;
    Ok(OptimizeSummary {
        keypoint_words,
        junction_words,
        loops,
        merge,
        gba,
    })
}

/// Generates the relocalization query batch: views at the configured
/// degraded level from poses nudged off the mapped trajectory. Returns
/// `(id, features, ground-truth pose)` triples.
pub fn generate_queries(
    config: &Config,
) -> Result<Vec<(String, FrontendOutput, Pose)>, CliError> {
    let world = generate_world(&config.world_spec(), config.seed);
    let trajectory = SimTrajectory::orbit(
        Vector3::zeros(),
        config.trajectory.radius,
        config.trajectory.height,
        config.trajectory.laps,
        config.trajectory.control_points_per_lap,
        config.trajectory.seconds_per_lap,
    );
    let mut frontend = SimFrontend::new(
        world,
        trajectory,
        config.intrinsics()?,
        config.trajectory.camera_hz,
        config.observation_model(config.observation.query_night_level),
        MatchMode::Descriptor(MatcherConfig {
            ratio: config.vo.matcher_ratio,
        }),
        config.seed ^ 0x9E17,
    );
    let frames = frontend.num_frames();
    let count = config.observation.query_count.min(frames);
    let mut out = Vec::new();
    for q in 0..count {
        let frame = (q * frames) / count.max(1);
        let gt = frontend.gt_pose_cw(ViewId::left(frame));
        let nudge = pl_geometry::se3::exp(&nalgebra::Vector6::new(
            0.08 * ((q % 5) as f64 - 2.0),
            0.05 * ((q % 3) as f64 - 1.0),
            0.06,
            0.0,
            0.0,
            0.02 * ((q % 4) as f64 - 1.5),
        ));
        let pose = nudge.compose(&gt);
        let features = frontend.detect_at_pose(&pose, 20_000 + q as u64);
        out.push((format!("q{q:03}"), features, pose));
    }
    Ok(out)
}
