//! One TOML file carries every constant of the pipeline; reports embed its
//! SHA-256 so results stay traceable to the exact configuration.

use nalgebra::Vector3;
use pl_features::{LineMatchConfig, MatcherConfig};
use pl_geometry::pnp::PnpConfig;
use pl_geometry::CameraIntrinsics;
use pl_imu::{ImuBias, ImuNoise};
use pl_map::{GbaConfig, LoopConfig, PgoConfig};
use pl_odometry::{ImuInitConfig, StereoMatchConfig, VoConfig};
use pl_reloc::{RelocConfig, StructureMode};
use pl_simulator::{ObservationModel, WorldSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub camera: CameraSection,
    pub world: WorldSection,
    pub trajectory: TrajectorySection,
    pub observation: ObservationSection,
    pub vo: VoSection,
    pub imu: ImuSection,
    pub map_optimization: MapOptSection,
    pub relocalization: RelocSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 7,
            camera: CameraSection::default(),
            world: WorldSection::default(),
            trajectory: TrajectorySection::default(),
            observation: ObservationSection::default(),
            vo: VoSection::default(),
            imu: ImuSection::default(),
            map_optimization: MapOptSection::default(),
            relocalization: RelocSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSection {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub baseline: f64,
}

impl Default for CameraSection {
    fn default() -> Self {
        Self {
            fx: 400.0,
            fy: 400.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
            baseline: 0.12,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSection {
    pub boxes: usize,
    pub extent: f64,
    pub free_points: usize,
    pub points_per_edge: usize,
    pub descriptor_dim: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        let spec = WorldSpec::default();
        Self {
            boxes: spec.box_count,
            extent: spec.extent,
            free_points: spec.free_points,
            points_per_edge: spec.points_per_edge,
            descriptor_dim: spec.descriptor_dim,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    pub radius: f64,
    pub height: f64,
    pub laps: usize,
    pub control_points_per_lap: usize,
    pub seconds_per_lap: f64,
    pub camera_hz: f64,
    pub imu_hz: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            radius: 6.0,
            height: 0.4,
            laps: 2,
            control_points_per_lap: 16,
            seconds_per_lap: 30.0,
            camera_hz: 3.4,
            imu_hz: 68.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    pub pixel_sigma: f64,
    pub descriptor_sigma: f64,
    pub dropout: f64,
    pub min_line_px: f64,
    /// Brightness level of the mapping sequence (0 = unchanged).
    pub night_level: usize,
    /// Brightness level used when generating relocalization queries.
    pub query_night_level: usize,
    /// Query count for the generated relocalization batch.
    pub query_count: usize,
    pub imu_noise_on: bool,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
}

impl Default for ObservationSection {
    fn default() -> Self {
        Self {
            pixel_sigma: 1.0,
            descriptor_sigma: 0.05,
            dropout: 0.0,
            min_line_px: 20.0,
            night_level: 0,
            query_night_level: 6,
            query_count: 16,
            imu_noise_on: false,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoSection {
    pub alpha1: f64,
    pub alpha2: f64,
    pub min_tracked: usize,
    pub window: usize,
    pub pnp_iterations: usize,
    pub pnp_threshold_px: f64,
    pub pnp_min_inliers: usize,
    pub line_score_threshold: f64,
    pub line_min_shared: usize,
    pub association_px: f64,
    pub matcher_ratio: f64,
    pub pixel_sigma: f64,
    pub huber_px: f64,
    pub local_ba_iterations: usize,
    pub use_imu: bool,
    pub stereo_max_row_diff: f64,
    pub stereo_min_disparity: f64,
}

impl Default for VoSection {
    fn default() -> Self {
        Self {
            alpha1: 0.65,
            alpha2: 0.1,
            min_tracked: 80,
            window: 8,
            pnp_iterations: 200,
            pnp_threshold_px: 3.0,
            pnp_min_inliers: 20,
            line_score_threshold: 0.6,
            line_min_shared: 3,
            association_px: 3.0,
            matcher_ratio: 0.8,
            pixel_sigma: 1.0,
            huber_px: 2.0,
            local_ba_iterations: 12,
            use_imu: false,
            stereo_max_row_diff: 2.0,
            stereo_min_disparity: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSection {
    pub gyro_density: f64,
    pub accel_density: f64,
    pub gyro_walk: f64,
    pub accel_walk: f64,
    pub gravity_magnitude: f64,
    pub init_min_keyframes: usize,
}

impl Default for ImuSection {
    fn default() -> Self {
        let noise = ImuNoise::default();
        Self {
            gyro_density: noise.gyro_density,
            accel_density: noise.accel_density,
            gyro_walk: noise.gyro_walk,
            accel_walk: noise.accel_walk,
            gravity_magnitude: 9.81,
            init_min_keyframes: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapOptSection {
    pub loop_score_ratio: f64,
    pub loop_group_min_shared: u32,
    pub loop_top_groups: usize,
    pub loop_min_inliers: usize,
    /// Candidates sharing at least this many landmarks count as connected
    /// (production value 1; synthetic worlds keep a few perpetual tracks).
    pub covisibility_exclusion: u32,
    pub gba_first_iterations: usize,
    pub gba_second_iterations: usize,
    pub pgo_point_trigger: usize,
    pub pgo_iterations: usize,
    pub chi2_gate: f64,
}

impl Default for MapOptSection {
    fn default() -> Self {
        Self {
            loop_score_ratio: 0.3,
            loop_group_min_shared: 10,
            loop_top_groups: 3,
            loop_min_inliers: 50,
            covisibility_exclusion: 20,
            gba_first_iterations: 50,
            gba_second_iterations: 40,
            pgo_point_trigger: 80_000,
            pgo_iterations: 50,
            chi2_gate: 5.99,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelocSection {
    pub score_ratio: f64,
    pub group_min_shared: u32,
    pub top_candidates: usize,
    pub min_inliers: usize,
    /// "literal", "agreement" or "off".
    pub structure_mode: String,
    pub junction_radius_px: f64,
}

impl Default for RelocSection {
    fn default() -> Self {
        Self {
            score_ratio: 0.3,
            group_min_shared: 10,
            top_candidates: 3,
            min_inliers: 20,
            structure_mode: "literal".into(),
            junction_radius_px: 2.0,
        }
    }
}

impl Config {
    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{e}")))
    }

    /// SHA-256 of the canonical serialized form.
    pub fn hash(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics, CliError> {
        CameraIntrinsics::new(
            self.camera.fx,
            self.camera.fy,
            self.camera.cx,
            self.camera.cy,
            self.camera.width,
            self.camera.height,
            self.camera.baseline,
        )
        .map_err(|e| CliError::Config(format!("camera: {e}")))
    }

    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            box_count: self.world.boxes,
            extent: self.world.extent,
            free_points: self.world.free_points,
            points_per_edge: self.world.points_per_edge,
            descriptor_dim: self.world.descriptor_dim,
        }
    }

    pub fn imu_noise(&self) -> ImuNoise {
        ImuNoise {
            gyro_density: self.imu.gyro_density,
            accel_density: self.imu.accel_density,
            gyro_walk: self.imu.gyro_walk,
            accel_walk: self.imu.accel_walk,
        }
    }

    pub fn observation_model(&self, night_level: usize) -> ObservationModel {
        let base = ObservationModel {
            pixel_sigma: self.observation.pixel_sigma,
            descriptor_sigma: self.observation.descriptor_sigma,
            dropout: self.observation.dropout,
            min_line_px: self.observation.min_line_px,
            imu_noise: self.imu_noise(),
            imu_noise_on: self.observation.imu_noise_on,
            imu_bias: ImuBias::new(
                Vector3::from_column_slice(&self.observation.gyro_bias),
                Vector3::from_column_slice(&self.observation.accel_bias),
            ),
            ..Default::default()
        };
        pl_simulator::night_mode(&base, night_level)
    }

    pub fn vo_config(&self) -> Result<VoConfig, CliError> {
        let mut config = VoConfig::new(self.intrinsics()?);
        config.keyframe.alpha1 = self.vo.alpha1;
        config.keyframe.alpha2 = self.vo.alpha2;
        config.keyframe.min_tracked = self.vo.min_tracked;
        config.window = self.vo.window;
        config.pnp = PnpConfig {
            iterations: self.vo.pnp_iterations,
            inlier_threshold_px: self.vo.pnp_threshold_px,
            min_inliers: self.vo.pnp_min_inliers,
            refine_iterations: 10,
            seed: self.seed,
        };
        config.line_match = LineMatchConfig {
            delta_s: self.vo.line_score_threshold,
            delta_n: self.vo.line_min_shared,
            association_px: self.vo.association_px,
        };
        config.stereo = StereoMatchConfig {
            max_row_diff: self.vo.stereo_max_row_diff,
            min_disparity: self.vo.stereo_min_disparity,
        };
        config.pixel_sigma = self.vo.pixel_sigma;
        config.huber_px = self.vo.huber_px;
        config.local_ba_iterations = self.vo.local_ba_iterations;
        config.use_imu = self.vo.use_imu;
        config.imu_noise = self.imu_noise();
        config.imu_init = ImuInitConfig {
            min_keyframes: self.imu.init_min_keyframes,
            gravity_magnitude: self.imu.gravity_magnitude,
            ..Default::default()
        };
        config.seed = self.seed;
        config.config_hash = self.hash();
        Ok(config)
    }

    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            score_ratio: self.map_optimization.loop_score_ratio,
            group_min_shared: self.map_optimization.loop_group_min_shared,
            top_groups: self.map_optimization.loop_top_groups,
            min_inliers: self.map_optimization.loop_min_inliers,
            covisibility_exclusion: self.map_optimization.covisibility_exclusion,
            matcher: MatcherConfig {
                ratio: self.vo.matcher_ratio,
            },
            pnp: PnpConfig {
                min_inliers: 4,
                seed: self.seed,
                ..Default::default()
            },
        }
    }

    pub fn gba_config(&self) -> GbaConfig {
        GbaConfig {
            first_iterations: self.map_optimization.gba_first_iterations,
            second_iterations: self.map_optimization.gba_second_iterations,
            pgo_point_trigger: self.map_optimization.pgo_point_trigger,
            pixel_sigma: self.vo.pixel_sigma,
            huber_px: self.vo.huber_px,
            chi2_gate: self.map_optimization.chi2_gate,
        }
    }

    pub fn pgo_config(&self) -> PgoConfig {
        PgoConfig {
            max_iterations: self.map_optimization.pgo_iterations,
        }
    }

    pub fn reloc_config(&self) -> Result<RelocConfig, CliError> {
        let structure_mode = match self.relocalization.structure_mode.as_str() {
            "literal" => StructureMode::Literal,
            "agreement" => StructureMode::Agreement,
            "off" => StructureMode::Off,
            other => {
                return Err(CliError::Config(format!(
                    "unknown structure mode {other:?} (literal|agreement|off)"
                )))
            }
        };
        Ok(RelocConfig {
            score_ratio: self.relocalization.score_ratio,
            group_min_shared: self.relocalization.group_min_shared,
            top_candidates: self.relocalization.top_candidates,
            min_inliers: self.relocalization.min_inliers,
            structure_mode,
            junction_radius_px: self.relocalization.junction_radius_px,
            matcher: MatcherConfig {
                ratio: self.vo.matcher_ratio,
            },
            pnp: PnpConfig {
                min_inliers: 4,
                seed: self.seed,
                ..Default::default()
            },
            seed: self.seed,
        })
    }
}
