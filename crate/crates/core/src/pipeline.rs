//! Whole-pipeline configuration and the per-frame preprocessing shared by
//! the command-line tool and the tests.

use serde::{Deserialize, Serialize};

use crate::bev::{rasterize, BevGrid, BevImage};
use crate::error::{Error, Result};
use crate::metrics::Dims;
use crate::pointcloud::{aggregate, filter_fov, remove_ground, transform, GroundCfg, PointCloud, RigidTransform};
use crate::registration::{IcpConfig, PairSelection, RecallThresholds};
use crate::sde::ScheduleConfig;
use crate::synth::SceneSpec;
use crate::training::TrainConfig;

/// Geometric preprocessing of raw frames before rasterization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Radar frames merged into each sample (current frame and its
    /// predecessors).
    pub aggregate_frames: usize,
    /// Shared field of view, as yaw `atan2(y, x)` bounds in degrees.
    pub fov_min_deg: f64,
    pub fov_max_deg: f64,
    pub remove_ground: bool,
    pub ground: GroundCfg,
    /// LiDAR-to-radar extrinsic as row-major `[R | t]`.
    pub lidar_to_radar: [f64; 12],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            aggregate_frames: 5,
            fov_min_deg: 30.0,
            fov_max_deg: 150.0,
            remove_ground: true,
            ground: GroundCfg::default(),
            lidar_to_radar: RigidTransform::identity().to_row_major(),
        }
    }
}

impl PreprocessConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    pub fn validate(&self) -> Result<()> {
        if self.aggregate_frames == 0 {
            return Err(Error::invalid("aggregate_frames must be at least 1"));
        }
        if !(self.fov_min_deg < self.fov_max_deg) {
            return Err(Error::invalid("fov_min_deg must be below fov_max_deg"));
        }
        self.extrinsic()?;
        Ok(())
    }

    pub fn extrinsic(&self) -> Result<RigidTransform> {
        let t = RigidTransform::from_row_major(&self.lidar_to_radar);
        RigidTransform::new(t.rotation, t.translation).ok_or_else(|| Error::invalid("lidar_to_radar is not a rigid transform"))
    }
}

/// LiDAR frame in radar coordinates with ground removed, restricted to the
/// shared FOV and the grid.
pub fn preprocess_lidar(cloud: &PointCloud, cfg: &PreprocessConfig, grid: &BevGrid) -> Result<PointCloud> {
    let aligned = transform(cloud, &cfg.extrinsic()?);
    let above = if cfg.remove_ground {
        remove_ground(&aligned, &cfg.ground)?
    } else {
        aligned
    };
    Ok(grid.crop(&filter_fov(&above, cfg.fov_min_deg, cfg.fov_max_deg)))
}

/// Indices of the radar frames aggregated into sample `i`.
pub fn radar_window(i: usize, frames: usize) -> std::ops::RangeInclusive<usize> {
    (i + 1).saturating_sub(frames)..=i
}

/// Radar frames `window` expressed in frame `i`, merged, then restricted
/// to the shared FOV and the grid.
pub fn preprocess_radar(
    clouds: &[PointCloud],
    poses: &[RigidTransform],
    i: usize,
    cfg: &PreprocessConfig,
    grid: &BevGrid,
) -> Result<PointCloud> {
    if clouds.len() != poses.len() {
        return Err(Error::invalid(format!("{} radar frames but {} poses", clouds.len(), poses.len())));
    }
    if i >= clouds.len() {
        return Err(Error::invalid(format!("frame {i} out of range")));
    }
    let to_current = poses[i].inverse();
    let frames: Vec<_> = radar_window(i, cfg.aggregate_frames)
        .map(|k| (clouds[k].clone(), to_current.compose(&poses[k])))
        .collect();
    let merged = aggregate(&frames);
    Ok(grid.crop(&filter_fov(&merged, cfg.fov_min_deg, cfg.fov_max_deg)))
}

/// Preprocessed clouds and images for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBev {
    pub lidar_cloud: PointCloud,
    pub radar_cloud: PointCloud,
    pub lidar: BevImage,
    pub radar: BevImage,
}

/// Preprocesses frame `i` of a sequence.
pub fn preprocess_frame(
    lidar: &[PointCloud],
    radar: &[PointCloud],
    poses: &[RigidTransform],
    i: usize,
    cfg: &PreprocessConfig,
    grid: &BevGrid,
) -> Result<FrameBev> {
    if lidar.len() != poses.len() {
        return Err(Error::invalid(format!("{} LiDAR frames but {} poses", lidar.len(), poses.len())));
    }
    let lidar_cloud = preprocess_lidar(&lidar[i], cfg, grid)?;
    let radar_cloud = preprocess_radar(radar, poses, i, cfg, grid)?;
    Ok(FrameBev {
        lidar: rasterize(&lidar_cloud, grid),
        radar: rasterize(&radar_cloud, grid),
        lidar_cloud,
        radar_cloud,
    })
}

/// Synthetic data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Independent sequences; sequence `k` uses seed `scene.seed + k`.
    pub sequences: usize,
    pub frames: usize,
    /// Forward motion per frame (m).
    pub step: f64,
    pub scene: SceneSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sequences: 1,
            frames: 10,
            step: 0.5,
            scene: SceneSpec::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sequences == 0 || self.frames == 0 {
            return Err(Error::invalid("synth needs at least one sequence and one frame"));
        }
        if !self.step.is_finite() {
            return Err(Error::invalid("synth step must be finite"));
        }
        self.scene.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub stochastic: bool,
    /// Back-projection emits a point for pixels strictly above this value.
    pub emit_threshold: f64,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            stochastic: true,
            emit_threshold: crate::bev::DEFAULT_EMIT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub dims: Vec<Dims>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dims: vec![Dims::Two, Dims::Three],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterConfig {
    pub icp: IcpConfig,
    pub thresholds: RecallThresholds,
    pub pairs: PairSelection,
    /// Standard deviation of the initial-guess offset per horizontal axis (m).
    pub init_trans_std: f64,
    /// Standard deviation of the initial-guess yaw error (degrees).
    pub init_yaw_std_deg: f64,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            icp: IcpConfig::default(),
            thresholds: RecallThresholds::default(),
            pairs: PairSelection::default(),
            init_trans_std: 0.5,
            init_yaw_std_deg: 3.0,
        }
    }
}

/// Every setting of every command, in one TOML document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: BevGrid,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub preprocess: PreprocessConfig,
    pub enhance: EnhanceConfig,
    pub eval: EvalConfig,
    pub register: RegisterConfig,
}

impl PipelineConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::format("pipeline config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    /// Copies the master seed into every section that owns a seed.
    pub fn propagate_seed(&mut self) {
        self.train.seed = self.seed;
        self.synth.scene.seed = self.seed;
        self.preprocess.ground.seed = self.seed;
    }

    /// Checks every section.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let sched = self.schedule.build()?;
        self.train.validate(&sched)?;
        self.synth.validate()?;
        self.preprocess.validate()?;
        if !(self.enhance.emit_threshold >= 0.0 && self.enhance.emit_threshold < 1.0) {
            return Err(Error::invalid("emit_threshold must lie in [0, 1)"));
        }
        if self.eval.dims.is_empty() {
            return Err(Error::invalid("eval.dims must not be empty"));
        }
        self.register.icp.validate()?;
        self.register.thresholds.validate()?;
        if !(self.register.init_trans_std >= 0.0 && self.register.init_yaw_std_deg >= 0.0) {
            return Err(Error::invalid("initial-guess noise must be non-negative"));
        }
        Ok(())
    }
}
