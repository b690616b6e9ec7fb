//! Radar point-cloud super-resolution.
//!
//! Sparse radar clouds and dense LiDAR clouds are rasterized into
//! bird's-eye-view height images. A mean-reverting diffusion process maps
//! LiDAR images onto radar images; a conditional denoiser trained with a
//! masked residual objective runs that process backwards to turn radar
//! images into LiDAR-like ones. Metrics and a registration benchmark
//! evaluate the result in 3D.

pub mod bev;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod pointcloud;
pub mod registration;
pub mod score_model;
pub mod sde;
pub mod synth;
pub mod training;

pub use bev::{back_project, mask_of, rasterize, BevGrid, BevImage, Masks};
pub use error::{Error, Result};
pub use pointcloud::{aggregate, filter_fov, remove_ground, transform, GroundCfg, Point3, PointCloud, RigidTransform};
pub use score_model::{DenoiserArch, DenoiserModel, Head, OracleModel, ScoreModel};
pub use training::{train, LrSchedule, Optimizer, TrainConfig, TrainSample};
pub use sde::{enhance, EnhanceOptions, NoiseSchedule, ScheduleConfig, ScheduleKind};
