//! Geometric core of scene-aware egocentric 3D pose estimation with a
//! head-mounted fisheye camera.
//!
//! The crate covers the non-learned parts of the pipeline: the fisheye
//! projection, lifting 2D features and scene depth into a voxel volume under
//! the camera, soft-argmax readout of 3D joint heatmaps, depth inpainting,
//! pose and plausibility metrics, a scene-contact pose optimizer, and a
//! synthetic ray-cast scene generator that provides ground truth for all of it.

pub mod camera;
pub mod container;
pub mod depth;
pub mod error;
pub mod io;
pub mod metrics;
pub mod optimizer;
pub mod pipeline;
pub mod pose;
pub mod spatial;
pub mod synth;
pub mod voxel;

pub use camera::{FisheyeModel, RadialMap};
pub use depth::{DepthMap, SegMask};
pub use error::{Error, Result};
pub use pose::{HeatmapVolume, Pose};
pub use voxel::{FeatureMap, FeatureVolume, OccupancyVolume, VoxelGridParams};
