//! End-to-end geometric pipeline: lift features and scene depth into the
//! voxel volume, map the volume to joint heatmaps, read out joints.

use nalgebra::Point3;
use rayon::prelude::*;
use serde::Serialize;

use crate::camera::FisheyeModel;
use crate::depth::{depth_to_pointcloud, DepthMap};
use crate::error::{Error, Result};
use crate::pose::{render_gaussian_heatmaps, soft_argmax, soft_argmax_weights, HeatmapVolume, Pose};
use crate::voxel::{
    aggregate_volumes, lift_features, project_voxels, voxel_centers, voxelize_points, FeatureMap, FeatureVolume,
    OccupancyVolume, VolumeMerge, VoxelGridParams,
};

/// Volumes handed to the heatmap stage.
pub struct StageInputs<'a> {
    /// Lifted body features, absent when running from a ground-truth pose.
    pub body: Option<&'a FeatureVolume>,
    pub scene: &'a OccupancyVolume,
    /// Body features merged with the scene occupancy.
    pub merged: Option<&'a FeatureVolume>,
    pub params: &'a VoxelGridParams,
}

/// Maps the encoded volumes to per-joint 3D heatmaps.
pub trait VolumeToHeatmaps: Sync {
    fn heatmaps(&self, inputs: &StageInputs<'_>) -> Result<HeatmapVolume>;
}

/// Renders Gaussians around a known pose, ignoring the volumes.
#[derive(Debug, Clone)]
pub struct GaussianOracle {
    pub pose: Pose,
    pub sigma: f64,
}

impl VolumeToHeatmaps for GaussianOracle {
    fn heatmaps(&self, inputs: &StageInputs<'_>) -> Result<HeatmapVolume> {
        render_gaussian_heatmaps(&self.pose, inputs.params, self.sigma)
    }
}

pub enum PipelineInput<'a> {
    Features(&'a FeatureMap),
    GroundTruth(&'a Pose),
}

#[derive(Debug, Clone, Copy)]
pub struct PipelineConfig {
    pub params: VoxelGridParams,
    pub sigma: f64,
    pub beta: f64,
    pub merge: VolumeMerge,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            params: VoxelGridParams::standard(),
            sigma: 0.05,
            beta: 200.0,
            merge: VolumeMerge::Concat,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub occupied_voxels: usize,
    pub scene_points: usize,
    /// Largest softmax weight per joint.
    pub peak_sharpness: Vec<f64>,
    /// Ground-truth joints lying outside the voxel box.
    pub out_of_volume: Vec<usize>,
    /// Voxels whose centers project into the image, when features were lifted.
    pub projected_voxels: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub pose: Pose,
    pub heatmaps: HeatmapVolume,
    pub scene: OccupancyVolume,
    pub diagnostics: Diagnostics,
}

/// Runs the pipeline. Without an explicit `stage`, ground-truth input uses a
/// [`GaussianOracle`] with `config.sigma`; feature input requires a stage.
pub fn run_pipeline(
    input: PipelineInput<'_>,
    scene_depth: &DepthMap,
    model: &FisheyeModel,
    config: &PipelineConfig,
    stage: Option<&dyn VolumeToHeatmaps>,
) -> Result<PipelineOutput> {
    let params = &config.params;
    if (scene_depth.width(), scene_depth.height()) != model.image_size() {
        return Err(Error::shape(
            format!("{}x{}", model.width(), model.height()),
            format!("{}x{}", scene_depth.width(), scene_depth.height()),
        ));
    }

    let (body, projected_voxels) = match input {
        PipelineInput::Features(features) => {
            if (features.width(), features.height()) != model.image_size() {
                return Err(Error::shape(
                    format!("{}x{}", model.width(), model.height()),
                    format!("{}x{}", features.width(), features.height()),
                ));
            }
            let projected = project_voxels(model, &voxel_centers(params));
            let count = projected.valid_count();
            (Some(lift_features(features, &projected)?), Some(count))
        }
        PipelineInput::GroundTruth(_) => (None, None),
    };

    let cloud = depth_to_pointcloud(model, scene_depth);
    let scene = voxelize_points(&cloud, params);
    let merged = body
        .as_ref()
        .map(|b| aggregate_volumes(b, &scene, config.merge))
        .transpose()?;

    let inputs = StageInputs {
        body: body.as_ref(),
        scene: &scene,
        merged: merged.as_ref(),
        params,
    };
    let (heatmaps, out_of_volume) = match (stage, &input) {
        (Some(stage), PipelineInput::GroundTruth(gt)) => (stage.heatmaps(&inputs)?, outside_box(gt, params)),
        (Some(stage), PipelineInput::Features(_)) => (stage.heatmaps(&inputs)?, Vec::new()),
        (None, PipelineInput::GroundTruth(gt)) => {
            let oracle = GaussianOracle {
                pose: (*gt).clone(),
                sigma: config.sigma,
            };
            (oracle.heatmaps(&inputs)?, outside_box(gt, params))
        }
        (None, PipelineInput::Features(_)) => {
            return Err(Error::InvalidParams("feature input needs a heatmap stage".into()));
        }
    };

    let pose = soft_argmax(&heatmaps, params, config.beta)?;
    let peak_sharpness = (0..heatmaps.joints())
        .into_par_iter()
        .map(|j| {
            soft_argmax_weights(heatmaps.channel(j), config.beta)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .collect();

    Ok(PipelineOutput {
        pose,
        diagnostics: Diagnostics {
            occupied_voxels: scene.occupied_count(),
            scene_points: cloud.len(),
            peak_sharpness,
            out_of_volume,
            projected_voxels,
        },
        heatmaps,
        scene,
    })
}

fn outside_box(pose: &Pose, params: &VoxelGridParams) -> Vec<usize> {
    pose.joints()
        .iter()
        .enumerate()
        .filter(|(_, p): &(usize, &Point3<f64>)| !params.box_contains(p))
        .map(|(i, _)| i)
        .collect()
}
