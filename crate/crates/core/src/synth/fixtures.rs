//! Hand-built optimization fixtures on top of the simulator.

use nalgebra::{Point3, Vector3};

use super::body::{sample_pose, PoseKind, PoseSpec};
use super::scene::CameraPlacement;
use crate::camera::FisheyeModel;
use crate::error::Result;
use crate::optimizer::Keypoints2D;
use crate::pose::{joint, Pose};

pub const FOOT_JOINTS: [usize; 4] = [joint::RIGHT_ANKLE, joint::RIGHT_FOOT, joint::LEFT_ANKLE, joint::LEFT_FOOT];

/// Standing body whose initial estimate floats above a dense floor cloud.
#[derive(Debug, Clone)]
pub struct FloorFixture {
    pub model: FisheyeModel,
    pub camera: CameraPlacement,
    /// Floor samples in the camera frame.
    pub cloud: Vec<Point3<f64>>,
    pub ground_truth: Pose,
    pub init: Pose,
    pub detections: Keypoints2D,
}

impl FloorFixture {
    /// Height of a camera-frame point above the floor plane.
    pub fn floor_height(&self, p: &Point3<f64>) -> f64 {
        self.camera.camera_to_world(p).z
    }

    pub fn max_foot_height(&self, pose: &Pose) -> f64 {
        FOOT_JOINTS
            .iter()
            .map(|&j| self.floor_height(&pose.joint(j)))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Floor grid with `spacing` meters between samples over a `half_extent` square.
pub fn floor_grid(half_extent: f64, spacing: f64) -> Vec<Point3<f64>> {
    let steps = (half_extent / spacing).round() as i64;
    (-steps..=steps)
        .flat_map(|i| (-steps..=steps).map(move |j| Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0)))
        .collect()
}

pub fn floor_float_fixture(float_height: f64) -> Result<FloorFixture> {
    let model = FisheyeModel::scaled_equidistant(256)?;
    let body = sample_pose(&PoseSpec::nominal(PoseKind::Standing))?;
    let camera = body.camera;
    let cloud = floor_grid(1.5, 0.01)
        .iter()
        .map(|p| camera.world_to_camera(p))
        .collect();
    let lift = camera.rotation().transpose() * Vector3::new(0.0, 0.0, float_height);
    let init = body.pose.translated(&lift);
    let detections = Keypoints2D::from_projection(&body.pose, &model);
    Ok(FloorFixture {
        model,
        camera,
        cloud,
        ground_truth: body.pose,
        init,
        detections,
    })
}
