//! Synthetic egocentric scenes: parametric rooms, capsule bodies and
//! ray-cast fisheye depth.

mod body;
mod dataset;
mod fixtures;
mod render;
mod scene;

pub use body::{sample_pose, BodySample, PoseKind, PoseSpec};
pub use dataset::{
    frame_scene, generate_dataset, DatasetSpec, FrameEntry, FrameRecord, Manifest, CALIBRATION_FILE, MANIFEST_FILE,
};
pub use fixtures::{floor_float_fixture, floor_grid, FloorFixture, FOOT_JOINTS};
pub use render::{
    pixel_rays, raycast_depth, render_body_mask, render_frame, render_joint_features, RenderedFrame,
};
pub use scene::{
    build_room, CameraPlacement, FurnitureSpec, Material, Primitive, RayHits, RoomSpec, SceneModel, Shape,
};
