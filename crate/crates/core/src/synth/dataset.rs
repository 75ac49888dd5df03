//! Seeded dataset generation and manifest handling.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::body::{sample_pose, PoseKind, PoseSpec};
use super::render::render_frame;
use super::scene::{build_room, FurnitureSpec, RoomSpec, SceneModel};
use crate::camera::FisheyeModel;
use crate::depth::{DepthMap, SegMask};
use crate::error::{Error, Result};
use crate::pose::Pose;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub seed: u64,
    pub frames: usize,
    /// Square image side in pixels; the lens keeps its angular coverage.
    pub image_size: usize,
    /// Joint-angle jitter amplitude, radians.
    pub jitter: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 10,
            image_size: 256,
            jitter: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub id: String,
    pub kind: PoseKind,
    pub depth_body: String,
    pub depth_scene: String,
    pub depth_body_pgm: String,
    pub depth_scene_pgm: String,
    pub mask: String,
    pub pose: String,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub image_size: usize,
    pub calibration: String,
    pub frames: Vec<FrameEntry>,
}

/// One frame loaded back from disk.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub entry: FrameEntry,
    pub depth_body: DepthMap,
    pub depth_scene: DepthMap,
    pub mask: SegMask,
    pub pose: Pose,
    pub scene: SceneModel,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load_calibration(&self, root: &Path) -> Result<FisheyeModel> {
        FisheyeModel::load_calibration(root.join(&self.calibration))
    }

    pub fn load_frame(&self, root: &Path, entry: &FrameEntry) -> Result<FrameRecord> {
        let scene_path = root.join(&entry.scene);
        let scene_text = fs::read_to_string(&scene_path).map_err(|e| Error::io(&scene_path, e))?;
        Ok(FrameRecord {
            entry: entry.clone(),
            depth_body: DepthMap::read(root.join(&entry.depth_body))?,
            depth_scene: DepthMap::read(root.join(&entry.depth_scene))?,
            mask: SegMask::read_pgm(root.join(&entry.mask))?,
            pose: Pose::read(root.join(&entry.pose))?,
            scene: SceneModel::from_json(&scene_text)?,
        })
    }
}

/// Builds the world-frame scene for frame `index`.
pub fn frame_scene(spec: &DatasetSpec, index: usize) -> Result<(PoseKind, SceneModel, Pose)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let kind = PoseKind::ALL[index % PoseKind::ALL.len()];
    let seat_height = rng.gen_range(0.40..0.50);
    let pose_spec = PoseSpec {
        kind,
        body_scale: rng.gen_range(0.9..1.1),
        position: [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)],
        yaw: rng.gen_range(-PI..PI),
        seat_height,
        jitter: spec.jitter,
        seed: rng.gen(),
    };
    let body = sample_pose(&pose_spec)?;

    let size = [rng.gen_range(3.0..6.0), rng.gen_range(3.0..6.0)];
    let wall_height = Some(rng.gen_range(2.4..3.0));
    let mut furniture = Vec::new();
    for n in 0..rng.gen_range(0..=2usize) {
        let extent: [f64; 3] = [rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0), rng.gen_range(0.4..1.0)];
        let angle: f64 = rng.gen_range(-PI..PI);
        let reach = 1.2 + extent[0].max(extent[1]) / 2.0;
        let center = [
            pose_spec.position[0] + reach * angle.cos(),
            pose_spec.position[1] + reach * angle.sin(),
        ];
        let inside = (0..2).all(|i| center[i].abs() + extent[i] / 2.0 < size[i] / 2.0);
        if inside {
            furniture.push(FurnitureSpec {
                name: format!("box_{n}"),
                center,
                size: extent,
            });
        }
    }
    if kind == PoseKind::Sitting {
        furniture.push(body.seat(seat_height));
    }
    let mut primitives = build_room(&RoomSpec {
        size,
        wall_height,
        furniture,
    })?;
    primitives.extend(body.capsules);
    Ok((kind, SceneModel::new(body.camera, primitives)?, body.pose))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders `spec.frames` frames into `out_dir` and writes the manifest.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    let root = out_dir.as_ref();
    if spec.image_size < 8 {
        return Err(Error::InvalidSpec(format!("image size {} is too small", spec.image_size)));
    }
    let model = FisheyeModel::scaled_equidistant(spec.image_size)?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    model.save_calibration(root.join(CALIBRATION_FILE))?;

    let frames = (0..spec.frames)
        .into_par_iter()
        .map(|index| {
            let (kind, scene, pose) = frame_scene(spec, index)?;
            let id = format!("frame_{index:04}");
            let dir: PathBuf = root.join(&id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let rel = |name: &str| format!("{id}/{name}");
            let entry = FrameEntry {
                id: id.clone(),
                kind,
                depth_body: rel("depth_body.bin"),
                depth_scene: rel("depth_scene.bin"),
                depth_body_pgm: rel("depth_body.pgm"),
                depth_scene_pgm: rel("depth_scene.pgm"),
                mask: rel("mask.pgm"),
                pose: rel("pose.json"),
                scene: rel("scene.json"),
            };
            let rendered = render_frame(&model, &scene);
            rendered.depth_body.write(root.join(&entry.depth_body))?;
            rendered.depth_scene.write(root.join(&entry.depth_scene))?;
            rendered.depth_body.write_pgm(root.join(&entry.depth_body_pgm))?;
            rendered.depth_scene.write_pgm(root.join(&entry.depth_scene_pgm))?;
            rendered.mask.write_pgm(root.join(&entry.mask))?;
            pose.write(root.join(&entry.pose))?;
            write_text(&root.join(&entry.scene), &(scene.to_json() + "\n"))?;
            Ok(entry)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        seed: spec.seed,
        image_size: spec.image_size,
        calibration: CALIBRATION_FILE.into(),
        frames,
    };
    write_text(&root.join(MANIFEST_FILE), &manifest.to_json())?;
    Ok(manifest)
}
