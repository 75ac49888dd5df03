//! Parametric capsule skeleton posed per activity kind.

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{CameraPlacement, FurnitureSpec, Primitive, Shape};
use crate::error::{Error, Result};
use crate::pose::{joint, Pose, CANONICAL_BONE_LENGTHS, JOINT_NAMES, JOINT_PARENTS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseKind {
    Standing,
    Sitting,
    Squatting,
}

impl PoseKind {
    pub const ALL: [PoseKind; 3] = [PoseKind::Standing, PoseKind::Sitting, PoseKind::Squatting];

    pub fn as_str(self) -> &'static str {
        match self {
            PoseKind::Standing => "standing",
            PoseKind::Sitting => "sitting",
            PoseKind::Squatting => "squatting",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSpec {
    pub kind: PoseKind,
    /// Multiplier on the canonical bone lengths.
    pub body_scale: f64,
    /// Floor position of the pelvis footprint.
    pub position: [f64; 2],
    /// Heading about world +z, radians; zero faces +y.
    pub yaw: f64,
    /// Seat height for [`PoseKind::Sitting`], meters.
    pub seat_height: f64,
    /// Angular jitter amplitude, radians; zero gives the nominal pose.
    pub jitter: f64,
    pub seed: u64,
}

impl PoseSpec {
    pub fn nominal(kind: PoseKind) -> Self {
        Self {
            kind,
            body_scale: 1.0,
            position: [0.0, 0.0],
            yaw: 0.0,
            seat_height: 0.45,
            jitter: 0.0,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.body_scale.is_finite() && self.body_scale > 0.0) {
            return Err(Error::InvalidSpec(format!("body scale must be positive, got {}", self.body_scale)));
        }
        if !(self.jitter.is_finite() && (0.0..=0.5).contains(&self.jitter)) {
            return Err(Error::InvalidSpec(format!("jitter must lie in [0, 0.5] rad, got {}", self.jitter)));
        }
        if !self.yaw.is_finite() || self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("placement must be finite".into()));
        }
        if self.kind == PoseKind::Sitting {
            let reach = (CANONICAL_BONE_LENGTHS[joint::RIGHT_KNEE] + CANONICAL_BONE_LENGTHS[joint::RIGHT_ANKLE])
                * self.body_scale;
            if !(self.seat_height > 0.0 && self.seat_height < reach) {
                return Err(Error::InvalidSpec(format!(
                    "seat height {} is out of leg reach {reach:.3}",
                    self.seat_height
                )));
            }
        }
        Ok(())
    }
}

/// Camera offset from the neck along (torso up, facing direction), in body-scale units.
const CAMERA_OFFSET: (f64, f64) = (0.20, 0.10);
/// Downward camera tilt toward the facing direction.
const CAMERA_TILT: f64 = 0.26;
const TORSO_LATERAL: f64 = 0.08;
const SEAT_SIDE: f64 = 0.36;
const SEAT_SETBACK: f64 = 0.10;

/// Capsule radius per child joint, in body-scale units.
const CAPSULE_RADII: [f64; 15] = [
    0.0, 0.06, 0.05, 0.04, 0.06, 0.05, 0.04, 0.09, 0.075, 0.055, 0.04, 0.09, 0.075, 0.055, 0.04,
];

#[derive(Debug, Clone, PartialEq)]
pub struct BodySample {
    pub kind: PoseKind,
    pub world_joints: Vec<Point3<f64>>,
    /// Horizontal unit heading in the world frame.
    pub facing: Vector3<f64>,
    pub camera: CameraPlacement,
    /// Joints in the camera frame.
    pub pose: Pose,
    pub capsules: Vec<Primitive>,
}

impl BodySample {
    /// Seat box under the hips, set back so the thighs overhang its front
    /// edge; only meaningful for sitting bodies.
    pub fn seat(&self, seat_height: f64) -> FurnitureSpec {
        let hips = (self.world_joints[joint::RIGHT_HIP].coords + self.world_joints[joint::LEFT_HIP].coords) / 2.0;
        let center = hips - self.facing * SEAT_SETBACK;
        FurnitureSpec {
            name: "chair".into(),
            center: [center.x, center.y],
            size: [SEAT_SIDE, SEAT_SIDE, seat_height],
        }
    }
}

struct Directions {
    dirs: [Vector3<f64>; 15],
    torso_up: Vector3<f64>,
    facing: Vector3<f64>,
}

fn unit(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z).normalize()
}

/// Bone directions in the body-local frame: +x right, +y facing, +z up.
fn directions(spec: &PoseSpec, rng: &mut ChaCha8Rng) -> Directions {
    let mut jitter = |scale: f64| {
        if spec.jitter > 0.0 {
            rng.gen_range(-1.0..=1.0) * spec.jitter * scale
        } else {
            0.0
        }
    };
    let lean = match spec.kind {
        PoseKind::Standing | PoseKind::Sitting => 0.0,
        PoseKind::Squatting => 0.6,
    } + jitter(0.3);
    let torso_up = Vector3::new(0.0, lean.sin(), lean.cos());
    let facing = Vector3::new(0.0, lean.cos(), -lean.sin());
    let along = (1.0 - (TORSO_LATERAL / 0.5f64).powi(2)).sqrt();
    let shoulder_to_hip = |side: f64| Vector3::new(-side * TORSO_LATERAL / 0.5, 0.0, 0.0) - torso_up * along;

    let arm = |side: f64, jitter: &mut dyn FnMut(f64) -> f64| {
        let swing = jitter(1.0);
        let upper = Rotation3::from_axis_angle(&Vector3::x_axis(), swing) * unit(side * 0.15, 0.1, -1.0);
        let bend = 1.0 + jitter(1.0);
        let fore = unit(side * 0.05, bend.sin(), -bend.cos());
        (upper, fore)
    };
    let (r_upper, r_fore) = arm(1.0, &mut jitter);
    let (l_upper, l_fore) = arm(-1.0, &mut jitter);
    let splay = jitter(0.5);
    let foot = |side: f64| unit(side * splay.sin().abs(), splay.cos(), 0.0);

    let s = spec.body_scale;
    let thigh = CANONICAL_BONE_LENGTHS[joint::RIGHT_KNEE];
    let shin = CANONICAL_BONE_LENGTHS[joint::RIGHT_ANKLE];
    let (thigh_dir, shin_dir) = match spec.kind {
        PoseKind::Standing => (-Vector3::z(), -Vector3::z()),
        PoseKind::Sitting => {
            let h = spec.seat_height / s;
            if h >= shin {
                let drop = ((h - shin) / thigh).clamp(0.0, 1.0);
                (Vector3::new(0.0, (1.0 - drop * drop).sqrt(), -drop), -Vector3::z())
            } else {
                let drop = h / shin;
                (Vector3::y(), Vector3::new(0.0, (1.0 - drop * drop).sqrt(), -drop))
            }
        }
        PoseKind::Squatting => {
            let knee_lift = 0.26f64;
            let shin_tilt = 0.7f64;
            (
                Vector3::new(0.0, knee_lift.cos(), -knee_lift.sin()),
                Vector3::new(0.0, -shin_tilt.sin(), -shin_tilt.cos()),
            )
        }
    };

    let mut dirs = [Vector3::zeros(); 15];
    dirs[joint::RIGHT_SHOULDER] = Vector3::x();
    dirs[joint::LEFT_SHOULDER] = -Vector3::x();
    dirs[joint::RIGHT_ELBOW] = r_upper;
    dirs[joint::RIGHT_WRIST] = r_fore;
    dirs[joint::LEFT_ELBOW] = l_upper;
    dirs[joint::LEFT_WRIST] = l_fore;
    dirs[joint::RIGHT_HIP] = shoulder_to_hip(1.0);
    dirs[joint::LEFT_HIP] = shoulder_to_hip(-1.0);
    for (knee, ankle, foot_joint, side) in [
        (joint::RIGHT_KNEE, joint::RIGHT_ANKLE, joint::RIGHT_FOOT, 1.0),
        (joint::LEFT_KNEE, joint::LEFT_ANKLE, joint::LEFT_FOOT, -1.0),
    ] {
        dirs[knee] = thigh_dir;
        dirs[ankle] = shin_dir;
        dirs[foot_joint] = foot(side);
    }
    Directions { dirs, torso_up, facing }
}

/// Poses the skeleton, places it in the world with feet on the floor, and
/// mounts the egocentric camera at the head.
pub fn sample_pose(spec: &PoseSpec) -> Result<BodySample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let Directions { dirs, torso_up, facing } = directions(spec, &mut rng);
    let s = spec.body_scale;

    let mut local = vec![Point3::origin(); JOINT_NAMES.len()];
    for j in 1..local.len() {
        let parent = JOINT_PARENTS[j].expect("only the neck is a root");
        local[j] = local[parent] + dirs[j] * (CANONICAL_BONE_LENGTHS[j] * s);
    }
    let floor = local[joint::RIGHT_ANKLE].z.min(local[joint::LEFT_ANKLE].z);
    let hips_mid = (local[joint::RIGHT_HIP].coords + local[joint::LEFT_HIP].coords) / 2.0;
    let anchor = Vector3::new(hips_mid.x, hips_mid.y, floor);

    let yaw = Rotation3::from_axis_angle(&Vector3::z_axis(), spec.yaw);
    let place = Vector3::new(spec.position[0], spec.position[1], 0.0);
    let to_world = |p: &Point3<f64>| Point3::from(yaw * (p.coords - anchor) + place);
    let world_joints: Vec<Point3<f64>> = local.iter().map(to_world).collect();

    let head = local[joint::NECK] + (torso_up * CAMERA_OFFSET.0 + facing * CAMERA_OFFSET.1) * s;
    let forward = yaw * Vector3::y();
    let z_cam = (forward * CAMERA_TILT.sin() - Vector3::z() * CAMERA_TILT.cos()).normalize();
    let x_cam = yaw * Vector3::x();
    let y_cam = z_cam.cross(&x_cam);
    let camera = CameraPlacement::from_axes(to_world(&head), x_cam, y_cam, z_cam);

    let cam_joints = world_joints.iter().map(|p| camera.world_to_camera(p)).collect();
    let pose = Pose::from_joints(cam_joints)?;

    let capsules = (1..world_joints.len())
        .map(|j| {
            let parent = JOINT_PARENTS[j].expect("only the neck is a root");
            Primitive::body(
                format!("{}_{}", JOINT_NAMES[parent], JOINT_NAMES[j]),
                Shape::Capsule {
                    a: world_joints[parent].into(),
                    b: world_joints[j].into(),
                    radius: CAPSULE_RADII[j] * s,
                },
            )
        })
        .collect();

    Ok(BodySample {
        kind: spec.kind,
        world_joints,
        facing: forward,
        camera,
        pose,
        capsules,
    })
}
