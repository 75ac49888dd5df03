//! Skeleton definition, poses, 3D joint heatmaps and soft-argmax readout.

use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::container::{Array, ArrayData};
use crate::error::{Error, Result};
use crate::voxel::VoxelGridParams;

/// Default soft-argmax temperature.
pub const DEFAULT_BETA: f64 = 100.0;

/// Joint names of the default 15-joint egocentric skeleton.
pub const JOINT_NAMES: [&str; 15] = [
    "neck",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_hip",
    "right_knee",
    "right_ankle",
    "right_foot",
    "left_hip",
    "left_knee",
    "left_ankle",
    "left_foot",
];

/// Parent of each joint; the neck is the root and hips hang off the shoulders.
pub const JOINT_PARENTS: [Option<usize>; 15] = [
    None,
    Some(0),
    Some(1),
    Some(2),
    Some(0),
    Some(4),
    Some(5),
    Some(1),
    Some(7),
    Some(8),
    Some(9),
    Some(4),
    Some(11),
    Some(12),
    Some(13),
];

/// Canonical bone length (meters) from each joint to its parent; 0 for the root.
pub const CANONICAL_BONE_LENGTHS: [f64; 15] = [
    0.0, 0.18, 0.28, 0.25, 0.18, 0.28, 0.25, 0.50, 0.42, 0.40, 0.15, 0.50, 0.42, 0.40, 0.15,
];

pub mod joint {
    pub const NECK: usize = 0;
    pub const RIGHT_SHOULDER: usize = 1;
    pub const RIGHT_ELBOW: usize = 2;
    pub const RIGHT_WRIST: usize = 3;
    pub const LEFT_SHOULDER: usize = 4;
    pub const LEFT_ELBOW: usize = 5;
    pub const LEFT_WRIST: usize = 6;
    pub const RIGHT_HIP: usize = 7;
    pub const RIGHT_KNEE: usize = 8;
    pub const RIGHT_ANKLE: usize = 9;
    pub const RIGHT_FOOT: usize = 10;
    pub const LEFT_HIP: usize = 11;
    pub const LEFT_KNEE: usize = 12;
    pub const LEFT_ANKLE: usize = 13;
    pub const LEFT_FOOT: usize = 14;
}

/// Joint positions in the camera frame (meters) with their names.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    names: Vec<String>,
    joints: Vec<Point3<f64>>,
}

impl Pose {
    pub fn new(names: Vec<String>, joints: Vec<Point3<f64>>) -> Result<Self> {
        if names.len() != joints.len() {
            return Err(Error::shape(names.len(), joints.len()));
        }
        if joints.iter().any(|p| !p.coords.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidParams("pose contains non-finite coordinates".into()));
        }
        Ok(Self { names, joints })
    }

    /// Uses the default skeleton names for 15 joints, `joint_<i>` otherwise.
    pub fn from_joints(joints: Vec<Point3<f64>>) -> Result<Self> {
        let names = default_names(joints.len());
        Self::new(names, joints)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn joints(&self) -> &[Point3<f64>] {
        &self.joints
    }

    pub fn joints_mut(&mut self) -> &mut [Point3<f64>] {
        &mut self.joints
    }

    pub fn joint(&self, i: usize) -> Point3<f64> {
        self.joints[i]
    }

    pub fn with_joints(&self, joints: Vec<Point3<f64>>) -> Result<Self> {
        Self::new(self.names.clone(), joints)
    }

    pub fn map(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        Self {
            names: self.names.clone(),
            joints: self.joints.iter().map(f).collect(),
        }
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        self.map(|p| p + offset)
    }

    pub fn to_records(&self) -> Vec<JointRecord> {
        self.names
            .iter()
            .zip(&self.joints)
            .map(|(n, p)| JointRecord {
                joint_name: n.clone(),
                xyz_m: [p.x, p.y, p.z],
            })
            .collect()
    }

    pub fn from_records(records: &[JointRecord]) -> Result<Self> {
        Self::new(
            records.iter().map(|r| r.joint_name.clone()).collect(),
            records.iter().map(|r| Point3::from(r.xyz_m)).collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_records()).expect("pose serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<JointRecord> = serde_json::from_str(text)?;
        Self::from_records(&records)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn default_names(count: usize) -> Vec<String> {
    if count == JOINT_NAMES.len() {
        JOINT_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        (0..count).map(|i| format!("joint_{i}")).collect()
    }
}

/// One entry of a pose file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRecord {
    pub joint_name: String,
    pub xyz_m: [f64; 3],
}

/// Per-joint 3D heatmaps over the voxel grid, `J x N^3`, joint-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapVolume {
    joints: usize,
    resolution: usize,
    data: Vec<f64>,
}

impl HeatmapVolume {
    pub fn new(joints: usize, resolution: usize, data: Vec<f64>) -> Result<Self> {
        let expected = joints * resolution.pow(3);
        if data.len() != expected {
            return Err(Error::shape(expected, data.len()));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::DegenerateHeatmap(
                "heatmap values must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            joints,
            resolution,
            data,
        })
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channel(&self, joint: usize) -> &[f64] {
        let n3 = self.resolution.pow(3);
        &self.data[joint * n3..(joint + 1) * n3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Adjusts one value in place (used by gradient checks).
    pub fn set(&mut self, joint: usize, voxel: usize, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::DegenerateHeatmap(format!("invalid heatmap value {value}")));
        }
        let n3 = self.resolution.pow(3);
        self.data[joint * n3 + voxel] = value;
        Ok(())
    }

    /// Container with dims `[J, N, N, N]`, f32.
    pub fn to_array(&self) -> Array {
        let n = self.resolution;
        Array::new(
            vec![self.joints, n, n, n],
            ArrayData::F32(self.data.iter().map(|&v| v as f32).collect()),
        )
        .expect("dims match")
    }

    pub fn from_array(array: &Array) -> Result<Self> {
        let [j, n, n2, n3] = array.dims[..] else {
            return Err(Error::shape("rank-4 array", format!("rank {}", array.dims.len())));
        };
        if n != n2 || n != n3 {
            return Err(Error::shape("cubic volume", format!("{n}x{n2}x{n3}")));
        }
        Self::new(j, n, array.data.to_f64())
    }
}

/// Unnormalized isotropic Gaussians `exp(-|c - p|^2 / (2 sigma^2))` at every voxel center.
pub fn render_gaussian_heatmaps(pose: &Pose, params: &VoxelGridParams, sigma: f64) -> Result<HeatmapVolume> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParams(format!("sigma must be positive, got {sigma}")));
    }
    let n3 = params.voxel_count();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = vec![0.0; pose.len() * n3];
    data.par_chunks_mut(n3)
        .zip(pose.joints().par_iter())
        .for_each(|(channel, p)| {
            for (i, v) in channel.iter_mut().enumerate() {
                *v = (-(params.center_flat(i) - p).norm_squared() * inv).exp();
            }
        });
    HeatmapVolume::new(pose.len(), params.resolution(), data)
}

/// Softmax of `beta * values` over the whole channel, stabilized by the maximum.
pub fn soft_argmax_weights(channel: &[f64], beta: f64) -> Vec<f64> {
    let max = channel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = channel.iter().map(|&v| (beta * (v - max)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= sum);
    w
}

fn check_readout(heatmaps: &HeatmapVolume, params: &VoxelGridParams, beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidParams(format!("beta must be positive, got {beta}")));
    }
    if heatmaps.resolution != params.resolution() {
        return Err(Error::shape(params.resolution(), heatmaps.resolution));
    }
    Ok(())
}

/// Expected voxel center under the softmax of each joint's heatmap.
pub fn soft_argmax(heatmaps: &HeatmapVolume, params: &VoxelGridParams, beta: f64) -> Result<Pose> {
    check_readout(heatmaps, params, beta)?;
    let joints: Vec<Point3<f64>> = (0..heatmaps.joints)
        .into_par_iter()
        .map(|j| {
            let w = soft_argmax_weights(heatmaps.channel(j), beta);
            let acc = w
                .iter()
                .enumerate()
                .fold(Vector3::zeros(), |acc, (i, &wi)| acc + params.center_flat(i).coords * wi);
            Point3::from(acc)
        })
        .collect();
    Pose::from_joints(joints)
}

/// Derivative of one joint's soft-argmax position with respect to a single
/// heatmap value: `beta * w_v * (c_v - position)`.
pub fn soft_argmax_gradient(
    heatmaps: &HeatmapVolume,
    params: &VoxelGridParams,
    beta: f64,
    joint: usize,
    voxel: usize,
) -> Result<Vector3<f64>> {
    check_readout(heatmaps, params, beta)?;
    let w = soft_argmax_weights(heatmaps.channel(joint), beta);
    let pos = w
        .iter()
        .enumerate()
        .fold(Vector3::zeros(), |acc, (i, &wi)| acc + params.center_flat(i).coords * wi);
    Ok((params.center_flat(voxel).coords - pos) * (beta * w[voxel]))
}

/// Index of the largest value in a channel (first on ties).
pub fn argmax_voxel(channel: &[f64]) -> usize {
    channel
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
