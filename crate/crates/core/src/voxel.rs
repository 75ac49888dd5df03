//! Volumetric space under the egocentric camera.
//!
//! The box spans `x, y in [-L/2, L/2]` and `z in [0, L]` in the camera frame,
//! with the camera at the center of its top face. Voxel `(x, y, z)` holds the
//! point `(x L/N - L/2, y L/N - L/2, z L/N)`. That formula puts index 0 on the
//! box face rather than half a cell inside it, so the centers span
//! `[-L/2, L/2 - L/N]` along x and y and `[0, L - L/N]` along z.
//!
//! Volumes are stored flat with `z` fastest: `index = (x * N + y) * N + z`.

use nalgebra::{Point2, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::FisheyeModel;
use crate::error::{Error, Result};
use crate::spatial::SpatialHash;

/// Box side `L`, resolution `N` and occupancy threshold `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridParams {
    side: f64,
    resolution: usize,
    epsilon: f64,
}

impl VoxelGridParams {
    pub fn new(side: f64, resolution: usize, epsilon: f64) -> Result<Self> {
        if !(side.is_finite() && side > 0.0) {
            return Err(Error::InvalidParams(format!("box side must be positive, got {side}")));
        }
        if resolution < 2 {
            return Err(Error::InvalidParams(format!(
                "resolution must be at least 2, got {resolution}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < side) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, {side}), got {epsilon}"
            )));
        }
        Ok(Self {
            side,
            resolution,
            epsilon,
        })
    }

    /// L = 2.4 m, N = 64, epsilon = 0.04 m.
    pub fn standard() -> Self {
        Self::new(2.4, 64, 0.04).expect("standard parameters are valid")
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.side, self.resolution, epsilon)
    }

    /// Edge length of one voxel, `L / N`.
    pub fn cell_size(&self) -> f64 {
        self.side / self.resolution as f64
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution.pow(3)
    }

    #[inline]
    pub fn flat_index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.resolution + y) * self.resolution + z
    }

    #[inline]
    pub fn unflatten(&self, index: usize) -> (usize, usize, usize) {
        let n = self.resolution;
        (index / (n * n), (index / n) % n, index % n)
    }

    /// Center of voxel `(x, y, z)`.
    #[inline]
    pub fn center(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        let n = self.resolution as f64;
        let l = self.side;
        Point3::new(
            x as f64 * l / n - l / 2.0,
            y as f64 * l / n - l / 2.0,
            z as f64 * l / n,
        )
    }

    #[inline]
    pub fn center_flat(&self, index: usize) -> Point3<f64> {
        let (x, y, z) = self.unflatten(index);
        self.center(x, y, z)
    }

    /// Whether a camera-frame point lies inside the bounding box.
    pub fn box_contains(&self, p: &Point3<f64>) -> bool {
        let h = self.side / 2.0;
        p.x >= -h && p.x <= h && p.y >= -h && p.y <= h && p.z >= 0.0 && p.z <= self.side
    }
}

/// `N x N x N` grid of voxel-center coordinates.
#[derive(Debug, Clone)]
pub struct CoordinateVolume {
    params: VoxelGridParams,
    centers: Vec<Point3<f64>>,
}

impl CoordinateVolume {
    pub fn params(&self) -> &VoxelGridParams {
        &self.params
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> Point3<f64> {
        self.centers[self.params.flat_index(x, y, z)]
    }

    pub fn as_slice(&self) -> &[Point3<f64>] {
        &self.centers
    }
}

pub fn voxel_centers(params: &VoxelGridParams) -> CoordinateVolume {
    let centers = (0..params.voxel_count())
        .map(|i| params.center_flat(i))
        .collect();
    CoordinateVolume {
        params: *params,
        centers,
    }
}

/// Projected pixel per voxel, with `None` where the projection failed.
#[derive(Debug, Clone)]
pub struct ProjectedGrid {
    resolution: usize,
    pixels: Vec<Option<Point2<f64>>>,
}

impl ProjectedGrid {
    pub fn from_parts(resolution: usize, pixels: Vec<Option<Point2<f64>>>) -> Result<Self> {
        if pixels.len() != resolution.pow(3) {
            return Err(Error::shape(resolution.pow(3), pixels.len()));
        }
        Ok(Self { resolution, pixels })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn pixels(&self) -> &[Option<Point2<f64>>] {
        &self.pixels
    }

    pub fn valid_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.is_some()).count()
    }
}

/// Projects every voxel center; out-of-FOV and degenerate voxels become `None`.
pub fn project_voxels(model: &FisheyeModel, centers: &CoordinateVolume) -> ProjectedGrid {
    let pixels = centers
        .as_slice()
        .par_iter()
        .map(|c| model.project(c).ok())
        .collect();
    ProjectedGrid {
        resolution: centers.params.resolution,
        pixels,
    }
}

/// `H x W x K` feature map, row-major with channels innermost.
///
/// Pixel `(u, v)` addresses column `u`, row `v`; pixel centers sit on integers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("feature map contains non-finite values".into()));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let o = (row * self.width + col) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Bilinear sample at pixel `(u, v)` into `out`.
    ///
    /// Samples within half a pixel outside the outermost centers clamp to the
    /// edge; anything further out yields `false` and leaves `out` untouched.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) -> bool {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(u >= -0.5 && v >= -0.5 && u <= w - 0.5 && v <= h - 0.5) {
            return false;
        }
        let u = u.clamp(0.0, w - 1.0);
        let v = v.clamp(0.0, h - 1.0);
        let c0 = (u.floor() as usize).min(self.width.saturating_sub(2));
        let r0 = (v.floor() as usize).min(self.height.saturating_sub(2));
        let c1 = (c0 + 1).min(self.width - 1);
        let r1 = (r0 + 1).min(self.height - 1);
        let fu = u - c0 as f64;
        let fv = v - r0 as f64;
        let (a, b, c, d) = (
            self.at(r0, c0),
            self.at(r0, c1),
            self.at(r1, c0),
            self.at(r1, c1),
        );
        for k in 0..self.channels {
            let top = a[k] * (1.0 - fu) + b[k] * fu;
            let bottom = c[k] * (1.0 - fu) + d[k] * fu;
            out[k] = top * (1.0 - fv) + bottom * fv;
        }
        true
    }
}

/// `N x N x N x K` feature volume, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVolume {
    resolution: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureVolume {
    pub fn new(resolution: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != resolution.pow(3) * channels {
            return Err(Error::shape(resolution.pow(3) * channels, data.len()));
        }
        Ok(Self {
            resolution,
            channels,
            data,
        })
    }

    pub fn zeros(resolution: usize, channels: usize) -> Self {
        Self {
            resolution,
            channels,
            data: vec![0.0; resolution.pow(3) * channels],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn voxel(&self, flat: usize) -> &[f64] {
        &self.data[flat * self.channels..(flat + 1) * self.channels]
    }

    pub fn get(&self, x: usize, y: usize, z: usize, k: usize) -> f64 {
        let n = self.resolution;
        self.data[((x * n + y) * n + z) * self.channels + k]
    }
}

/// Fills a feature volume by bilinear sampling the feature map at each voxel's
/// projected pixel. Voxels without a valid in-image pixel get zeros.
pub fn lift_features(features: &FeatureMap, projected: &ProjectedGrid) -> Result<FeatureVolume> {
    if features.height == 0 || features.width == 0 {
        return Err(Error::shape("non-empty feature map", "0 x 0"));
    }
    let k = features.channels;
    let mut data = vec![0.0; projected.pixels.len() * k];
    if k > 0 {
        data.par_chunks_mut(k)
            .zip(projected.pixels.par_iter())
            .for_each(|(out, px)| {
                if let Some(px) = px {
                    features.sample_bilinear(px.x, px.y, out);
                }
            });
    }
    FeatureVolume::new(projected.resolution, k, data)
}

/// Binary `N x N x N` occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyVolume {
    resolution: usize,
    data: Vec<u8>,
}

impl OccupancyVolume {
    pub fn new(resolution: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != resolution.pow(3) {
            return Err(Error::shape(resolution.pow(3), data.len()));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParams("occupancy values must be 0 or 1".into()));
        }
        Ok(Self { resolution, data })
    }

    pub fn empty(resolution: usize) -> Self {
        Self {
            resolution,
            data: vec![0; resolution.pow(3)],
        }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        let n = self.resolution;
        self.data[(x * n + y) * n + z] == 1
    }

    pub fn occupied_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// True if every voxel set here is also set in `other`.
    pub fn is_subset_of(&self, other: &OccupancyVolume) -> bool {
        self.resolution == other.resolution
            && self.data.iter().zip(&other.data).all(|(a, b)| *a <= *b)
    }
}

#[inline]
fn within_eps(center: &Point3<f64>, p: &Point3<f64>, eps2: f64) -> bool {
    (center - p).norm_squared() < eps2
}

/// Voxel `(x, y, z)` is set iff some point lies strictly closer than epsilon to
/// its center. Points are bucketed into a spatial hash with cells of side
/// `max(epsilon, L/N)` so each voxel inspects at most 27 cells.
pub fn voxelize_points(cloud: &[Point3<f64>], params: &VoxelGridParams) -> OccupancyVolume {
    let n = params.resolution;
    if cloud.is_empty() {
        return OccupancyVolume::empty(n);
    }
    let eps = params.epsilon;
    let eps2 = eps * eps;
    let hash = SpatialHash::new(cloud, eps.max(params.cell_size()));

    let (lo, hi) = cloud.iter().fold(
        (Point3::from([f64::INFINITY; 3]), Point3::from([f64::NEG_INFINITY; 3])),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );

    let mut data = vec![0u8; n * n * n];
    data.par_chunks_mut(n * n).enumerate().for_each(|(x, slab)| {
        for y in 0..n {
            for z in 0..n {
                let c = params.center(x, y, z);
                // generous margin so rounding here can never disagree with the exact test
                let outside =
                    (0..3).any(|a| c[a] < lo[a] - 2.0 * eps || c[a] > hi[a] + 2.0 * eps);
                if outside {
                    continue;
                }
                let hit = hash
                    .neighborhood(hash.key(&c), 1)
                    .any(|i| within_eps(&c, &cloud[i], eps2));
                if hit {
                    slab[y * n + z] = 1;
                }
            }
        }
    });
    OccupancyVolume { resolution: n, data }
}

/// Literal evaluation of the occupancy rule over every voxel and every point.
pub fn voxelize_points_bruteforce(cloud: &[Point3<f64>], params: &VoxelGridParams) -> OccupancyVolume {
    let eps2 = params.epsilon * params.epsilon;
    let data = (0..params.voxel_count())
        .map(|i| {
            let c = params.center_flat(i);
            u8::from(cloud.iter().any(|p| within_eps(&c, p, eps2)))
        })
        .collect();
    OccupancyVolume {
        resolution: params.resolution,
        data,
    }
}

/// How body features and scene occupancy are combined into one volume.
#[derive(Clone, Copy, Default)]
pub enum VolumeMerge {
    /// Body channels followed by one occupancy channel.
    #[default]
    Concat,
    /// Caller-defined merge: receives the body features of one voxel and its
    /// occupancy, and writes the merged channels into the output slice.
    Custom {
        channels: usize,
        merge: fn(body: &[f64], occupied: bool, out: &mut [f64]),
    },
}

impl std::fmt::Debug for VolumeMerge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VolumeMerge::Concat => write!(f, "Concat"),
            VolumeMerge::Custom { channels, .. } => write!(f, "Custom({channels})"),
        }
    }
}

pub fn aggregate_volumes(
    body: &FeatureVolume,
    scene: &OccupancyVolume,
    merge: VolumeMerge,
) -> Result<FeatureVolume> {
    if body.resolution != scene.resolution {
        return Err(Error::shape(body.resolution, scene.resolution));
    }
    let k = body.channels;
    match merge {
        VolumeMerge::Concat => {
            let mut data = Vec::with_capacity(scene.data.len() * (k + 1));
            for (i, &occ) in scene.data.iter().enumerate() {
                data.extend_from_slice(body.voxel(i));
                data.push(f64::from(occ));
            }
            FeatureVolume::new(body.resolution, k + 1, data)
        }
        VolumeMerge::Custom { channels, merge } => {
            let mut data = vec![0.0; scene.data.len() * channels];
            if channels > 0 {
                for (i, out) in data.chunks_mut(channels).enumerate() {
                    merge(body.voxel(i), scene.data[i] == 1, out);
                }
            }
            FeatureVolume::new(body.resolution, channels, data)
        }
    }
}
