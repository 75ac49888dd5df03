//! Pose accuracy and physical plausibility metrics.
//!
//! Errors are reported in millimeters. Sequence-level numbers average the
//! per-frame joint means, so every frame weighs the same.

use nalgebra::{Matrix3, Point2, Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::FisheyeModel;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::pose::{Pose, CANONICAL_BONE_LENGTHS, JOINT_PARENTS};
use crate::spatial::SpatialHash;

/// Default contact threshold: a joint closer than this to the scene touches it.
pub const CONTACT_THRESHOLD: f64 = 0.05;

/// Default tolerance before a joint behind the scene surface counts as penetrating.
pub const PENETRATION_MARGIN: f64 = 0.05;

fn same_len(pred: &Pose, gt: &Pose) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!("{} joints", gt.len()), format!("{} joints", pred.len())));
    }
    if gt.is_empty() {
        return Err(Error::shape("at least one joint", "0 joints"));
    }
    Ok(())
}

/// Mean per-joint position error in millimeters.
pub fn mpjpe(pred: &Pose, gt: &Pose) -> Result<f64> {
    same_len(pred, gt)?;
    let total: f64 = pred
        .joints()
        .iter()
        .zip(gt.joints())
        .map(|(p, g)| (p - g).norm())
        .sum();
    Ok(1000.0 * total / pred.len() as f64)
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn apply(&self, pose: &Pose) -> Pose {
        pose.map(|p| self.apply_point(p))
    }
}

/// Least-squares similarity transform mapping `pred` onto `gt`.
///
/// Rotation comes from the SVD of the cross-covariance, with the smallest
/// singular direction flipped when needed so that `det R = +1`.
pub fn procrustes_align(pred: &Pose, gt: &Pose) -> Result<SimilarityTransform> {
    same_len(pred, gt)?;
    let n = pred.len() as f64;
    let mean = |pts: &[Point3<f64>]| pts.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mx = mean(pred.joints());
    let my = mean(gt.joints());

    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (p, g) in pred.joints().iter().zip(gt.joints()) {
        let dx = p.coords - mx;
        let dy = g.coords - my;
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;
    if var_x <= 1e-18 {
        return Err(Error::DegenerateConfiguration("predicted joints coincide".into()));
    }

    let svd = cov.svd(true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let s = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if s[order[0]] <= 0.0 || s[order[1]] <= 1e-10 * s[order[0]] {
        return Err(Error::DegenerateConfiguration(
            "joints are collinear; rotation is not determined".into(),
        ));
    }
    let mut trace = s.sum();
    if u.determinant() * v_t.determinant() < 0.0 {
        let k = order[2];
        u.column_mut(k).neg_mut();
        trace -= 2.0 * s[k];
    }
    let rotation = u * v_t;
    let scale = trace / var_x;
    let translation = my - rotation * mx * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}

/// MPJPE after optimal similarity alignment of `pred` onto `gt`.
pub fn pa_mpjpe(pred: &Pose, gt: &Pose) -> Result<f64> {
    let t = procrustes_align(pred, gt)?;
    mpjpe(&t.apply(pred), gt)
}

/// Rooted kinematic tree with a canonical length per bone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneTemplate {
    parents: Vec<Option<usize>>,
    lengths: Vec<f64>,
    #[serde(skip)]
    order: Vec<usize>,
}

impl BoneTemplate {
    /// `lengths[j]` is the length of the bone from `parents[j]` to `j`; the
    /// root entry is ignored.
    pub fn new(parents: Vec<Option<usize>>, lengths: Vec<f64>) -> Result<Self> {
        let j = parents.len();
        if lengths.len() != j {
            return Err(Error::InvalidTemplate(format!(
                "{} parents but {} lengths",
                j,
                lengths.len()
            )));
        }
        let roots: Vec<usize> = (0..j).filter(|&i| parents[i].is_none()).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidTemplate(format!(
                "expected exactly one root, found {}",
                roots.len()
            )));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= j || p == i {
                    return Err(Error::InvalidTemplate(format!("joint {i} has invalid parent {p}")));
                }
                if !(lengths[i].is_finite() && lengths[i] > 0.0) {
                    return Err(Error::InvalidTemplate(format!(
                        "bone {p}->{i} has non-positive length {}",
                        lengths[i]
                    )));
                }
            }
        }
        // breadth-first from the root; a joint never reached sits on a cycle
        let mut order = vec![roots[0]];
        let mut k = 0;
        while k < order.len() {
            let cur = order[k];
            order.extend((0..j).filter(|&c| parents[c] == Some(cur)));
            k += 1;
        }
        if order.len() != j {
            return Err(Error::InvalidTemplate("parent links contain a cycle".into()));
        }
        Ok(Self {
            parents,
            lengths,
            order,
        })
    }

    /// Default skeleton with its canonical bone lengths.
    pub fn canonical() -> Self {
        Self::new(JOINT_PARENTS.to_vec(), CANONICAL_BONE_LENGTHS.to_vec())
            .expect("default skeleton is a valid tree")
    }

    /// Default tree with each bone set to its mean length over `poses`.
    pub fn mean_of(poses: &[Pose]) -> Result<Self> {
        let parents = JOINT_PARENTS.to_vec();
        if poses.is_empty() {
            return Err(Error::InvalidTemplate("no poses to average".into()));
        }
        let mut lengths = vec![0.0; parents.len()];
        for pose in poses {
            if pose.len() != parents.len() {
                return Err(Error::shape(parents.len(), pose.len()));
            }
            for (c, p) in parents.iter().enumerate() {
                if let Some(p) = p {
                    lengths[c] += (pose.joint(c) - pose.joint(*p)).norm();
                }
            }
        }
        lengths.iter_mut().for_each(|l| *l /= poses.len() as f64);
        Self::new(parents, lengths)
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn root(&self) -> usize {
        self.order[0]
    }

    /// Walks the tree from the root, rescaling every bone vector to its
    /// template length while keeping its direction.
    pub fn repose(&self, pose: &Pose) -> Result<Pose> {
        if pose.len() != self.parents.len() {
            return Err(Error::shape(self.parents.len(), pose.len()));
        }
        let mut out = pose.joints().to_vec();
        for &c in &self.order[1..] {
            let p = self.parents[c].expect("non-root has a parent");
            let bone = pose.joint(c) - pose.joint(p);
            let len = bone.norm();
            if len == 0.0 {
                return Err(Error::DegenerateConfiguration(format!(
                    "bone {p}->{c} has zero length"
                )));
            }
            out[c] = out[p] + bone * (self.lengths[c] / len);
        }
        pose.with_joints(out)
    }
}

/// PA-MPJPE after normalizing both poses to the template's bone lengths.
pub fn ba_mpjpe(pred: &Pose, gt: &Pose, template: &BoneTemplate) -> Result<f64> {
    pa_mpjpe(&template.repose(pred)?, &template.repose(gt)?)
}

/// Whether any joint lies strictly closer than `threshold` to the cloud.
pub fn in_contact(pose: &Pose, hash: &SpatialHash<'_>, threshold: f64) -> bool {
    pose.joints().iter().any(|j| hash.any_within(j, threshold))
}

/// Fraction of poses with at least one joint closer than `threshold` to the
/// scene cloud. Poses not in contact are floating.
pub fn contact_rate(poses: &[Pose], cloud: &[Point3<f64>], threshold: f64) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidParams(format!("threshold must be positive, got {threshold}")));
    }
    if poses.is_empty() {
        return Ok(0.0);
    }
    let hash = SpatialHash::new(cloud, threshold);
    let touching = poses
        .par_iter()
        .filter(|p| in_contact(p, &hash, threshold))
        .count();
    Ok(touching as f64 / poses.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenetrationReport {
    /// Fraction of poses with no penetrating joint.
    pub rate: f64,
    pub penetrating_poses: usize,
    /// Joints that could not be tested (outside the FOV or over invalid depth).
    pub skipped_joints: usize,
}

/// Outcome of testing one joint against the scene depth map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointDepthTest {
    Clear,
    Penetrating,
    Skipped,
}

/// A joint penetrates when its ray distance exceeds the scene depth at its
/// (nearest) pixel by more than `margin`.
pub fn test_joint_depth(
    joint: &Point3<f64>,
    scene_depth: &DepthMap,
    model: &FisheyeModel,
    margin: f64,
) -> JointDepthTest {
    let Ok(px) = model.project(joint) else {
        return JointDepthTest::Skipped;
    };
    let Some((col, row)) = nearest_pixel(&px, scene_depth.width(), scene_depth.height()) else {
        return JointDepthTest::Skipped;
    };
    match scene_depth.get(col, row) {
        Some(d) if joint.coords.norm() > d + margin => JointDepthTest::Penetrating,
        Some(_) => JointDepthTest::Clear,
        None => JointDepthTest::Skipped,
    }
}

fn nearest_pixel(px: &Point2<f64>, width: usize, height: usize) -> Option<(usize, usize)> {
    let (c, r) = (px.x.round(), px.y.round());
    (c >= 0.0 && r >= 0.0 && c < width as f64 && r < height as f64).then_some((c as usize, r as usize))
}

/// Fraction of poses that do not pass behind the scene surface.
pub fn penetration_free_rate(
    poses: &[Pose],
    scene_depth: &DepthMap,
    model: &FisheyeModel,
    margin: f64,
) -> Result<PenetrationReport> {
    if (scene_depth.width(), scene_depth.height()) != model.image_size() {
        return Err(Error::shape(
            format!("{:?}", model.image_size()),
            format!("{}x{}", scene_depth.width(), scene_depth.height()),
        ));
    }
    let per_pose: Vec<(bool, usize)> = poses
        .par_iter()
        .map(|pose| {
            let mut penetrating = false;
            let mut skipped = 0;
            for j in pose.joints() {
                match test_joint_depth(j, scene_depth, model, margin) {
                    JointDepthTest::Penetrating => penetrating = true,
                    JointDepthTest::Skipped => skipped += 1,
                    JointDepthTest::Clear => {}
                }
            }
            (penetrating, skipped)
        })
        .collect();
    let penetrating_poses = per_pose.iter().filter(|(p, _)| *p).count();
    let skipped_joints = per_pose.iter().map(|(_, s)| s).sum();
    let rate = if poses.is_empty() {
        0.0
    } else {
        (poses.len() - penetrating_poses) as f64 / poses.len() as f64
    };
    Ok(PenetrationReport {
        rate,
        penetrating_poses,
        skipped_joints,
    })
}
