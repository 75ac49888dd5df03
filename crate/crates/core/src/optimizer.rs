//! Scene-contact pose refinement.
//!
//! Minimizes `lambda_r * E_R + lambda_j * E_J + lambda_c * E_C` over the joint
//! positions by gradient descent with a backtracking line search.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::FisheyeModel;
use crate::error::{Error, Result};
use crate::pose::{default_names, Pose};
use crate::spatial::SpatialHash;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyWeights {
    pub lambda_r: f64,
    pub lambda_j: f64,
    pub lambda_c: f64,
    /// Contact margin in meters.
    pub epsilon: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1e-3,
            lambda_j: 1.0,
            lambda_c: 10.0,
            epsilon: 0.05,
        }
    }
}

impl EnergyWeights {
    pub fn new(lambda_r: f64, lambda_j: f64, lambda_c: f64, epsilon: f64) -> Result<Self> {
        let w = Self {
            lambda_r,
            lambda_j,
            lambda_c,
            epsilon,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_r, self.lambda_j, self.lambda_c];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidParams(format!("energy weights must be non-negative, got {weights:?}")));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidParams(format!("contact margin must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lambda_r: self.lambda_r * factor,
            lambda_j: self.lambda_j * factor,
            lambda_c: self.lambda_c * factor,
            epsilon: self.epsilon,
        }
    }
}

/// 2D joint detections with per-joint confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoints2D {
    names: Vec<String>,
    points: Vec<Point2<f64>>,
    confidence: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub joint_name: String,
    pub uv: [f64; 2],
    pub confidence: f64,
}

impl Keypoints2D {
    pub fn new(names: Vec<String>, points: Vec<Point2<f64>>, confidence: Vec<f64>) -> Result<Self> {
        if names.len() != points.len() {
            return Err(Error::shape(points.len(), names.len()));
        }
        if confidence.len() != points.len() {
            return Err(Error::shape(points.len(), confidence.len()));
        }
        if confidence.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(Error::InvalidParams("confidences must be finite and non-negative".into()));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidParams("detections must be finite".into()));
        }
        Ok(Self {
            names,
            points,
            confidence,
        })
    }

    /// Full-confidence detections from pixel positions.
    pub fn from_points(points: Vec<Point2<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(default_names(n), points, vec![1.0; n])
    }

    /// Projects a pose; joints outside the field of view get zero confidence.
    pub fn from_projection(pose: &Pose, model: &FisheyeModel) -> Self {
        let (points, confidence) = pose
            .joints()
            .iter()
            .map(|p| match model.project(p) {
                Ok(px) => (px, 1.0),
                Err(_) => (Point2::from(model.center()), 0.0),
            })
            .unzip();
        Self {
            names: pose.names().to_vec(),
            points,
            confidence,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point2<f64>] {
        &self.points
    }

    pub fn confidence(&self) -> &[f64] {
        &self.confidence
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_json(&self) -> String {
        let records: Vec<DetectionRecord> = self
            .names
            .iter()
            .zip(&self.points)
            .zip(&self.confidence)
            .map(|((name, p), &confidence)| DetectionRecord {
                joint_name: name.clone(),
                uv: [p.x, p.y],
                confidence,
            })
            .collect();
        serde_json::to_string_pretty(&records).expect("detections serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<DetectionRecord> = serde_json::from_str(text)?;
        Self::new(
            records.iter().map(|r| r.joint_name.clone()).collect(),
            records.iter().map(|r| Point2::new(r.uv[0], r.uv[1])).collect(),
            records.iter().map(|r| r.confidence).collect(),
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// `sum_n [d_n <= epsilon] d_n^2` with `d_n` the distance to the nearest cloud point.
pub fn contact_energy(pose: &Pose, cloud: &[Point3<f64>], epsilon: f64) -> Result<f64> {
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let hash = SpatialHash::new(cloud, epsilon);
    let anchors = nearest_points(pose, &hash);
    Ok(contact_terms(pose.joints(), &anchors, epsilon).0)
}

fn nearest_points(pose: &Pose, hash: &SpatialHash<'_>) -> Vec<Option<Point3<f64>>> {
    // the hash cell equals the margin, so only neighbors that can contribute are searched
    let radius = hash.cell_size();
    pose.joints()
        .iter()
        .map(|p| hash.nearest_within(p, radius).map(|(i, _)| hash.points()[i]))
        .collect()
}

/// Contact energy and gradient against fixed anchor points.
fn contact_terms(joints: &[Point3<f64>], anchors: &[Option<Point3<f64>>], epsilon: f64) -> (f64, Vec<Vector3<f64>>) {
    let mut energy = 0.0;
    let grad = joints
        .iter()
        .zip(anchors)
        .map(|(p, c)| {
            let Some(c) = c else {
                return Vector3::zeros();
            };
            let diff = p - c;
            let d2 = diff.norm_squared();
            if d2.sqrt() <= epsilon {
                energy += d2;
                diff * 2.0
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    (energy, grad)
}

/// Confidence-weighted squared pixel error; joints beyond the field of view
/// are measured from their clamped position on the boundary circle.
pub fn reprojection_energy(pose: &Pose, detections: &Keypoints2D, model: &FisheyeModel) -> Result<f64> {
    Ok(reprojection_terms(pose, detections, model)?.0)
}

pub fn reprojection_terms(
    pose: &Pose,
    detections: &Keypoints2D,
    model: &FisheyeModel,
) -> Result<(f64, Vec<Vector3<f64>>)> {
    if pose.len() != detections.len() {
        return Err(Error::shape(pose.len(), detections.len()));
    }
    let mut energy = 0.0;
    let grad = pose
        .joints()
        .iter()
        .zip(detections.points.iter().zip(&detections.confidence))
        .map(|(p, (det, &conf))| {
            let (px, jac) = match model.project_with_jacobian(p, true) {
                Ok(v) => v,
                Err(_) => (Point2::from(model.center()), Default::default()),
            };
            let r: Vector2<f64> = px - det;
            energy += conf * r.norm_squared();
            jac.transpose() * r * (2.0 * conf)
        })
        .collect();
    Ok((energy, grad))
}

/// `sum_n |P_n - init_n|^2`.
pub fn pose_prior_energy(pose: &Pose, init: &Pose) -> Result<f64> {
    if pose.len() != init.len() {
        return Err(Error::shape(init.len(), pose.len()));
    }
    Ok(pose
        .joints()
        .iter()
        .zip(init.joints())
        .map(|(p, q)| (p - q).norm_squared())
        .sum())
}

/// Unweighted term values and the weighted total at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub reprojection: f64,
    pub prior: f64,
    pub contact: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
    NonFiniteEnergy,
}

#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    /// Entry 0 is the initial pose; one entry per accepted step follows.
    pub energies: Vec<EnergyBreakdown>,
    pub final_pose: Pose,
    pub converged: bool,
    pub stop: StopReason,
}

impl OptimizationTrace {
    pub fn accepted_steps(&self) -> usize {
        self.energies.len() - 1
    }

    pub fn initial(&self) -> &EnergyBreakdown {
        &self.energies[0]
    }

    pub fn last(&self) -> &EnergyBreakdown {
        self.energies.last().expect("trace holds the initial energy")
    }

    /// Fails with `NonFiniteEnergy` if the run was aborted.
    pub fn into_result(self) -> Result<Self> {
        if self.stop == StopReason::NonFiniteEnergy {
            return Err(Error::NonFiniteEnergy {
                iteration: self.accepted_steps(),
            });
        }
        Ok(self)
    }
}

pub const GRADIENT_TOLERANCE: f64 = 1e-8;
/// Length of the first trial step, meters.
const INITIAL_STEP: f64 = 0.01;
/// Upper bound on any trial step length, meters.
const MAX_STEP: f64 = 0.5;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Energy of the full objective with an explicit contact anchor set.
struct Objective<'a> {
    init: &'a Pose,
    detections: &'a Keypoints2D,
    model: &'a FisheyeModel,
    hash: SpatialHash<'a>,
    weights: EnergyWeights,
}

impl Objective<'_> {
    fn evaluate(&self, pose: &Pose, anchors: &[Option<Point3<f64>>]) -> Result<(EnergyBreakdown, Vec<Vector3<f64>>)> {
        let w = &self.weights;
        let (e_r, g_r) = reprojection_terms(pose, self.detections, self.model)?;
        let e_j = pose_prior_energy(pose, self.init)?;
        let (e_c, g_c) = contact_terms(pose.joints(), anchors, w.epsilon);
        let grad = pose
            .joints()
            .iter()
            .zip(self.init.joints())
            .enumerate()
            .map(|(n, (p, q))| g_r[n] * w.lambda_r + (p - q) * (2.0 * w.lambda_j) + g_c[n] * w.lambda_c)
            .collect();
        let breakdown = EnergyBreakdown {
            reprojection: e_r,
            prior: e_j,
            contact: e_c,
            total: w.lambda_r * e_r + w.lambda_j * e_j + w.lambda_c * e_c,
        };
        Ok((breakdown, grad))
    }

    fn at(&self, pose: &Pose) -> Result<(EnergyBreakdown, Vec<Vector3<f64>>)> {
        self.evaluate(pose, &nearest_points(pose, &self.hash))
    }
}

/// Total energy and its gradient, with nearest neighbors taken at `pose`.
pub fn total_energy(
    pose: &Pose,
    init: &Pose,
    detections: &Keypoints2D,
    cloud: &[Point3<f64>],
    model: &FisheyeModel,
    weights: &EnergyWeights,
) -> Result<(EnergyBreakdown, Vec<Vector3<f64>>)> {
    weights.validate()?;
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    let objective = Objective {
        init,
        detections,
        model,
        hash: SpatialHash::new(cloud, weights.epsilon),
        weights: *weights,
    };
    objective.at(pose)
}

fn grad_norm(g: &[Vector3<f64>]) -> f64 {
    g.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

fn step(pose: &Pose, dir: &[Vector3<f64>], alpha: f64) -> Pose {
    let joints = pose.joints().iter().zip(dir).map(|(p, d)| p - d * alpha).collect();
    pose.with_joints(joints).expect("joint count preserved")
}

/// Refines `init` against detections and a scene cloud.
///
/// Trial steps start from a Barzilai-Borwein estimate and are halved until
/// the Armijo condition holds on the exact energy.
pub fn optimize_pose(
    init: &Pose,
    detections: &Keypoints2D,
    cloud: &[Point3<f64>],
    model: &FisheyeModel,
    weights: &EnergyWeights,
    max_iters: usize,
) -> Result<OptimizationTrace> {
    weights.validate()?;
    if max_iters == 0 {
        return Err(Error::InvalidParams("max_iters must be at least 1".into()));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyScene);
    }
    if detections.len() != init.len() {
        return Err(Error::shape(init.len(), detections.len()));
    }
    let objective = Objective {
        init,
        detections,
        model,
        hash: SpatialHash::new(cloud, weights.epsilon),
        weights: *weights,
    };

    let mut pose = init.clone();
    let (mut energy, mut grad) = objective.at(&pose)?;
    let mut energies = vec![energy];
    let finish = |pose: Pose, energies: Vec<EnergyBreakdown>, stop: StopReason| OptimizationTrace {
        energies,
        final_pose: pose,
        converged: stop == StopReason::GradientTolerance,
        stop,
    };
    if !energy.total.is_finite() {
        return Ok(finish(pose, energies, StopReason::NonFiniteEnergy));
    }
    let mut previous: Option<(Pose, Vec<Vector3<f64>>)> = None;

    for _ in 0..max_iters {
        let g_norm = grad_norm(&grad);
        if g_norm < GRADIENT_TOLERANCE {
            return Ok(finish(pose, energies, StopReason::GradientTolerance));
        }
        let mut alpha = INITIAL_STEP / g_norm;
        if let Some((prev_pose, prev_grad)) = &previous {
            let (mut ss, mut sy) = (0.0, 0.0);
            for n in 0..pose.len() {
                let s = pose.joint(n) - prev_pose.joint(n);
                let y = grad[n] - prev_grad[n];
                ss += s.norm_squared();
                sy += s.dot(&y);
            }
            if sy > 0.0 && ss > 0.0 {
                alpha = ss / sy;
            }
        }
        alpha = alpha.min(MAX_STEP / g_norm);

        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = step(&pose, &grad, alpha);
            let (trial_energy, trial_grad) = objective.at(&trial)?;
            if !trial_energy.total.is_finite() {
                return Ok(finish(pose, energies, StopReason::NonFiniteEnergy));
            }
            if trial_energy.total <= energy.total - ARMIJO * alpha * g_norm * g_norm
                && trial_energy.total < energy.total
            {
                accepted = Some((trial, trial_energy, trial_grad));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, next_energy, next_grad)) = accepted else {
            return Ok(finish(pose, energies, StopReason::LineSearchFailed));
        };
        previous = Some((std::mem::replace(&mut pose, next), std::mem::replace(&mut grad, next_grad)));
        energy = next_energy;
        energies.push(energy);
    }
    let stop = if grad_norm(&grad) < GRADIENT_TOLERANCE {
        StopReason::GradientTolerance
    } else {
        StopReason::MaxIterations
    };
    Ok(finish(pose, energies, stop))
}
