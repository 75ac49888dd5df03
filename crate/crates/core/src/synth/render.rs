//! Fisheye ray casting of scene models into depth maps and body masks.

use nalgebra::{Point2, Vector3};
use rayon::prelude::*;

use super::scene::{RayHits, SceneModel};
use crate::camera::FisheyeModel;
use crate::depth::{DepthMap, SegMask};
use crate::pose::Pose;
use crate::voxel::FeatureMap;

/// Camera-frame unit ray per pixel, `None` beyond the field of view.
pub fn pixel_rays(model: &FisheyeModel) -> Vec<Option<Vector3<f64>>> {
    let (w, h) = model.image_size();
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let px = Point2::new((i % w) as f64, (i / w) as f64);
            model.ray_direction(&px).ok()
        })
        .collect()
}

fn cast_all(model: &FisheyeModel, scene: &SceneModel) -> Vec<RayHits> {
    pixel_rays(model)
        .into_par_iter()
        .map(|ray| ray.map(|d| scene.cast(&d)).unwrap_or_default())
        .collect()
}

fn nearest(hits: &RayHits, include_body: bool) -> Option<f64> {
    match (hits.scene, hits.body.filter(|_| include_body)) {
        (Some(s), Some(b)) => Some(s.min(b)),
        (s, b) => s.or(b),
    }
}

fn body_wins(hits: &RayHits) -> bool {
    match (hits.body, hits.scene) {
        (Some(b), Some(s)) => b < s,
        (Some(_), None) => true,
        _ => false,
    }
}

fn depth_from(model: &FisheyeModel, hits: &[RayHits], include_body: bool) -> DepthMap {
    let values = hits.iter().map(|h| nearest(h, include_body).unwrap_or(0.0)).collect();
    DepthMap::new(model.width(), model.height(), values).expect("one value per pixel")
}

/// Per-pixel ray distance to the nearest primitive; misses are invalid.
pub fn raycast_depth(model: &FisheyeModel, scene: &SceneModel, include_body: bool) -> DepthMap {
    depth_from(model, &cast_all(model, scene), include_body)
}

/// Pixels whose nearest hit is a body capsule.
pub fn render_body_mask(model: &FisheyeModel, scene: &SceneModel) -> SegMask {
    let hits = cast_all(model, scene);
    let values = hits.iter().map(|h| u8::from(body_wins(h))).collect();
    SegMask::new(model.width(), model.height(), values).expect("one value per pixel")
}

/// Depth with and without the body plus the body mask, from a single cast.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub depth_body: DepthMap,
    pub depth_scene: DepthMap,
    pub mask: SegMask,
}

pub fn render_frame(model: &FisheyeModel, scene: &SceneModel) -> RenderedFrame {
    let hits = cast_all(model, scene);
    let values = hits.iter().map(|h| u8::from(body_wins(h))).collect();
    RenderedFrame {
        depth_body: depth_from(model, &hits, true),
        depth_scene: depth_from(model, &hits, false),
        mask: SegMask::new(model.width(), model.height(), values).expect("one value per pixel"),
    }
}

/// Placeholder 2D features: one Gaussian blob per projected joint.
pub fn render_joint_features(model: &FisheyeModel, pose: &Pose, sigma_px: f64) -> FeatureMap {
    let (w, h) = model.image_size();
    let centers: Vec<Option<Point2<f64>>> = pose.joints().iter().map(|p| model.project(p).ok()).collect();
    let k = centers.len();
    let inv = -0.5 / (sigma_px * sigma_px);
    let data = (0..w * h)
        .into_par_iter()
        .flat_map_iter(|i| {
            let (u, v) = ((i % w) as f64, (i / w) as f64);
            centers.iter().map(move |c| match c {
                Some(c) => (((u - c.x).powi(2) + (v - c.y).powi(2)) * inv).exp(),
                None => 0.0,
            })
        })
        .collect();
    FeatureMap::new(h, w, k, data).expect("one channel per joint")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::depth::mask_depth;
    use crate::synth::scene::{CameraPlacement, Primitive, Shape};
    use approx::assert_relative_eq;

    fn wall(z: f64) -> Primitive {
        Primitive::scene("wall", Shape::Plane { normal: [0.0, 0.0, -1.0], offset: -z })
    }

    #[test]
    fn plane_depths() {
        let model = FisheyeModel::default_equidistant();
        let scene = SceneModel::new(CameraPlacement::identity(), vec![wall(2.0)]).unwrap();
        let depth = raycast_depth(&model, &scene, true);
        assert_relative_eq!(depth.get(320, 320).unwrap(), 2.0, epsilon = 1e-12);
        // 45 degrees of incidence sits at radius f * pi / 4
        let px = Point2::new(320.0 + 160.0 * std::f64::consts::FRAC_PI_4, 320.0);
        let d = scene.cast(&model.ray_direction(&px).unwrap()).scene.unwrap();
        assert_relative_eq!(d, 2.0 * 2f64.sqrt(), epsilon = 1e-9);
        // rays beyond 90 degrees never reach the plane
        assert!(depth.get(0, 320).is_none());
        assert!(depth.get(0, 0).is_none());
    }

    #[test]
    fn body_mask_matches_depth_pair() {
        let model = FisheyeModel::scaled_equidistant(96).unwrap();
        let mut prims = vec![wall(2.0)];
        assert_eq!(render_body_mask(&model, &SceneModel::new(CameraPlacement::identity(), prims.clone()).unwrap()).count(), 0);
        prims.push(Primitive::body("arm", Shape::Capsule { a: [-0.3, 0.0, 1.0], b: [0.3, 0.1, 1.2], radius: 0.1 }));
        let scene = SceneModel::new(CameraPlacement::identity(), prims).unwrap();
        let frame = render_frame(&model, &scene);
        assert_eq!(frame.mask, render_body_mask(&model, &scene));
        assert_eq!(frame.depth_body, raycast_depth(&model, &scene, true));
        assert_eq!(frame.depth_scene, raycast_depth(&model, &scene, false));
        assert!(frame.mask.count() > 0);
        for i in 0..frame.mask.raw().len() {
            let (b, s) = (frame.depth_body.get_flat(i), frame.depth_scene.get_flat(i));
            if let (Some(b), Some(s)) = (b, s) {
                assert!(b <= s);
            }
            let closer = match (b, s) {
                (Some(b), Some(s)) => b < s,
                (Some(_), None) => true,
                _ => false,
            };
            assert_eq!(frame.mask.get_flat(i), closer);
        }
        let masked = mask_depth(&frame.depth_body, &frame.mask).unwrap();
        for i in 0..masked.raw().len() {
            if !frame.mask.get_flat(i) {
                assert_eq!(masked.get_flat(i), frame.depth_scene.get_flat(i));
            }
        }
    }

    #[test]
    fn joint_features_peak_at_projections() {
        let model = FisheyeModel::scaled_equidistant(64).unwrap();
        let pose = Pose::from_joints(vec![nalgebra::Point3::new(0.0, 0.0, 1.0)]).unwrap();
        let f = render_joint_features(&model, &pose, 2.0);
        assert_eq!(f.channels(), 1);
        assert_relative_eq!(f.at(32, 32)[0], 1.0);
        assert!(f.at(32, 36)[0] < f.at(32, 33)[0]);
    }
}
