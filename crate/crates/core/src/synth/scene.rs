//! Analytic scene primitives and ray intersection.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rays never report hits closer than this to their origin.
const T_MIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Material {
    Scene,
    Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    /// Half-space boundary `normal . x = offset`; the solid side is `normal . x < offset`.
    Plane { normal: [f64; 3], offset: f64 },
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
    /// Segment `a`-`b` swept by a sphere of `radius`.
    Capsule { a: [f64; 3], b: [f64; 3], radius: f64 },
}

impl Shape {
    fn validate(&self) -> Result<()> {
        match self {
            Shape::Plane { normal, offset } => {
                let n = Vector3::from(*normal);
                if !offset.is_finite() || (n.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSpec(format!(
                        "plane normal must be unit length, got {n:?}"
                    )));
                }
            }
            Shape::Box { min, max } => {
                if (0..3).any(|i| !(min[i] < max[i]) || !min[i].is_finite() || !max[i].is_finite()) {
                    return Err(Error::InvalidSpec(format!("box min {min:?} must be below max {max:?}")));
                }
            }
            Shape::Capsule { a, b, radius } => {
                if !(radius.is_finite() && *radius > 0.0)
                    || a.iter().chain(b).any(|v| !v.is_finite())
                {
                    return Err(Error::InvalidSpec(format!("capsule radius must be positive, got {radius}")));
                }
            }
        }
        Ok(())
    }

    /// Distance along the unit direction `dir` to the first surface hit.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Shape::Plane { normal, offset } => {
                let n = Vector3::from(*normal);
                let denom = n.dot(dir);
                let height = n.dot(&origin.coords) - offset;
                // only the front face is visible
                if denom >= 0.0 || height < 0.0 {
                    return None;
                }
                let t = -height / denom;
                (t > T_MIN).then_some(t)
            }
            Shape::Box { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if dir[i] == 0.0 {
                        if origin[i] < min[i] || origin[i] > max[i] {
                            return None;
                        }
                        continue;
                    }
                    let inv = 1.0 / dir[i];
                    let (mut a, mut b) = ((min[i] - origin[i]) * inv, (max[i] - origin[i]) * inv);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                if t0 > t1 {
                    return None;
                }
                if t0 > T_MIN {
                    Some(t0)
                } else if t1 > T_MIN {
                    Some(t1)
                } else {
                    None
                }
            }
            Shape::Capsule { a, b, radius } => {
                intersect_capsule(origin, dir, &Point3::from(*a), &Point3::from(*b), *radius)
            }
        }
    }

    /// Unsigned distance from `p` to the surface.
    pub fn surface_distance(&self, p: &Point3<f64>) -> f64 {
        match self {
            Shape::Plane { normal, offset } => (Vector3::from(*normal).dot(&p.coords) - offset).abs(),
            Shape::Box { min, max } => {
                let outside = Vector3::from_fn(|i, _| (min[i] - p[i]).max(p[i] - max[i]).max(0.0));
                if outside.norm() > 0.0 {
                    outside.norm()
                } else {
                    (0..3)
                        .map(|i| (p[i] - min[i]).min(max[i] - p[i]))
                        .fold(f64::INFINITY, f64::min)
                }
            }
            Shape::Capsule { a, b, radius } => {
                let (a, b) = (Point3::from(*a), Point3::from(*b));
                let ab = b - a;
                let s = ((p - a).dot(&ab) / ab.norm_squared().max(f64::MIN_POSITIVE)).clamp(0.0, 1.0);
                ((p - (a + ab * s)).norm() - radius).abs()
            }
        }
    }
}

fn intersect_sphere(origin: &Point3<f64>, dir: &Vector3<f64>, center: &Point3<f64>, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    [-b - s, -b + s].into_iter().find(|&t| t > T_MIN)
}

fn intersect_capsule(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    radius: f64,
) -> Option<f64> {
    let mut best: Option<f64> = None;
    let mut consider = |t: Option<f64>| {
        if let Some(t) = t {
            best = Some(best.map_or(t, |b| b.min(t)));
        }
    };
    consider(intersect_sphere(origin, dir, a, radius));
    consider(intersect_sphere(origin, dir, b, radius));

    // Infinite cylinder around the axis, clipped to the segment.
    let axis = b - a;
    let len2 = axis.norm_squared();
    if len2 > 0.0 {
        let oa = origin - a;
        let d_par = dir.dot(&axis) / len2;
        let o_par = oa.dot(&axis) / len2;
        let d_perp = dir - axis * d_par;
        let o_perp = oa - axis * o_par;
        let qa = d_perp.norm_squared();
        if qa > 1e-15 {
            let qb = o_perp.dot(&d_perp);
            let qc = o_perp.norm_squared() - radius * radius;
            let disc = qb * qb - qa * qc;
            if disc >= 0.0 {
                let s = disc.sqrt();
                for t in [(-qb - s) / qa, (-qb + s) / qa] {
                    let along = o_par + t * d_par;
                    if t > T_MIN && (0.0..=1.0).contains(&along) {
                        consider(Some(t));
                        break;
                    }
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub name: String,
    pub material: Material,
    pub shape: Shape,
}

impl Primitive {
    pub fn scene(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            material: Material::Scene,
            shape,
        }
    }

    pub fn body(name: impl Into<String>, shape: Shape) -> Self {
        Self {
            name: name.into(),
            material: Material::Body,
            shape,
        }
    }
}

/// Rigid camera placement: camera-frame axes expressed in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPlacement {
    pub position: [f64; 3],
    /// Rows of the camera-to-world rotation matrix.
    pub rotation_rows: [[f64; 3]; 3],
}

impl CameraPlacement {
    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            rotation_rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_axes(position: Point3<f64>, x: Vector3<f64>, y: Vector3<f64>, z: Vector3<f64>) -> Self {
        let m = Matrix3::from_columns(&[x, y, z]);
        Self {
            position: position.into(),
            rotation_rows: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        let r = &self.rotation_rows;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], //
            r[1][0], r[1][1], r[1][2], //
            r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn origin(&self) -> Point3<f64> {
        Point3::from(self.position)
    }

    pub fn camera_to_world(&self, p: &Point3<f64>) -> Point3<f64> {
        self.origin() + self.rotation() * p.coords
    }

    pub fn world_to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation().transpose() * (p - self.origin()))
    }

    fn validate(&self) -> Result<()> {
        let r = self.rotation();
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSpec("camera rotation must be a proper rotation".into()));
        }
        Ok(())
    }
}

/// World-frame scene: primitives plus the egocentric camera placement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub camera: CameraPlacement,
    pub primitives: Vec<Primitive>,
}

/// Nearest hits along one ray, split by material.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RayHits {
    pub scene: Option<f64>,
    pub body: Option<f64>,
}

impl SceneModel {
    pub fn new(camera: CameraPlacement, primitives: Vec<Primitive>) -> Result<Self> {
        let model = Self { camera, primitives };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if !self.primitives.iter().any(|p| p.material == Material::Scene) {
            return Err(Error::InvalidSpec("scene needs at least one scene primitive".into()));
        }
        self.primitives.iter().try_for_each(|p| p.shape.validate())
    }

    pub fn count(&self, material: Material) -> usize {
        self.primitives.iter().filter(|p| p.material == material).count()
    }

    pub fn without_body(&self) -> SceneModel {
        SceneModel {
            camera: self.camera,
            primitives: self
                .primitives
                .iter()
                .filter(|p| p.material == Material::Scene)
                .cloned()
                .collect(),
        }
    }

    /// Casts a camera-frame unit direction from the camera center.
    pub fn cast(&self, dir_cam: &Vector3<f64>) -> RayHits {
        let origin = self.camera.origin();
        let dir = self.camera.rotation() * dir_cam;
        let mut hits = RayHits::default();
        for p in &self.primitives {
            if let Some(t) = p.shape.intersect(&origin, &dir) {
                let slot = match p.material {
                    Material::Scene => &mut hits.scene,
                    Material::Body => &mut hits.body,
                };
                *slot = Some(slot.map_or(t, |s: f64| s.min(t)));
            }
        }
        hits
    }

    /// Smallest unsigned distance from a world point to any scene surface.
    pub fn scene_surface_distance(&self, p: &Point3<f64>) -> f64 {
        self.primitives
            .iter()
            .filter(|s| s.material == Material::Scene)
            .map(|s| s.shape.surface_distance(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: SceneModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }
}

/// Room description used by [`build_room`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    /// Floor extent along x and y (meters), centered on the origin.
    pub size: [f64; 2],
    /// Wall height; `None` leaves the room open (floor only).
    #[serde(default)]
    pub wall_height: Option<f64>,
    #[serde(default)]
    pub furniture: Vec<FurnitureSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurnitureSpec {
    pub name: String,
    /// Footprint center on the floor.
    pub center: [f64; 2],
    /// Extent along x, y and height.
    pub size: [f64; 3],
}

impl FurnitureSpec {
    pub fn to_primitive(&self) -> Primitive {
        let [cx, cy] = self.center;
        let [sx, sy, sz] = self.size;
        Primitive::scene(
            self.name.clone(),
            Shape::Box {
                min: [cx - sx / 2.0, cy - sy / 2.0, 0.0],
                max: [cx + sx / 2.0, cy + sy / 2.0, sz],
            },
        )
    }
}

const WALL_THICKNESS: f64 = 0.1;

/// Floor plane `z = 0`, optional walls as thin boxes, and furniture boxes.
pub fn build_room(spec: &RoomSpec) -> Result<Vec<Primitive>> {
    let [w, d] = spec.size;
    if !(w.is_finite() && d.is_finite() && w > 0.0 && d > 0.0) {
        return Err(Error::InvalidSpec(format!("room size must be positive, got {w} x {d}")));
    }
    let mut prims = vec![Primitive::scene(
        "floor",
        Shape::Plane {
            normal: [0.0, 0.0, 1.0],
            offset: 0.0,
        },
    )];
    if let Some(h) = spec.wall_height {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidSpec(format!("wall height must be positive, got {h}")));
        }
        let (hw, hd, t) = (w / 2.0, d / 2.0, WALL_THICKNESS);
        let walls = [
            ("wall_east", [hw, -hd - t, 0.0], [hw + t, hd + t, h]),
            ("wall_west", [-hw - t, -hd - t, 0.0], [-hw, hd + t, h]),
            ("wall_north", [-hw, hd, 0.0], [hw, hd + t, h]),
            ("wall_south", [-hw, -hd - t, 0.0], [hw, -hd, h]),
        ];
        prims.extend(
            walls
                .into_iter()
                .map(|(name, min, max)| Primitive::scene(name, Shape::Box { min, max })),
        );
    }
    for f in &spec.furniture {
        if f.size.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidSpec(format!("furniture `{}` has a non-positive size", f.name)));
        }
        prims.push(f.to_primitive());
    }
    Ok(prims)
}
