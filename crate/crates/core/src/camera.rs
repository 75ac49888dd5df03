//! Omnidirectional fisheye camera model.
//!
//! The model maps the incidence angle `theta` of a ray (its angle to the
//! optical axis `+z`) to an image radius `r(theta)` in pixels, and places the
//! pixel along the ray's azimuth around the principal point:
//!
//! ```text
//! pixel = center + r(theta) * (x, y) / |(x, y)|
//! ```
//!
//! Two radius functions are supported: the ideal equidistant lens
//! `r = f * theta`, and a general polynomial `r = c0*theta + c1*theta^2 + ...`
//! which covers calibrated lenses (Kannala-Brandt and Scaramuzza style fits
//! can be converted into it).
//!
//! Camera frame: `+z` looks from the head-mounted camera toward the body,
//! `+x` is image right and `+y` is image down. Depth is always the Euclidean
//! ray distance from the camera center, never z-depth.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix2x3, Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of samples used to verify that `r(theta)` is strictly increasing.
const MONOTONE_SAMPLES: usize = 4096;

/// Bisection stops once the bracket is narrower than this (radians).
const THETA_TOLERANCE: f64 = 1e-10;

/// Radius function of the lens.
#[derive(Debug, Clone, PartialEq)]
pub enum RadialMap {
    /// `r = focal * theta`.
    Equidistant { focal: f64 },
    /// `r = sum_i coeffs[i] * theta^(i + 1)`; `r(0) = 0` by construction.
    Polynomial { coeffs: Vec<f64> },
}

impl RadialMap {
    pub fn radius(&self, theta: f64) -> f64 {
        match self {
            RadialMap::Equidistant { focal } => focal * theta,
            RadialMap::Polynomial { coeffs } => {
                // Horner on r(t) = t * (c0 + c1 t + c2 t^2 + ...)
                theta * coeffs.iter().rev().fold(0.0, |acc, c| acc * theta + c)
            }
        }
    }

    /// Derivative `dr/dtheta`.
    pub fn radius_derivative(&self, theta: f64) -> f64 {
        match self {
            RadialMap::Equidistant { focal } => *focal,
            RadialMap::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .rev()
                .fold(0.0, |acc, (i, c)| acc * theta + (i as f64 + 1.0) * c),
        }
    }
}

/// Fisheye camera intrinsics. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct FisheyeModel {
    radial: RadialMap,
    center: Vector2<f64>,
    image_size: (usize, usize),
    max_theta_deg: f64,
    max_theta: f64,
    max_radius: f64,
}

impl FisheyeModel {
    pub fn new(
        radial: RadialMap,
        center: (f64, f64),
        image_size: (usize, usize),
        max_theta_deg: f64,
    ) -> Result<Self> {
        let (width, height) = image_size;
        if width == 0 || height == 0 {
            return Err(Error::InvalidCalibration("image size must be non-zero".into()));
        }
        if !(center.0.is_finite() && center.1.is_finite())
            || center.0 < 0.0
            || center.1 < 0.0
            || center.0 >= width as f64
            || center.1 >= height as f64
        {
            return Err(Error::InvalidCalibration(format!(
                "center ({}, {}) lies outside the {}x{} image",
                center.0, center.1, width, height
            )));
        }
        let max_theta = max_theta_deg.to_radians();
        if !(max_theta > 0.0 && max_theta <= PI) {
            return Err(Error::InvalidCalibration(format!(
                "max_theta_deg must lie in (0, 180], got {max_theta_deg}"
            )));
        }
        match &radial {
            RadialMap::Equidistant { focal } => {
                if !(focal.is_finite() && *focal > 0.0) {
                    return Err(Error::InvalidCalibration(format!(
                        "focal must be positive, got {focal}"
                    )));
                }
            }
            RadialMap::Polynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidCalibration(
                        "poly_coeffs must be a non-empty list of finite values".into(),
                    ));
                }
            }
        }
        check_monotone(&radial, max_theta)?;
        let max_radius = radial.radius(max_theta);
        Ok(Self {
            radial,
            center: Vector2::new(center.0, center.1),
            image_size,
            max_theta_deg,
            max_theta,
            max_radius,
        })
    }

    pub fn equidistant(
        focal: f64,
        center: (f64, f64),
        image_size: (usize, usize),
        max_theta_deg: f64,
    ) -> Result<Self> {
        Self::new(RadialMap::Equidistant { focal }, center, image_size, max_theta_deg)
    }

    /// Ideal equidistant lens, f = 160 px on a 640x640 sensor, 100 degree half-FOV.
    pub fn default_equidistant() -> Self {
        Self::equidistant(160.0, (320.0, 320.0), (640, 640), 100.0)
            .expect("default model is valid")
    }

    /// The same lens scaled to a square image of `size` pixels.
    pub fn scaled_equidistant(size: usize) -> Result<Self> {
        let scale = size as f64 / 640.0;
        let c = size as f64 / 2.0;
        Self::equidistant(160.0 * scale, (c, c), (size, size), 100.0)
    }

    pub fn radial(&self) -> &RadialMap {
        &self.radial
    }

    pub fn center(&self) -> Vector2<f64> {
        self.center
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn width(&self) -> usize {
        self.image_size.0
    }

    pub fn height(&self) -> usize {
        self.image_size.1
    }

    pub fn max_theta(&self) -> f64 {
        self.max_theta
    }

    pub fn max_theta_deg(&self) -> f64 {
        self.max_theta_deg
    }

    /// Image radius of the field-of-view boundary, `r(max_theta)`.
    pub fn max_radius(&self) -> f64 {
        self.max_radius
    }

    pub fn radius(&self, theta: f64) -> f64 {
        self.radial.radius(theta)
    }

    /// Incidence angle of a camera-frame direction.
    pub fn incidence_angle(point: &Point3<f64>) -> f64 {
        point.x.hypot(point.y).atan2(point.z)
    }

    /// Projects a camera-frame point to a pixel. Only the ray direction matters.
    pub fn project(&self, point: &Point3<f64>) -> Result<Point2<f64>> {
        let rho = point.x.hypot(point.y);
        if rho == 0.0 && point.z == 0.0 {
            return Err(Error::DegenerateRay);
        }
        let theta = rho.atan2(point.z);
        if theta > self.max_theta {
            return Err(Error::OutOfFov {
                theta,
                max_theta: self.max_theta,
            });
        }
        if rho == 0.0 {
            // On the optical axis, or straight behind for a full-sphere lens
            // (azimuth undefined, +x chosen).
            let r = self.radial.radius(theta);
            return Ok(Point2::new(self.center.x + r, self.center.y));
        }
        let r = self.radial.radius(theta);
        Ok(Point2::new(
            self.center.x + r * point.x / rho,
            self.center.y + r * point.y / rho,
        ))
    }

    /// Projection plus its 2x3 Jacobian with respect to the point.
    ///
    /// With `clamp_to_fov`, points beyond `max_theta` are mapped onto the
    /// field-of-view boundary along their azimuth (radius fixed at
    /// `r(max_theta)`) instead of failing.
    pub fn project_with_jacobian(
        &self,
        point: &Point3<f64>,
        clamp_to_fov: bool,
    ) -> Result<(Point2<f64>, Matrix2x3<f64>)> {
        let (x, y, z) = (point.x, point.y, point.z);
        let rho2 = x * x + y * y;
        let rho = rho2.sqrt();
        let norm2 = rho2 + z * z;
        if norm2 == 0.0 {
            return Err(Error::DegenerateRay);
        }
        let theta = rho.atan2(z);
        let clamped = theta > self.max_theta;
        if clamped && !clamp_to_fov {
            return Err(Error::OutOfFov {
                theta,
                max_theta: self.max_theta,
            });
        }
        if rho <= 1e-12 * norm2.sqrt() {
            if z > 0.0 {
                let scale = self.radial.radius_derivative(0.0) / z;
                let jac = Matrix2x3::new(scale, 0.0, 0.0, 0.0, scale, 0.0);
                return Ok((Point2::new(self.center.x, self.center.y), jac));
            }
            // Straight behind the camera: azimuth undefined, keep it fixed.
            let r = self.radial.radius(theta.min(self.max_theta));
            return Ok((
                Point2::new(self.center.x + r, self.center.y),
                Matrix2x3::zeros(),
            ));
        }
        let (r, dr_dtheta) = if clamped {
            (self.max_radius, 0.0)
        } else {
            (
                self.radial.radius(theta),
                self.radial.radius_derivative(theta),
            )
        };
        let ex = x / rho;
        let ey = y / rho;
        let dtheta = Vector3::new(z * x / (rho * norm2), z * y / (rho * norm2), -rho / norm2);
        let dr = dtheta * dr_dtheta;
        let rho3 = rho2 * rho;
        let dex = Vector3::new(y * y / rho3, -x * y / rho3, 0.0);
        let dey = Vector3::new(-x * y / rho3, x * x / rho3, 0.0);
        let row_u = dr * ex + dex * r;
        let row_v = dr * ey + dey * r;
        let jac = Matrix2x3::new(
            row_u.x, row_u.y, row_u.z, //
            row_v.x, row_v.y, row_v.z,
        );
        Ok((
            Point2::new(self.center.x + r * ex, self.center.y + r * ey),
            jac,
        ))
    }

    /// Inverts `r(theta)`. Closed form for equidistant lenses, bisection otherwise.
    pub fn theta_for_radius(&self, radius: f64) -> Result<f64> {
        if radius > self.max_radius * (1.0 + 1e-12) {
            return Err(Error::OutOfFov {
                theta: f64::NAN,
                max_theta: self.max_theta,
            });
        }
        let theta = match &self.radial {
            RadialMap::Equidistant { focal } => radius / focal,
            RadialMap::Polynomial { .. } => {
                let (mut lo, mut hi) = (0.0, self.max_theta);
                while hi - lo > THETA_TOLERANCE {
                    let mid = 0.5 * (lo + hi);
                    if self.radial.radius(mid) < radius {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            }
        };
        Ok(theta.min(self.max_theta))
    }

    /// Unit ray direction for a pixel.
    pub fn ray_direction(&self, pixel: &Point2<f64>) -> Result<Vector3<f64>> {
        let offset = pixel.coords - self.center;
        let radius = offset.norm();
        let theta = self.theta_for_radius(radius)?;
        if radius == 0.0 {
            return Ok(Vector3::z());
        }
        let s = theta.sin() / radius;
        Ok(Vector3::new(offset.x * s, offset.y * s, theta.cos()))
    }

    /// Point at Euclidean distance `ray_distance` along the pixel's ray.
    pub fn unproject(&self, pixel: &Point2<f64>, ray_distance: f64) -> Result<Point3<f64>> {
        if !(ray_distance.is_finite() && ray_distance > 0.0) {
            return Err(Error::NonPositiveDepth(ray_distance));
        }
        let dir = self.ray_direction(pixel)?;
        Ok(Point3::from(dir * ray_distance))
    }

    /// Whether a pixel falls inside the image rectangle (pixel centers on integers).
    pub fn contains_pixel(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= -0.5
            && pixel.y >= -0.5
            && pixel.x < self.image_size.0 as f64 - 0.5
            && pixel.y < self.image_size.1 as f64 - 0.5
    }

    pub fn to_calibration(&self) -> CalibrationDoc {
        let (kind, focal, poly_coeffs) = match &self.radial {
            RadialMap::Equidistant { focal } => (LensKind::Equidistant, Some(*focal), None),
            RadialMap::Polynomial { coeffs } => (LensKind::Polynomial, None, Some(coeffs.clone())),
        };
        CalibrationDoc {
            kind,
            focal,
            poly_coeffs,
            center: [self.center.x, self.center.y],
            image_size: [self.image_size.0, self.image_size.1],
            max_theta_deg: self.max_theta_deg,
        }
    }

    pub fn from_calibration(doc: &CalibrationDoc) -> Result<Self> {
        let radial = match doc.kind {
            LensKind::Equidistant => RadialMap::Equidistant {
                focal: doc.focal.ok_or_else(|| {
                    Error::Parse("equidistant calibration requires `focal`".into())
                })?,
            },
            LensKind::Polynomial => RadialMap::Polynomial {
                coeffs: doc.poly_coeffs.clone().ok_or_else(|| {
                    Error::Parse("polynomial calibration requires `poly_coeffs`".into())
                })?,
            },
        };
        Self::new(
            radial,
            (doc.center[0], doc.center[1]),
            (doc.image_size[0], doc.image_size[1]),
            doc.max_theta_deg,
        )
    }

    /// Parses a JSON calibration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CalibrationDoc =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_calibration(&doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_calibration()).expect("calibration serializes")
    }

    pub fn load_calibration(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save_calibration(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_monotone(radial: &RadialMap, max_theta: f64) -> Result<()> {
    let mut prev = radial.radius(0.0);
    for i in 1..=MONOTONE_SAMPLES {
        let theta = max_theta * i as f64 / MONOTONE_SAMPLES as f64;
        let r = radial.radius(theta);
        if !(r > prev) {
            return Err(Error::InvalidCalibration(format!(
                "radius function is not strictly increasing near theta = {theta:.4} rad"
            )));
        }
        prev = r;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LensKind {
    Equidistant,
    Polynomial,
}

/// On-disk calibration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationDoc {
    pub kind: LensKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly_coeffs: Option<Vec<f64>>,
    pub center: [f64; 2],
    pub image_size: [usize; 2],
    pub max_theta_deg: f64,
}
