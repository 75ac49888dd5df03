//! Depth maps, body masks, harmonic inpainting and depth losses.
//!
//! Depth values are Euclidean ray distances in meters. Depth maps imported
//! from elsewhere are frequently z-depth; convert before use.

use std::path::Path;

use nalgebra::{Point2, Point3};
use rayon::prelude::*;

use crate::camera::FisheyeModel;
use crate::container::{Array, ArrayData};
use crate::error::{Error, Result};
use crate::io::Pgm;

/// Per-pixel ray distance with validity. Invalid pixels are stored as 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl DepthMap {
    /// Non-finite or non-positive entries are marked invalid.
    pub fn new(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(width * height, values.len()));
        }
        for v in &mut values {
            if !(v.is_finite() && *v > 0.0) {
                *v = 0.0;
            }
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> Option<f64> {
        self.get_flat(row * self.width + col)
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> Option<f64> {
        let v = self.values[i];
        (v > 0.0).then_some(v)
    }

    /// Raw storage, 0 meaning invalid.
    pub fn raw(&self) -> &[f64] {
        &self.values
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.values[i] > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    pub fn set(&mut self, col: usize, row: usize, value: Option<f64>) {
        self.values[row * self.width + col] = match value {
            Some(v) if v.is_finite() && v > 0.0 => v,
            _ => 0.0,
        };
    }

    fn same_shape(&self, other_w: usize, other_h: usize) -> Result<()> {
        if self.width != other_w || self.height != other_h {
            return Err(Error::shape(
                format!("{}x{}", self.width, self.height),
                format!("{other_w}x{other_h}"),
            ));
        }
        Ok(())
    }

    /// 16-bit PGM in millimeters, 0 = invalid. Values saturate at 65.535 m.
    pub fn to_pgm(&self) -> Pgm {
        let samples = self
            .values
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    (v * 1000.0).round().clamp(1.0, 65535.0) as u16
                } else {
                    0
                }
            })
            .collect();
        Pgm {
            width: self.width,
            height: self.height,
            maxval: 65535,
            samples,
        }
    }

    pub fn from_pgm(pgm: &Pgm) -> Result<Self> {
        let values = pgm.samples.iter().map(|&s| f64::from(s) / 1000.0).collect();
        Self::new(pgm.width, pgm.height, values)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_pgm().write(path)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&Pgm::read(path)?)
    }

    /// Full-precision container: dims `[height, width]`, f64, 0 = invalid.
    pub fn to_array(&self) -> Array {
        Array::new(vec![self.height, self.width], ArrayData::F64(self.values.clone()))
            .expect("dims match")
    }

    pub fn from_array(array: &Array) -> Result<Self> {
        let [height, width] = array.dims[..] else {
            return Err(Error::shape("rank-2 array", format!("rank {}", array.dims.len())));
        };
        Self::new(width, height, array.data.to_f64())
    }

    /// Reads either a `.pgm` or a binary container, chosen by extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            Self::read_pgm(path)
        } else {
            Self::from_array(&Array::read(path)?)
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
            self.write_pgm(path)
        } else {
            self.to_array().write(path)
        }
    }
}

/// Binary body mask, 1 = human body pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::shape(width * height, values.len()));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParams("mask values must be 0 or 1".into()));
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let values = (0..height)
            .flat_map(|r| (0..width).map(move |c| (c, r)))
            .map(|(c, r)| u8::from(f(c, r)))
            .collect();
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.values[row * self.width + col] == 1
    }

    #[inline]
    pub fn get_flat(&self, i: usize) -> bool {
        self.values[i] == 1
    }

    pub fn raw(&self) -> &[u8] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Square (Chebyshev) dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> SegMask {
        if radius == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // separable: rows then columns
        let mut tmp = vec![0u8; w * h];
        for r in 0..h {
            for c in 0..w {
                let lo = c.saturating_sub(radius);
                let hi = (c + radius).min(w - 1);
                tmp[r * w + c] = u8::from((lo..=hi).any(|cc| self.values[r * w + cc] == 1));
            }
        }
        let mut out = vec![0u8; w * h];
        for r in 0..h {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(h - 1);
            for c in 0..w {
                out[r * w + c] = u8::from((lo..=hi).any(|rr| tmp[rr * w + c] == 1));
            }
        }
        SegMask {
            width: w,
            height: h,
            values: out,
        }
    }

    /// 8-bit PGM, body = 255.
    pub fn to_pgm(&self) -> Pgm {
        Pgm {
            width: self.width,
            height: self.height,
            maxval: 255,
            samples: self.values.iter().map(|&v| u16::from(v) * 255).collect(),
        }
    }

    /// Any non-zero sample counts as body.
    pub fn from_pgm(pgm: &Pgm) -> Result<Self> {
        Self::new(
            pgm.width,
            pgm.height,
            pgm.samples.iter().map(|&s| u8::from(s != 0)).collect(),
        )
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_pgm().write(path)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pgm(&Pgm::read(path)?)
    }
}

/// Back-projects every valid pixel through its pixel center.
pub fn depth_to_pointcloud(model: &FisheyeModel, depth: &DepthMap) -> Vec<Point3<f64>> {
    let w = depth.width;
    (0..depth.len())
        .into_par_iter()
        .filter_map(|i| {
            let d = depth.get_flat(i)?;
            let px = Point2::new((i % w) as f64, (i / w) as f64);
            model.unproject(&px, d).ok()
        })
        .collect()
}

/// Invalidates body pixels: `(1 - S) * D^B` with invalid in place of zero.
pub fn mask_depth(depth_with_body: &DepthMap, seg: &SegMask) -> Result<DepthMap> {
    depth_with_body.same_shape(seg.width, seg.height)?;
    let values = depth_with_body
        .values
        .iter()
        .zip(&seg.values)
        .map(|(&d, &s)| if s == 1 { 0.0 } else { d })
        .collect();
    Ok(DepthMap {
        width: depth_with_body.width,
        height: depth_with_body.height,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintConfig {
    /// Body mask dilation in pixels before filling.
    pub dilation: usize,
    /// Stop once the largest per-sweep correction drops below this (meters).
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self {
            dilation: 2,
            tolerance: 1e-6,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintStats {
    pub filled: usize,
    pub sweeps: usize,
    pub residual: f64,
    pub converged: bool,
}

/// Harmonic fill of the (dilated) body region with default settings.
pub fn inpaint_depth(masked: &DepthMap, seg: &SegMask) -> Result<DepthMap> {
    inpaint_depth_with(masked, seg, &InpaintConfig::default()).map(|(d, _)| d)
}

/// Fills every pixel of the dilated mask by solving the discrete Laplace
/// equation with the remaining valid pixels as Dirichlet boundary.
///
/// Invalid pixels outside the mask act as a zero-flux (Neumann) boundary.
/// Mask components that never touch a valid pixel stay invalid. The solve is
/// red-black successive over-relaxation, so the result does not depend on
/// sweep scheduling.
pub fn inpaint_depth_with(
    masked: &DepthMap,
    seg: &SegMask,
    config: &InpaintConfig,
) -> Result<(DepthMap, InpaintStats)> {
    masked.same_shape(seg.width, seg.height)?;
    let (w, h) = (masked.width, masked.height);
    let region = seg.dilate(config.dilation);

    const OUTSIDE: u8 = 0;
    const KNOWN: u8 = 1;
    const UNKNOWN: u8 = 2;
    let state: Vec<u8> = (0..w * h)
        .map(|i| {
            if region.values[i] == 1 {
                UNKNOWN
            } else if masked.is_valid(i) {
                KNOWN
            } else {
                OUTSIDE
            }
        })
        .collect();
    if !state.contains(&KNOWN) {
        return Err(Error::EmptyBoundary);
    }

    let state = &state;
    let neighbors = move |i: usize| {
        let (c, r) = (i % w, i / w);
        let mut out = [usize::MAX; 4];
        if c > 0 {
            out[0] = i - 1;
        }
        if c + 1 < w {
            out[1] = i + 1;
        }
        if r > 0 {
            out[2] = i - w;
        }
        if r + 1 < h {
            out[3] = i + w;
        }
        out.into_iter()
            .filter(move |&j| j != usize::MAX && state[j] != OUTSIDE)
    };

    // Unknown pixels connected to the boundary, found by flooding from it.
    let mut reachable = vec![false; w * h];
    let mut stack: Vec<usize> = (0..w * h)
        .filter(|&i| state[i] == UNKNOWN && neighbors(i).any(|j| state[j] == KNOWN))
        .collect();
    for &i in &stack {
        reachable[i] = true;
    }
    while let Some(i) = stack.pop() {
        for j in neighbors(i) {
            if state[j] == UNKNOWN && !reachable[j] {
                reachable[j] = true;
                stack.push(j);
            }
        }
    }

    let mut values = masked.values.clone();
    let unknown: Vec<usize> = (0..w * h).filter(|&i| state[i] == UNKNOWN).collect();
    for &i in &unknown {
        values[i] = 0.0;
    }
    let active: Vec<usize> = unknown.iter().copied().filter(|&i| reachable[i]).collect();
    if active.is_empty() {
        let stats = InpaintStats {
            filled: 0,
            sweeps: 0,
            residual: 0.0,
            converged: true,
        };
        return Ok((DepthMap { width: w, height: h, values }, stats));
    }

    let boundary: Vec<f64> = (0..w * h)
        .filter(|&i| state[i] == KNOWN && neighbors(i).any(|j| state[j] == UNKNOWN))
        .map(|i| values[i])
        .collect();
    let start = boundary.iter().sum::<f64>() / boundary.len() as f64;
    for &i in &active {
        values[i] = start;
    }

    let (mut cmin, mut cmax, mut rmin, mut rmax) = (w, 0, h, 0);
    for &i in &active {
        let (c, r) = (i % w, i / w);
        cmin = cmin.min(c);
        cmax = cmax.max(c);
        rmin = rmin.min(r);
        rmax = rmax.max(r);
    }
    let extent = (cmax - cmin).max(rmax - rmin) + 1;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / (extent as f64 + 1.0)).sin());

    let (red, black): (Vec<usize>, Vec<usize>) =
        active.iter().partition(|&&i| (i % w + i / w) % 2 == 0);
    let links: Vec<Vec<usize>> = (0..w * h)
        .map(|i| {
            if reachable[i] {
                neighbors(i).collect()
            } else {
                Vec::new()
            }
        })
        .collect();

    let mut sweeps = 0;
    let mut residual = f64::INFINITY;
    while sweeps < config.max_sweeps {
        sweeps += 1;
        residual = 0.0;
        for color in [&red, &black] {
            for &i in color.iter() {
                let nb = &links[i];
                let avg = nb.iter().map(|&j| values[j]).sum::<f64>() / nb.len() as f64;
                let delta = avg - values[i];
                residual = f64::max(residual, delta.abs());
                values[i] += omega * delta;
            }
        }
        if residual < config.tolerance {
            break;
        }
    }
    let converged = residual < config.tolerance;
    if !converged {
        log::warn!("inpainting stopped after {sweeps} sweeps with residual {residual:.3e}");
    }
    let stats = InpaintStats {
        filled: active.len(),
        sweeps,
        residual,
        converged,
    };
    Ok((DepthMap { width: w, height: h, values }, stats))
}

fn jointly_valid<'a>(
    a: &'a DepthMap,
    b: &'a DepthMap,
    region: Option<&'a SegMask>,
    want: bool,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    (0..a.len()).filter_map(move |i| {
        if region.is_some_and(|m| m.get_flat(i) != want) {
            return None;
        }
        Some((a.get_flat(i)?, b.get_flat(i)?))
    })
}

fn mean_squared(pairs: impl Iterator<Item = (f64, f64)>) -> Result<f64> {
    let (sum, count) = pairs.fold((0.0, 0usize), |(s, n), (p, g)| (s + (p - g) * (p - g), n + 1));
    if count == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(sum / count as f64)
}

/// Mean squared depth difference over jointly valid pixels.
pub fn scene_loss(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    pred.same_shape(gt.width, gt.height)?;
    mean_squared(jointly_valid(pred, gt, None, false))
}

/// Mean squared difference between the scene and body predictions over
/// non-body pixels.
pub fn consistency_loss(pred_scene: &DepthMap, pred_body: &DepthMap, seg: &SegMask) -> Result<f64> {
    pred_scene.same_shape(pred_body.width, pred_body.height)?;
    pred_scene.same_shape(seg.width, seg.height)?;
    mean_squared(jointly_valid(pred_scene, pred_body, Some(seg), false))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLossWeights {
    pub scene: f64,
    pub consistency: f64,
}

impl Default for DepthLossWeights {
    fn default() -> Self {
        Self {
            scene: 1.0,
            consistency: 1.0,
        }
    }
}

/// Weighted sum of the scene and consistency losses.
pub fn combined_depth_loss(
    pred_scene: &DepthMap,
    gt_scene: &DepthMap,
    pred_body: &DepthMap,
    seg: &SegMask,
    weights: DepthLossWeights,
) -> Result<f64> {
    Ok(weights.scene * scene_loss(pred_scene, gt_scene)?
        + weights.consistency * consistency_loss(pred_scene, pred_body, seg)?)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub rmse: f64,
    pub pixels: usize,
}

/// Abs-Rel and RMSE over jointly valid pixels.
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetrics> {
    depth_metrics_in(pred, gt, None)
}

/// Same as [`depth_metrics`], restricted to pixels where `region` is set.
pub fn depth_metrics_in(pred: &DepthMap, gt: &DepthMap, region: Option<&SegMask>) -> Result<DepthMetrics> {
    pred.same_shape(gt.width, gt.height)?;
    if let Some(m) = region {
        pred.same_shape(m.width, m.height)?;
    }
    let (abs, sq, n) = jointly_valid(pred, gt, region, true).fold(
        (0.0, 0.0, 0usize),
        |(a, s, n), (p, g)| (a + (p - g).abs() / g, s + (p - g) * (p - g), n + 1),
    );
    if n == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(DepthMetrics {
        abs_rel: abs / n as f64,
        rmse: (sq / n as f64).sqrt(),
        pixels: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize, holes: f64) -> DepthMap {
        let v = (0..w * h)
            .map(|_| if rng.gen_bool(holes) { 0.0 } else { rng.gen_range(0.5..4.0) })
            .collect();
        DepthMap::new(w, h, v).unwrap()
    }

    #[test]
    fn invalid_entries_are_normalized() {
        let d = DepthMap::new(3, 1, vec![1.0, f64::NAN, -2.0]).unwrap();
        assert_eq!(d.valid_count(), 1);
        assert_eq!(d.get(1, 0), None);
    }

    #[test]
    fn pointcloud_conventions() {
        let model = FisheyeModel::scaled_equidistant(64).unwrap();
        let shell = DepthMap::constant(64, 64, 3.0).unwrap();
        let cloud = depth_to_pointcloud(&model, &shell);
        assert!(!cloud.is_empty());
        for p in &cloud {
            assert_relative_eq!(p.coords.norm(), 3.0, epsilon = 1e-12);
        }
        let mut one = DepthMap::invalid(64, 64);
        one.set(32, 32, Some(2.0));
        assert_eq!(depth_to_pointcloud(&model, &one), vec![Point3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn masking() {
        let d = DepthMap::constant(4, 4, 2.0).unwrap();
        assert_eq!(mask_depth(&d, &SegMask::empty(4, 4)).unwrap(), d);
        let all = SegMask::from_fn(4, 4, |_, _| true);
        assert_eq!(mask_depth(&d, &all).unwrap().valid_count(), 0);
        let checker = SegMask::from_fn(4, 4, |c, r| (c + r) % 2 == 0);
        let m = mask_depth(&d, &checker).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.get(c, r).is_some(), (c + r) % 2 == 1);
            }
        }
        assert!(mask_depth(&d, &SegMask::empty(3, 4)).is_err());
    }

    #[test]
    fn dilation() {
        let m = SegMask::from_fn(7, 7, |c, r| c == 3 && r == 3).dilate(2);
        assert_eq!(m.count(), 25);
        assert!(m.get(1, 5) && !m.get(0, 3));
    }

    #[test]
    fn inpaint_constant_disk() {
        let (w, h) = (40, 30);
        let d = DepthMap::constant(w, h, 2.5).unwrap();
        let disk = SegMask::from_fn(w, h, |c, r| {
            let (dx, dy) = (c as f64 - 20.0, r as f64 - 15.0);
            dx * dx + dy * dy <= 64.0
        });
        let masked = mask_depth(&d, &disk).unwrap();
        let (out, stats) = inpaint_depth_with(&masked, &disk, &InpaintConfig::default()).unwrap();
        assert!(stats.converged);
        assert_eq!(out, d);
    }

    #[test]
    fn inpaint_linear_ramp() {
        let (w, h) = (48, 36);
        let ramp = |c: usize, r: usize| 1.0 + 0.03 * c as f64 + 0.017 * r as f64;
        let d = DepthMap::new(w, h, (0..w * h).map(|i| ramp(i % w, i / w)).collect()).unwrap();
        let rect = SegMask::from_fn(w, h, |c, r| (10..30).contains(&c) && (8..26).contains(&r));
        let masked = mask_depth(&d, &rect).unwrap();
        let out = inpaint_depth(&masked, &rect).unwrap();
        for r in 0..h {
            for c in 0..w {
                assert!((out.get(c, r).unwrap() - ramp(c, r)).abs() < 1e-4);
            }
        }
        // outside the dilated region nothing moves
        assert_eq!(out.get(5, 5), d.get(5, 5));
    }

    #[test]
    fn inpaint_needs_boundary() {
        let d = DepthMap::constant(8, 8, 1.0).unwrap();
        let all = SegMask::from_fn(8, 8, |_, _| true);
        let masked = mask_depth(&d, &all).unwrap();
        assert!(matches!(inpaint_depth(&masked, &all), Err(Error::EmptyBoundary)));
    }

    #[test]
    fn inpaint_leaves_isolated_components_invalid() {
        // a masked blob surrounded by invalid pixels has no boundary to fill from
        let (w, h) = (20, 10);
        let mut d = DepthMap::constant(w, h, 1.0).unwrap();
        for r in 0..h {
            for c in 10..w {
                d.set(c, r, None);
            }
        }
        let seg = SegMask::from_fn(w, h, |c, r| c == 16 && r == 5);
        let cfg = InpaintConfig { dilation: 1, ..Default::default() };
        let (out, stats) = inpaint_depth_with(&d, &seg, &cfg).unwrap();
        assert_eq!(stats.filled, 0);
        assert_eq!(out.get(16, 5), None);
    }

    #[test]
    fn inpaint_respects_maximum_principle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (w, h) = (32, 32);
        let d = random_map(&mut rng, w, h, 0.0);
        let seg = SegMask::from_fn(w, h, |c, r| (8..22).contains(&c) && (5..27).contains(&r));
        let (out, stats) = inpaint_depth_with(&d, &seg, &InpaintConfig::default()).unwrap();
        assert!(stats.converged);
        let region = seg.dilate(2);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..w * h {
            if !region.get_flat(i) {
                lo = lo.min(d.raw()[i]);
                hi = hi.max(d.raw()[i]);
            }
        }
        for i in 0..w * h {
            if region.get_flat(i) {
                let v = out.raw()[i];
                assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            } else {
                assert_eq!(out.raw()[i], d.raw()[i]);
            }
        }
    }

    #[test]
    fn losses_on_simple_cases() {
        let gt = DepthMap::constant(6, 4, 2.0).unwrap();
        assert_eq!(scene_loss(&gt, &gt).unwrap(), 0.0);
        let shifted = DepthMap::constant(6, 4, 2.1).unwrap();
        assert_relative_eq!(scene_loss(&shifted, &gt).unwrap(), 0.01, epsilon = 1e-12);
        assert!(matches!(
            scene_loss(&DepthMap::invalid(6, 4), &gt),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn consistency_loss_cases() {
        let (w, h) = (8, 6);
        let body = DepthMap::constant(w, h, 1.5).unwrap();
        let seg = SegMask::from_fn(w, h, |c, _| c < 2);
        assert_eq!(consistency_loss(&body, &body, &seg).unwrap(), 0.0);

        let mut inside = body.clone();
        for r in 0..h {
            inside.set(0, r, Some(9.0));
        }
        assert_eq!(consistency_loss(&inside, &body, &seg).unwrap(), 0.0);

        // 48 pixels, 36 background; 18 of them (columns 5..8) differ by 0.2
        let mut half = body.clone();
        for r in 0..h {
            for c in 5..8 {
                half.set(c, r, Some(1.7));
            }
        }
        let expected = 18.0 * 0.2f64.powi(2) / 36.0;
        assert_relative_eq!(consistency_loss(&half, &body, &seg).unwrap(), expected, epsilon = 1e-12);
        assert!(consistency_loss(&half, &body, &SegMask::empty(3, 3)).is_err());
        let combined = combined_depth_loss(&half, &body, &body, &seg, DepthLossWeights::default()).unwrap();
        // the scene term averages over all 48 pixels
        let scene = 18.0 * 0.2f64.powi(2) / 48.0;
        assert_relative_eq!(combined, scene + expected, epsilon = 1e-12);
    }

    #[test]
    fn depth_metric_cases() {
        let gt = DepthMap::constant(5, 5, 2.0).unwrap();
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.abs_rel, m.rmse), (0.0, 0.0));
        let pred = DepthMap::constant(5, 5, 2.2).unwrap();
        let m = depth_metrics(&pred, &gt).unwrap();
        assert_relative_eq!(m.abs_rel, 0.1, epsilon = 1e-12);
        assert_relative_eq!(m.rmse, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn metrics_match_direct_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (w, h) = (17, 13);
        let pred = random_map(&mut rng, w, h, 0.2);
        let gt = random_map(&mut rng, w, h, 0.2);
        let (mut abs, mut sq, mut n) = (0.0, 0.0, 0.0);
        for r in 0..h {
            for c in 0..w {
                if let (Some(p), Some(g)) = (pred.get(c, r), gt.get(c, r)) {
                    abs += (p - g).abs() / g;
                    sq += (p - g).powi(2);
                    n += 1.0;
                }
            }
        }
        let m = depth_metrics(&pred, &gt).unwrap();
        assert_relative_eq!(m.abs_rel, abs / n, epsilon = 1e-12);
        assert_relative_eq!(m.rmse, (sq / n).sqrt(), epsilon = 1e-12);
        assert_relative_eq!(scene_loss(&pred, &gt).unwrap(), sq / n, epsilon = 1e-12);
    }

    #[test]
    fn pgm_and_container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = random_map(&mut rng, 11, 7, 0.3);
        let bin = dir.path().join("d.bin");
        d.write(&bin).unwrap();
        assert_eq!(DepthMap::read(&bin).unwrap(), d);
        let pgm = dir.path().join("d.pgm");
        d.write(&pgm).unwrap();
        let back = DepthMap::read(&pgm).unwrap();
        for i in 0..d.len() {
            match (d.get_flat(i), back.get_flat(i)) {
                (Some(a), Some(b)) => assert!((a - b).abs() <= 0.0005 + 1e-12),
                (None, None) => {}
                other => panic!("validity changed: {other:?}"),
            }
        }
        let seg = SegMask::from_fn(11, 7, |c, r| c * r % 3 == 0);
        let mp = dir.path().join("m.pgm");
        seg.write_pgm(&mp).unwrap();
        assert_eq!(SegMask::read_pgm(&mp).unwrap(), seg);
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_order_free(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_map(&mut rng, 9, 9, 0.1);
            let b = random_map(&mut rng, 9, 9, 0.1);
            let m = depth_metrics(&a, &b).unwrap();
            prop_assert!(m.abs_rel >= 0.0 && m.rmse >= 0.0);
            // permuting pixels identically in both maps leaves the metric unchanged
            let perm = |d: &DepthMap| {
                DepthMap::new(9, 9, d.raw().iter().rev().copied().collect()).unwrap()
            };
            let mp = depth_metrics(&perm(&a), &perm(&b)).unwrap();
            prop_assert!((m.rmse - mp.rmse).abs() < 1e-12);
            prop_assert!((m.abs_rel - mp.abs_rel).abs() < 1e-12);
            prop_assert_eq!(scene_loss(&a, &a).unwrap(), 0.0);
        }
    }
}
