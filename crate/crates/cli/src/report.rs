//! Per-frame evaluation rows and their JSON/CSV serialization.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameReport {
    pub frame: String,
    pub kind: String,
    pub mpjpe_mm: Option<f64>,
    pub pa_mpjpe_mm: Option<f64>,
    pub ba_mpjpe_mm: Option<f64>,
    pub contact: Option<bool>,
    pub penetration_free: Option<bool>,
    pub abs_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub abs_rel_body: Option<f64>,
    pub rmse_body: Option<f64>,
    pub occupied_voxels: Option<usize>,
    pub error: Option<String>,
}

impl FrameReport {
    pub fn failed(frame: &str, kind: &str, error: String) -> Self {
        Self {
            frame: frame.into(),
            kind: kind.into(),
            mpjpe_mm: None,
            pa_mpjpe_mm: None,
            ba_mpjpe_mm: None,
            contact: None,
            penetration_free: None,
            abs_rel: None,
            rmse: None,
            abs_rel_body: None,
            rmse_body: None,
            occupied_voxels: None,
            error: Some(error),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub frames: usize,
    pub failed_frames: usize,
    pub mpjpe_mm: Option<f64>,
    pub pa_mpjpe_mm: Option<f64>,
    pub ba_mpjpe_mm: Option<f64>,
    /// Percentage of frames whose pose touches the scene.
    pub contact_pct: Option<f64>,
    pub penetration_free_pct: Option<f64>,
    pub abs_rel: Option<f64>,
    pub rmse: Option<f64>,
    pub abs_rel_body: Option<f64>,
    pub rmse_body: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub inpaint: bool,
    pub voxel_resolution: usize,
    pub summary: Summary,
    pub frames: Vec<FrameReport>,
}

fn mean<T>(rows: &[FrameReport], field: impl Fn(&FrameReport) -> Option<T>, to_f64: impl Fn(T) -> f64) -> Option<f64> {
    let values: Vec<f64> = rows.iter().filter_map(|r| field(r).map(&to_f64)).collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

impl Report {
    /// Sorts rows by frame id and computes the summary.
    pub fn new(inpaint: bool, voxel_resolution: usize, mut frames: Vec<FrameReport>) -> Self {
        frames.sort_by(|a, b| a.frame.cmp(&b.frame));
        let id = |v: f64| v;
        let pct = |b: bool| if b { 100.0 } else { 0.0 };
        let summary = Summary {
            frames: frames.len(),
            failed_frames: frames.iter().filter(|r| r.error.is_some()).count(),
            mpjpe_mm: mean(&frames, |r| r.mpjpe_mm, id),
            pa_mpjpe_mm: mean(&frames, |r| r.pa_mpjpe_mm, id),
            ba_mpjpe_mm: mean(&frames, |r| r.ba_mpjpe_mm, id),
            contact_pct: mean(&frames, |r| r.contact, pct),
            penetration_free_pct: mean(&frames, |r| r.penetration_free, pct),
            abs_rel: mean(&frames, |r| r.abs_rel, id),
            rmse: mean(&frames, |r| r.rmse, id),
            abs_rel_body: mean(&frames, |r| r.abs_rel_body, id),
            rmse_body: mean(&frames, |r| r.rmse_body, id),
        };
        Self {
            inpaint,
            voxel_resolution,
            summary,
            frames,
        }
    }

    pub fn has_failures(&self) -> bool {
        self.summary.failed_frames > 0
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for row in &self.frames {
            writer.serialize(row)?;
        }
        Ok(String::from_utf8(writer.into_inner()?)?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let json = dir.join("report.json");
        fs::write(&json, self.to_json()).with_context(|| format!("writing {}", json.display()))?;
        let csv = dir.join("report.csv");
        fs::write(&csv, self.to_csv()?).with_context(|| format!("writing {}", csv.display()))?;
        Ok(())
    }
}
