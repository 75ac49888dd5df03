//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use egoscene::depth::{
    depth_metrics, depth_metrics_in, depth_to_pointcloud, inpaint_depth_with, mask_depth, InpaintConfig,
    InpaintStats,
};
use egoscene::io::{read_ply, write_ply};
use egoscene::metrics::{
    ba_mpjpe, contact_rate, mpjpe, pa_mpjpe, penetration_free_rate, BoneTemplate, CONTACT_THRESHOLD,
    PENETRATION_MARGIN,
};
use egoscene::optimizer::{contact_energy, optimize_pose, Keypoints2D, OptimizationTrace};
use egoscene::pipeline::{run_pipeline, PipelineConfig, PipelineInput};
use egoscene::synth::{floor_float_fixture, generate_dataset, FrameEntry, Manifest, MANIFEST_FILE};
use egoscene::{DepthMap, FisheyeModel, Pose, SegMask};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::report::{FrameReport, Report};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Generates a synthetic dataset and returns the manifest path.
pub fn cmd_generate(cfg: &RunConfig) -> Result<PathBuf> {
    cfg.validate()?;
    let out = cfg.output_dir()?;
    let manifest = generate_dataset(&cfg.dataset_spec(), out)?;
    log::info!("generated {} frames in {}", manifest.frames.len(), out.display());
    Ok(out.join(MANIFEST_FILE))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report_path: PathBuf,
    pub report: Report,
}

struct FrameContext<'a> {
    root: &'a Path,
    manifest: &'a Manifest,
    model: &'a FisheyeModel,
    pipeline: PipelineConfig,
    template: BoneTemplate,
    inpaint: bool,
    vis_dir: Option<PathBuf>,
}

fn evaluate_frame(ctx: &FrameContext<'_>, entry: &FrameEntry) -> Result<FrameReport> {
    let frame = ctx.manifest.load_frame(ctx.root, entry)?;
    let masked = mask_depth(&frame.depth_body, &frame.mask)?;
    let scene_depth = if ctx.inpaint {
        let (filled, stats) = inpaint_depth_with(&masked, &frame.mask, &InpaintConfig::default())?;
        log::debug!("{}: inpainted {} px in {} sweeps", entry.id, stats.filled, stats.sweeps);
        filled
    } else {
        frame.depth_body.clone()
    };
    if let Some(dir) = &ctx.vis_dir {
        masked.write_pgm(dir.join(format!("{}_masked.pgm", entry.id)))?;
        scene_depth.write_pgm(dir.join(format!("{}_scene.pgm", entry.id)))?;
    }

    let output = run_pipeline(PipelineInput::GroundTruth(&frame.pose), &scene_depth, ctx.model, &ctx.pipeline, None)?;
    let pred = std::slice::from_ref(&output.pose);
    // plausibility is judged against the true scene geometry
    let cloud = depth_to_pointcloud(ctx.model, &frame.depth_scene);
    let overall = depth_metrics(&scene_depth, &frame.depth_scene)?;
    let body = depth_metrics_in(&scene_depth, &frame.depth_scene, Some(&frame.mask)).ok();

    Ok(FrameReport {
        frame: entry.id.clone(),
        kind: entry.kind.as_str().into(),
        mpjpe_mm: Some(mpjpe(&output.pose, &frame.pose)?),
        pa_mpjpe_mm: Some(pa_mpjpe(&output.pose, &frame.pose)?),
        ba_mpjpe_mm: Some(ba_mpjpe(&output.pose, &frame.pose, &ctx.template)?),
        contact: Some(contact_rate(pred, &cloud, CONTACT_THRESHOLD)? == 1.0),
        penetration_free: Some(penetration_free_rate(pred, &frame.depth_scene, ctx.model, PENETRATION_MARGIN)?.rate == 1.0),
        abs_rel: Some(overall.abs_rel),
        rmse: Some(overall.rmse),
        abs_rel_body: body.map(|m| m.abs_rel),
        rmse_body: body.map(|m| m.rmse),
        occupied_voxels: Some(output.diagnostics.occupied_voxels),
        error: None,
    })
}

/// Runs the oracle pipeline over every dataset frame and writes the report.
///
/// Frame-level failures become report rows; check [`Report::has_failures`].
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let root = cfg.dataset_dir()?;
    let out = cfg.output_dir()?;
    let manifest = Manifest::read(root.join(MANIFEST_FILE))?;
    let model = match &cfg.calibration {
        Some(path) => FisheyeModel::load_calibration(path)?,
        None => manifest.load_calibration(root)?,
    };
    create_dir(out)?;
    let vis_dir = cfg.visualize.then(|| out.join("vis"));
    if let Some(dir) = &vis_dir {
        create_dir(dir)?;
    }
    let ctx = FrameContext {
        root,
        manifest: &manifest,
        model: &model,
        pipeline: cfg.pipeline()?,
        template: BoneTemplate::canonical(),
        inpaint: cfg.inpaint,
        vis_dir,
    };
    let rows: Vec<FrameReport> = manifest
        .frames
        .par_iter()
        .map(|entry| {
            evaluate_frame(&ctx, entry).unwrap_or_else(|e| {
                log::warn!("{}: {e:#}", entry.id);
                FrameReport::failed(&entry.id, entry.kind.as_str(), format!("{e:#}"))
            })
        })
        .collect();
    let report = Report::new(cfg.inpaint, cfg.voxel.resolution, rows);
    report.write(out)?;
    log::info!(
        "{} frames, {} failed, MPJPE {:?} mm",
        report.summary.frames,
        report.summary.failed_frames,
        report.summary.mpjpe_mm
    );
    Ok(RunOutcome {
        report_path: out.join("report.json"),
        report,
    })
}

/// Masks the body out of a depth map, fills it, and writes the result.
pub fn cmd_inpaint(depth: &Path, mask: &Path, output: &Path) -> Result<InpaintStats> {
    let depth = DepthMap::read(depth)?;
    let seg = SegMask::read_pgm(mask)?;
    let masked = mask_depth(&depth, &seg)?;
    let (filled, stats) = inpaint_depth_with(&masked, &seg, &InpaintConfig::default())?;
    if let Some(parent) = output.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    filled.write(output)?;
    Ok(stats)
}

pub struct OptimizeInputs<'a> {
    pub pose: &'a Path,
    pub detections: &'a Path,
    pub cloud: &'a Path,
    pub calibration: &'a Path,
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub trace_path: PathBuf,
    pub pose_path: PathBuf,
    pub trace: OptimizationTrace,
    pub initial_contact: f64,
    pub final_contact: f64,
}

pub fn trace_csv(trace: &OptimizationTrace) -> Result<String> {
    #[derive(Serialize)]
    struct Row {
        iteration: usize,
        total: f64,
        reprojection: f64,
        prior: f64,
        contact: f64,
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for (iteration, e) in trace.energies.iter().enumerate() {
        writer.serialize(Row {
            iteration,
            total: e.total,
            reprojection: e.reprojection,
            prior: e.prior,
            contact: e.contact,
        })?;
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}

/// Refines a pose against detections and a scene cloud; writes `trace.csv`
/// and `pose.json` into the output directory.
pub fn cmd_optimize(inputs: &OptimizeInputs<'_>, cfg: &RunConfig) -> Result<OptimizeOutcome> {
    cfg.weights.validate()?;
    if cfg.max_iters == 0 {
        bail!("max_iters must be at least 1");
    }
    let out = cfg.output_dir()?;
    let init = Pose::read(inputs.pose)?;
    let detections = Keypoints2D::read(inputs.detections)?;
    let cloud = read_ply(inputs.cloud)?;
    let model = FisheyeModel::load_calibration(inputs.calibration)?;
    let trace = optimize_pose(&init, &detections, &cloud, &model, &cfg.weights, cfg.max_iters)?.into_result()?;

    create_dir(out)?;
    let trace_path = out.join("trace.csv");
    fs::write(&trace_path, trace_csv(&trace)?).with_context(|| format!("writing {}", trace_path.display()))?;
    let pose_path = out.join("pose.json");
    trace.final_pose.write(&pose_path)?;
    let eps = cfg.weights.epsilon;
    Ok(OptimizeOutcome {
        initial_contact: contact_energy(&init, &cloud, eps)?,
        final_contact: contact_energy(&trace.final_pose, &cloud, eps)?,
        trace_path,
        pose_path,
        trace,
    })
}

/// Writes a floor-float optimization fixture: initial and true poses,
/// detections, floor cloud and calibration.
pub fn cmd_fixture(float_height: f64, out: &Path) -> Result<()> {
    let fx = floor_float_fixture(float_height)?;
    create_dir(out)?;
    fx.init.write(out.join("init_pose.json"))?;
    fx.ground_truth.write(out.join("gt_pose.json"))?;
    fx.detections.write(out.join("detections.json"))?;
    write_ply(out.join("cloud.ply"), &fx.cloud)?;
    fx.model.save_calibration(out.join("calibration.json"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mpjpe_mm: f64,
    pub pa_mpjpe_mm: f64,
    pub ba_mpjpe_mm: f64,
    pub contact: Option<bool>,
    pub penetration_free: Option<bool>,
}

pub struct EvalInputs<'a> {
    pub pred: &'a Path,
    pub gt: &'a Path,
    pub cloud: Option<&'a Path>,
    pub scene_depth: Option<&'a Path>,
    pub calibration: Option<&'a Path>,
}

/// Scores a predicted pose against ground truth, plus plausibility when a
/// scene cloud or scene depth map is supplied.
pub fn cmd_eval(inputs: &EvalInputs<'_>) -> Result<EvalReport> {
    let pred = Pose::read(inputs.pred)?;
    let gt = Pose::read(inputs.gt)?;
    let contact = inputs
        .cloud
        .map(|path| -> Result<bool> {
            let cloud = read_ply(path)?;
            Ok(contact_rate(std::slice::from_ref(&pred), &cloud, CONTACT_THRESHOLD)? == 1.0)
        })
        .transpose()?;
    let penetration_free = match (inputs.scene_depth, inputs.calibration) {
        (Some(depth), Some(cal)) => {
            let depth = DepthMap::read(depth)?;
            let model = FisheyeModel::load_calibration(cal)?;
            Some(penetration_free_rate(std::slice::from_ref(&pred), &depth, &model, PENETRATION_MARGIN)?.rate == 1.0)
        }
        (None, None) => None,
        _ => bail!("penetration needs both --scene-depth and --calibration"),
    };
    Ok(EvalReport {
        mpjpe_mm: mpjpe(&pred, &gt)?,
        pa_mpjpe_mm: pa_mpjpe(&pred, &gt)?,
        ba_mpjpe_mm: ba_mpjpe(&pred, &gt, &BoneTemplate::canonical())?,
        contact,
        penetration_free,
    })
}
