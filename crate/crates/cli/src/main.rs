use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use egoscene_cli::commands::{EvalInputs, OptimizeInputs};
use egoscene_cli::{cmd_eval, cmd_fixture, cmd_generate, cmd_inpaint, cmd_optimize, cmd_run, RunConfig};

/// Scene-aware egocentric pose estimation toolkit.
#[derive(Parser)]
#[command(name = "egoscene", version)]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset.
    Generate {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Inpaint, run the oracle pipeline and score every dataset frame.
    Run {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Use the depth with the body as scene depth instead of inpainting.
        #[arg(long)]
        no_inpaint: bool,
        /// Also write depth maps before and after inpainting as PGM.
        #[arg(long)]
        visualize: bool,
        #[command(flatten)]
        voxel: VoxelFlags,
    },
    /// Fill the body region of a depth map.
    Inpaint {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refine a pose against detections and a scene point cloud.
    Optimize {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
        #[command(flatten)]
        weights: WeightFlags,
    },
    /// Write a floating-pose optimization fixture.
    Fixture {
        /// Height of the initial pose above the floor, meters.
        #[arg(long, default_value_t = 0.03)]
        float_height: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted pose against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Scene point cloud (PLY) for the contact check.
        #[arg(long)]
        cloud: Option<PathBuf>,
        /// Scene depth map for the penetration check.
        #[arg(long, requires = "calibration")]
        scene_depth: Option<PathBuf>,
        #[arg(long)]
        calibration: Option<PathBuf>,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct VoxelFlags {
    #[arg(long)]
    side: Option<f64>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    voxel_epsilon: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct WeightFlags {
    #[arg(long)]
    lambda_r: Option<f64>,
    #[arg(long)]
    lambda_j: Option<f64>,
    #[arg(long)]
    lambda_c: Option<f64>,
    #[arg(long)]
    contact_epsilon: Option<f64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Generate { out, frames, seed, image_size, jitter } => {
            cfg.output = out.or(cfg.output);
            set(&mut cfg.frames, frames);
            set(&mut cfg.seed, seed);
            set(&mut cfg.image_size, image_size);
            set(&mut cfg.jitter, jitter);
            println!("{}", cmd_generate(&cfg)?.display());
        }
        Command::Run { dataset, out, calibration, no_inpaint, visualize, voxel } => {
            cfg.dataset = dataset.or(cfg.dataset);
            cfg.output = out.or(cfg.output);
            cfg.calibration = calibration.or(cfg.calibration);
            cfg.inpaint &= !no_inpaint;
            cfg.visualize |= visualize;
            set(&mut cfg.voxel.side, voxel.side);
            set(&mut cfg.voxel.resolution, voxel.resolution);
            set(&mut cfg.voxel.epsilon, voxel.voxel_epsilon);
            set(&mut cfg.sigma, voxel.sigma);
            set(&mut cfg.beta, voxel.beta);
            let outcome = cmd_run(&cfg)?;
            println!("{}", outcome.report_path.display());
            if outcome.report.has_failures() {
                eprintln!("{} frame(s) failed", outcome.report.summary.failed_frames);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Inpaint { depth, mask, out } => {
            let stats = cmd_inpaint(&depth, &mask, &out)?;
            log::info!("filled {} px in {} sweeps (residual {:.3e})", stats.filled, stats.sweeps, stats.residual);
            println!("{}", out.display());
        }
        Command::Optimize { pose, detections, cloud, calibration, out, max_iters, weights } => {
            cfg.output = out.or(cfg.output);
            set(&mut cfg.max_iters, max_iters);
            set(&mut cfg.weights.lambda_r, weights.lambda_r);
            set(&mut cfg.weights.lambda_j, weights.lambda_j);
            set(&mut cfg.weights.lambda_c, weights.lambda_c);
            set(&mut cfg.weights.epsilon, weights.contact_epsilon);
            let inputs = OptimizeInputs {
                pose: &pose,
                detections: &detections,
                cloud: &cloud,
                calibration: &calibration,
            };
            let outcome = cmd_optimize(&inputs, &cfg)?;
            log::info!(
                "{} accepted steps, contact energy {:.3e} -> {:.3e}",
                outcome.trace.accepted_steps(),
                outcome.initial_contact,
                outcome.final_contact
            );
            println!("{}", outcome.trace_path.display());
            println!("{}", outcome.pose_path.display());
        }
        Command::Fixture { float_height, out } => {
            cmd_fixture(float_height, &out)?;
            println!("{}", out.display());
        }
        Command::Eval { pred, gt, cloud, scene_depth, calibration, out } => {
            let inputs = EvalInputs {
                pred: &pred,
                gt: &gt,
                cloud: cloud.as_deref(),
                scene_depth: scene_depth.as_deref(),
                calibration: calibration.as_deref(),
            };
            let json = serde_json::to_string_pretty(&cmd_eval(&inputs)?)? + "\n";
            match out {
                Some(path) => std::fs::write(&path, json)?,
                None => print!("{json}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
