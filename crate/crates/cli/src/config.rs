//! Run configuration: JSON file defaults overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use egoscene::optimizer::EnergyWeights;
use egoscene::pipeline::PipelineConfig;
use egoscene::synth::DatasetSpec;
use egoscene::VoxelGridParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelSettings {
    pub side: f64,
    pub resolution: usize,
    pub epsilon: f64,
}

impl Default for VoxelSettings {
    fn default() -> Self {
        let p = VoxelGridParams::standard();
        Self {
            side: p.side(),
            resolution: p.resolution(),
            epsilon: p.epsilon(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset directory holding `manifest.json`.
    pub dataset: Option<PathBuf>,
    /// Calibration override; defaults to the dataset's own file.
    pub calibration: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub frames: usize,
    pub image_size: usize,
    pub jitter: f64,
    pub voxel: VoxelSettings,
    pub weights: EnergyWeights,
    pub sigma: f64,
    pub beta: f64,
    pub max_iters: usize,
    pub inpaint: bool,
    pub visualize: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let dataset = DatasetSpec::default();
        let pipeline = PipelineConfig::default();
        Self {
            dataset: None,
            calibration: None,
            output: None,
            seed: dataset.seed,
            frames: dataset.frames,
            image_size: dataset.image_size,
            jitter: dataset.jitter,
            voxel: VoxelSettings::default(),
            weights: EnergyWeights::default(),
            sigma: pipeline.sigma,
            beta: pipeline.beta,
            max_iters: 200,
            inpaint: true,
            visualize: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn voxel_params(&self) -> Result<VoxelGridParams> {
        Ok(VoxelGridParams::new(self.voxel.side, self.voxel.resolution, self.voxel.epsilon)?)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            bail!("sigma must be positive, got {}", self.sigma);
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            bail!("beta must be positive, got {}", self.beta);
        }
        Ok(PipelineConfig {
            params: self.voxel_params()?,
            sigma: self.sigma,
            beta: self.beta,
            ..Default::default()
        })
    }

    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.seed,
            frames: self.frames,
            image_size: self.image_size,
            jitter: self.jitter,
        }
    }

    pub fn dataset_dir(&self) -> Result<&Path> {
        let dir = self.dataset.as_deref().context("no dataset directory given")?;
        if !dir.is_dir() {
            bail!("dataset directory {} does not exist", dir.display());
        }
        Ok(dir)
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.output.as_deref().context("no output directory given")
    }

    /// Checks parameter invariants and that referenced inputs exist.
    pub fn validate(&self) -> Result<()> {
        self.pipeline()?;
        self.weights.validate()?;
        if let Some(cal) = &self.calibration {
            if !cal.is_file() {
                bail!("calibration file {} does not exist", cal.display());
            }
        }
        if let Some(dir) = &self.dataset {
            if !dir.is_dir() {
                bail!("dataset directory {} does not exist", dir.display());
            }
        }
        Ok(())
    }
}
