//! Run configuration. Every field lands in the run record; two runs with
//! equal configs and seeds produce identical metrics and checkpoints.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encoders::TemporalInit;
use crate::webdata::BatchSizes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialInit {
    /// Transfer and freeze the spatial filters of a trained image model.
    ImageModel,
    /// Freeze randomly initialized spatial filters instead (comparison run).
    Generic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscInit {
    /// Small seeded random weights (training default).
    Random,
    /// All-zero weights; every discriminator outputs exactly 0.5.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub attention: bool,
    pub domain_adaptation: bool,
    pub residual: bool,
    pub temporal_init: TemporalInit,
    pub spatial_init: SpatialInit,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            attention: true,
            domain_adaptation: true,
            residual: true,
            temporal_init: TemporalInit::Zero,
            spatial_init: SpatialInit::ImageModel,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate_image: f32,
    pub learning_rate_video: f32,
    pub momentum: f32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate_image: 0.03,
            learning_rate_video: 0.02,
            momentum: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Top-T pooling count.
    pub top_t: usize,
    /// Softmax temperature.
    pub tau: f64,
    /// Let score gradients flow into the encoder embeddings too.
    pub full_grad: bool,
    /// Learning-rate multiplier for the bilinear matrix. The weighted
    /// cross-entropy always profits from sharpening the weights onto the
    /// easiest examples, so W gets a much smaller step than the encoder to
    /// keep the weighting a gradual reallocation rather than a collapse.
    pub w_lr_scale: f32,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            top_t: 5,
            tau: 2.0,
            full_grad: false,
            w_lr_scale: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LambdaSchedule {
    /// Gradient reversal strength.
    pub value: f64,
    /// Fraction of the stage's steps over which lambda ramps 0 -> value;
    /// 0 keeps it constant.
    pub warmup_fraction: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule {
            value: 1.0,
            warmup_fraction: 0.3,
        }
    }
}

impl LambdaSchedule {
    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        let warm = (self.warmup_fraction * total_steps as f64).floor();
        if warm <= 0.0 || step as f64 >= warm {
            self.value
        } else {
            self.value * (step as f64 / warm)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub spatial_kernel: usize,
    pub temporal_kernel: usize,
    pub frames_per_chunk: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 32,
            stage_channels: vec![16, 32, 64],
            spatial_kernel: 3,
            temporal_kernel: 3,
            frames_per_chunk: 8,
            disc_hidden: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub optimizer: OptimizerConfig,
    /// Tradeoff between weighted classification and domain adaptation.
    pub beta: f64,
    pub attention: AttentionConfig,
    pub lambda: LambdaSchedule,
    pub steps_image: usize,
    pub steps_video: usize,
    pub eval_interval: usize,
    pub batch: BatchSizes,
    pub model: ModelConfig,
    pub disc_init: DiscInit,
    /// Write per-step attention weights to attention.jsonl.
    pub log_attention: bool,
    /// Path of the image checkpoint consumed by the video stage; unused when
    /// `ablation.spatial_init` is `generic`.
    pub image_checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("dataset"),
            seed: 0,
            ablation: AblationFlags::default(),
            optimizer: OptimizerConfig::default(),
            beta: 0.1,
            attention: AttentionConfig::default(),
            lambda: LambdaSchedule::default(),
            steps_image: 2000,
            steps_video: 1000,
            eval_interval: 500,
            batch: BatchSizes::default(),
            model: ModelConfig::default(),
            disc_init: DiscInit::Random,
            log_attention: false,
            image_checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn arch(&self, num_classes: usize) -> crate::encoders::ModelArch {
        crate::encoders::ModelArch {
            input_size: self.model.input_size,
            stage_channels: self.model.stage_channels.clone(),
            spatial_kernel: self.model.spatial_kernel,
            temporal_kernel: self.model.temporal_kernel,
            frames_per_chunk: self.model.frames_per_chunk,
            num_classes,
        }
    }

    /// Cross-checks the run config against the dataset it will consume.
    pub fn validate_against(&self, manifest: &crate::webdata::Manifest) -> crate::Result<()> {
        use crate::CoreError;
        if manifest.config.frame_size != self.model.input_size {
            return Err(CoreError::InvalidArgument(format!(
                "model.input_size {} does not match dataset frame_size {}",
                self.model.input_size, manifest.config.frame_size
            )));
        }
        if manifest.config.frames_per_chunk != self.model.frames_per_chunk {
            return Err(CoreError::InvalidArgument(format!(
                "model.frames_per_chunk {} does not match dataset frames_per_chunk {}",
                self.model.frames_per_chunk, manifest.config.frames_per_chunk
            )));
        }
        if self.ablation.attention {
            let t = self.attention.top_t;
            if t > self.batch.target_frames || t > self.batch.target_chunks {
                return Err(CoreError::InvalidArgument(format!(
                    "attention.top_t {} exceeds a target batch size ({} frames / {} chunks)",
                    t, self.batch.target_frames, self.batch.target_chunks
                )));
            }
            if self.attention.tau <= 0.0 {
                return Err(CoreError::InvalidArgument("attention.tau must be positive".into()));
            }
        }
        if self.eval_interval == 0 {
            return Err(CoreError::InvalidArgument("eval_interval must be positive".into()));
        }
        Ok(())
    }
}
