//! Two-stage training orchestration, evaluation, embedding export, the
//! domain probe, and the shared gradcheck fixtures.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod export;
pub mod gradchecks;
pub mod metrics;
pub mod optimizer;
pub mod probe;
pub mod train_image;
pub mod train_video;

pub use checkpoint::{
    load_image_checkpoint, load_video_checkpoint, save_image_checkpoint, save_video_checkpoint,
    ImageTrainState, VideoTrainState,
};
pub use config::{
    AblationFlags, AttentionConfig, DiscInit, LambdaSchedule, ModelConfig, OptimizerConfig,
    RunConfig, SpatialInit,
};
pub use eval::{evaluate, evaluate_image_state, evaluate_video_state, EvalMode, EvalReport};
pub use export::{centroid_spread, export_embeddings, sample_domain_embeddings, ExportSummary};
pub use gradchecks::gradcheck_suite;
pub use metrics::{read_metrics, MetricsRecord, Stage};
pub use probe::{train_domain_probe, ProbeReport};
pub use train_image::{init_image_state, train_image_stage, StageArtifacts};
pub use train_video::{init_video_state, train_video_stage};
