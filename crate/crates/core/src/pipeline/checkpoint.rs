//! Checkpoint serialization: a tensor container with reserved parameter
//! names plus a JSON sidecar describing the architecture, temporal init
//! mode, and frozen parameter set.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adversarial::{DomainPair, MultiLayerDiscriminatorState};
use crate::attention::AttentionParams;
use crate::encoders::{Encoder2dState, Encoder3dState, ModelArch, TemporalInit};
use crate::numerics::container::{load_tensors, save_tensors};
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

use super::config::AttentionConfig;

/// Everything the image stage trains.
#[derive(Debug, Clone)]
pub struct ImageTrainState {
    pub encoder: Encoder2dState,
    pub attention: AttentionParams,
    pub disc_image_target: MultiLayerDiscriminatorState,
    pub disc_video_target: MultiLayerDiscriminatorState,
    pub disc_image_video: MultiLayerDiscriminatorState,
}

/// Everything the video stage trains (spatial filters stay frozen).
#[derive(Debug, Clone)]
pub struct VideoTrainState {
    pub encoder: Encoder3dState,
    pub attention: AttentionParams,
    pub disc_video_target: MultiLayerDiscriminatorState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub kind: String,
    pub architecture: ModelArch,
    pub init_mode: Option<TemporalInit>,
    pub residual: Option<bool>,
    pub frozen_names: Vec<String>,
    pub attention: AttentionConfig,
    pub disc_hidden: usize,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}

fn collect(params: Vec<(String, &Tensor)>, map: &mut BTreeMap<String, Tensor>) {
    for (name, t) in params {
        map.insert(name, t.clone());
    }
}

fn restore(params: Vec<(String, &mut Tensor)>, map: &BTreeMap<String, Tensor>) -> Result<()> {
    for (name, t) in params {
        let src = map
            .get(&name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing tensor {name}")))?;
        if src.shape() != t.shape() {
            return Err(CoreError::Checkpoint(format!(
                "{name}: shape {:?} in file, expected {:?}",
                src.shape(),
                t.shape()
            )));
        }
        let grad = t.requires_grad;
        *t = src.clone();
        t.requires_grad = grad;
    }
    Ok(())
}

pub fn save_image_checkpoint(
    path: &Path,
    state: &ImageTrainState,
    attention_cfg: &AttentionConfig,
    disc_hidden: usize,
) -> Result<()> {
    let mut map = BTreeMap::new();
    collect(state.encoder.named_params(), &mut map);
    map.insert("attention.w".to_string(), state.attention.w.clone());
    collect(state.disc_image_target.named_params(), &mut map);
    collect(state.disc_video_target.named_params(), &mut map);
    collect(state.disc_image_video.named_params(), &mut map);
    save_tensors(path, &map)?;
    let sidecar = CheckpointSidecar {
        kind: "image".to_string(),
        architecture: state.encoder.arch.clone(),
        init_mode: None,
        residual: None,
        frozen_names: Vec::new(),
        attention: *attention_cfg,
        disc_hidden,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_image_checkpoint(path: &Path) -> Result<(ImageTrainState, CheckpointSidecar)> {
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
            CoreError::Checkpoint(format!("missing sidecar for {}: {e}", path.display()))
        })?)?;
    if sidecar.kind != "image" {
        return Err(CoreError::Checkpoint(format!(
            "expected an image checkpoint, found kind {:?}",
            sidecar.kind
        )));
    }
    let map = load_tensors(path)?;
    let mut encoder = Encoder2dState::new_seeded(sidecar.architecture.clone(), 0)?;
    restore(encoder.named_params_mut(), &map)?;
    let mut attention = AttentionParams::identity(
        sidecar.architecture.embedding_dim(),
        sidecar.attention.top_t,
        sidecar.attention.tau,
    );
    attention.full_grad = sidecar.attention.full_grad;
    attention.w = map
        .get("attention.w")
        .ok_or_else(|| CoreError::Checkpoint("missing tensor attention.w".into()))?
        .clone()
        .with_grad();
    let dims = sidecar.architecture.tap_dims();
    let mut disc_image_target =
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, sidecar.disc_hidden, 0);
    let mut disc_video_target =
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, sidecar.disc_hidden, 0);
    let mut disc_image_video =
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageWebVideo, &dims, sidecar.disc_hidden, 0);
    restore(disc_image_target.named_params_mut(), &map)?;
    restore(disc_video_target.named_params_mut(), &map)?;
    restore(disc_image_video.named_params_mut(), &map)?;
    Ok((
        ImageTrainState {
            encoder,
            attention,
            disc_image_target,
            disc_video_target,
            disc_image_video,
        },
        sidecar,
    ))
}

pub fn save_video_checkpoint(
    path: &Path,
    state: &VideoTrainState,
    attention_cfg: &AttentionConfig,
    disc_hidden: usize,
) -> Result<()> {
    let mut map = BTreeMap::new();
    collect(state.encoder.named_params(), &mut map);
    map.insert("attention.w".to_string(), state.attention.w.clone());
    collect(state.disc_video_target.named_params(), &mut map);
    save_tensors(path, &map)?;
    let sidecar = CheckpointSidecar {
        kind: "video".to_string(),
        architecture: state.encoder.arch.clone(),
        init_mode: Some(state.encoder.init_mode),
        residual: state.encoder.blocks.first().map(|b| b.residual),
        frozen_names: state.encoder.frozen_names(),
        attention: *attention_cfg,
        disc_hidden,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn load_video_checkpoint(path: &Path) -> Result<(VideoTrainState, CheckpointSidecar)> {
    let sidecar: CheckpointSidecar =
        serde_json::from_str(&std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
            CoreError::Checkpoint(format!("missing sidecar for {}: {e}", path.display()))
        })?)?;
    if sidecar.kind != "video" {
        return Err(CoreError::Checkpoint(format!(
            "expected a video checkpoint, found kind {:?}",
            sidecar.kind
        )));
    }
    let map = load_tensors(path)?;
    let mut encoder = Encoder3dState::new_seeded(
        sidecar.architecture.clone(),
        sidecar.residual.unwrap_or(true),
        sidecar.init_mode.unwrap_or(TemporalInit::Zero),
        0,
    )?;
    restore(encoder.named_params_mut(), &map)?;
    let mut attention = AttentionParams::identity(
        sidecar.architecture.embedding_dim(),
        sidecar.attention.top_t,
        sidecar.attention.tau,
    );
    attention.full_grad = sidecar.attention.full_grad;
    attention.w = map
        .get("attention.w")
        .ok_or_else(|| CoreError::Checkpoint("missing tensor attention.w".into()))?
        .clone()
        .with_grad();
    let dims = sidecar.architecture.tap_dims();
    let mut disc_video_target =
        MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, sidecar.disc_hidden, 0);
    restore(disc_video_target.named_params_mut(), &map)?;
    Ok((
        VideoTrainState {
            encoder,
            attention,
            disc_video_target,
        },
        sidecar,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_arch() -> ModelArch {
        ModelArch {
            input_size: 8,
            stage_channels: vec![4, 6],
            spatial_kernel: 3,
            temporal_kernel: 3,
            frames_per_chunk: 4,
            num_classes: 3,
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("webadapt-ckpt-tests");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn image_checkpoint_roundtrips_bitwise() {
        let arch = toy_arch();
        let dims = arch.tap_dims();
        let state = ImageTrainState {
            encoder: Encoder2dState::new_seeded(arch.clone(), 5).unwrap(),
            attention: AttentionParams::identity(arch.embedding_dim(), 2, 0.5),
            disc_image_target: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, 4, 1),
            disc_video_target: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, 4, 2),
            disc_image_video: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageWebVideo, &dims, 4, 3),
        };
        let p = tmp("image.wda");
        save_image_checkpoint(&p, &state, &AttentionConfig::default(), 4).unwrap();
        let (back, sidecar) = load_image_checkpoint(&p).unwrap();
        assert_eq!(sidecar.kind, "image");
        for ((_, a), (_, b)) in state.encoder.named_params().iter().zip(back.encoder.named_params().iter()) {
            assert_eq!(a.data(), b.data());
        }
        assert_eq!(state.attention.w.data(), back.attention.w.data());
        assert_eq!(
            state.disc_video_target.layers[0].weight.data(),
            back.disc_video_target.layers[0].weight.data()
        );
    }

    #[test]
    fn video_checkpoint_preserves_frozen_names() {
        let arch = toy_arch();
        let image = Encoder2dState::new_seeded(arch.clone(), 5).unwrap();
        let target = Encoder3dState::new_seeded(arch.clone(), true, TemporalInit::Zero, 0).unwrap();
        let video = crate::encoders::transfer_spatial_weights(&image, &target).unwrap();
        let dims = arch.tap_dims();
        let state = VideoTrainState {
            encoder: video,
            attention: AttentionParams::identity(arch.embedding_dim(), 2, 0.5),
            disc_video_target: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, 4, 2),
        };
        let p = tmp("video.wda");
        save_video_checkpoint(&p, &state, &AttentionConfig::default(), 4).unwrap();
        let (back, sidecar) = load_video_checkpoint(&p).unwrap();
        assert_eq!(sidecar.frozen_names.len(), 4);
        assert!(!back.encoder.blocks[0].spatial_kernel.requires_grad);
        assert!(back.encoder.blocks[0].temporal_kernel.requires_grad);
        assert_eq!(
            state.encoder.blocks[0].spatial_kernel.data(),
            back.encoder.blocks[0].spatial_kernel.data()
        );
    }

    #[test]
    fn kind_mismatch_is_an_error() {
        let arch = toy_arch();
        let dims = arch.tap_dims();
        let state = ImageTrainState {
            encoder: Encoder2dState::new_seeded(arch.clone(), 5).unwrap(),
            attention: AttentionParams::identity(arch.embedding_dim(), 2, 0.5),
            disc_image_target: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageTarget, &dims, 4, 1),
            disc_video_target: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebVideoTarget, &dims, 4, 2),
            disc_image_video: MultiLayerDiscriminatorState::new_seeded(DomainPair::WebImageWebVideo, &dims, 4, 3),
        };
        let p = tmp("mismatch.wda");
        save_image_checkpoint(&p, &state, &AttentionConfig::default(), 4).unwrap();
        assert!(load_video_checkpoint(&p).is_err());
    }
}
