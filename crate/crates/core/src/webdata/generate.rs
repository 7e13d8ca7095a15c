//! Three-domain synthetic benchmark generation.
//!
//! Classes are (shape, motion) pairs; the first four classes form two pairs
//! sharing identical appearance and differing only in motion, so a frame
//! model is at chance inside each pair while a video model has headroom.
//! Web images are clean-style single frames with a configurable fraction
//! replaced by wrong-class or clutter renders; web videos carry a shifted
//! style and a configurable fraction of irrelevant (clutter-motion) chunks;
//! target videos use a third style, with labels stored only for the held-out
//! eval split. Everything derives from the seed.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::container::save_tensors;
use crate::numerics::rng;
use crate::numerics::tensor::Tensor;
use crate::{CoreError, Result};

use super::chunk::chunk_starts;
use super::render::{
    apply_style, pose_at, render_clutter_frame, render_shape_frame, ItemLook, Motion, MotionState,
    Shape, ShiftParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetConfig {
    /// Number of categories (2..=10); classes come from a fixed table whose
    /// first four entries form two appearance-sharing motion pairs.
    pub num_classes: usize,
    /// Web image count.
    pub n_web_images: usize,
    /// Web video count.
    pub n_web_videos: usize,
    /// Unlabeled target video count (train split).
    pub n_target_videos: usize,
    /// Labeled target video count (eval split).
    pub n_target_eval_videos: usize,
    /// Fraction of web images replaced by noise renders.
    pub image_noise_rate: f32,
    /// Among noisy images, the fraction rendered as clutter distractors
    /// (the rest are wrong-class renders keeping their label).
    pub noise_distractor_fraction: f32,
    /// Fraction of all web video chunks replaced by clutter motion.
    pub video_irrelevant_chunk_rate: f32,
    /// Frames per generated video.
    pub frames_per_video: usize,
    /// Square frame edge in pixels.
    pub frame_size: usize,
    /// Frames per chunk (the every-other-frame rule consumes 2x this).
    pub frames_per_chunk: usize,
    pub shift_web_image: ShiftParams,
    pub shift_web_video: ShiftParams,
    pub shift_target: ShiftParams,
    pub seed: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        SyntheticDatasetConfig {
            num_classes: 10,
            n_web_images: 2000,
            n_web_videos: 200,
            n_target_videos: 200,
            n_target_eval_videos: 200,
            image_noise_rate: 0.4,
            noise_distractor_fraction: 0.75,
            video_irrelevant_chunk_rate: 0.25,
            frames_per_video: 32,
            frame_size: 32,
            frames_per_chunk: 8,
            shift_web_image: ShiftParams {
                blur_passes: 0,
                contrast: 1.0,
                brightness: 1.0,
                bg_color: [0.92, 0.92, 0.9],
                bg_jitter: 0.03,
                color_jitter: 0.05,
                pixel_noise: 0.005,
                bg_stripe: 0.0,
                shape_value: 0.8,
            },
            shift_web_video: ShiftParams {
                blur_passes: 1,
                contrast: 0.8,
                brightness: 0.9,
                bg_color: [0.55, 0.6, 0.52],
                bg_jitter: 0.05,
                color_jitter: 0.08,
                pixel_noise: 0.02,
                bg_stripe: 0.0,
                shape_value: 0.75,
            },
            shift_target: ShiftParams {
                blur_passes: 0,
                contrast: 1.0,
                brightness: 1.0,
                bg_color: [0.68, 0.74, 0.86],
                bg_jitter: 0.04,
                color_jitter: 0.05,
                pixel_noise: 0.01,
                bg_stripe: 0.06,
                shape_value: 0.9,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    WebImage,
    WebVideo,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    WrongClass,
    Distractor,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub id: usize,
    pub name: String,
    pub shape: Shape,
    pub motion: Motion,
    /// Classes sharing a group have identical appearance.
    pub appearance_group: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemRecord {
    pub id: String,
    pub domain: DomainTag,
    pub split: Split,
    /// Absent for unlabeled target training videos.
    pub label: Option<usize>,
    pub is_noise: bool,
    pub noise_kind: Option<NoiseKind>,
    /// Chunk windows replaced by clutter motion (web videos only).
    pub noisy_chunks: Vec<usize>,
    pub frames: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: SyntheticDatasetConfig,
    pub classes: Vec<ClassSpec>,
    pub items: Vec<ItemRecord>,
}

impl Manifest {
    /// Class ids whose appearance group is shared with another class; a
    /// frame model is at chance inside each group.
    pub fn motion_only_class_ids(&self) -> Vec<usize> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in &self.classes {
            *counts.entry(c.appearance_group.as_str()).or_default() += 1;
        }
        self.classes
            .iter()
            .filter(|c| counts[c.appearance_group.as_str()] > 1)
            .map(|c| c.id)
            .collect()
    }
}

/// Fixed class table. The first two pairs share appearance within the pair.
pub fn class_table(num_classes: usize) -> Result<Vec<ClassSpec>> {
    let table: [(Shape, Motion); 10] = [
        (Shape::Circle, Motion::SlideRight),
        (Shape::Circle, Motion::SlideDown),
        (Shape::Square, Motion::Hold),
        (Shape::Square, Motion::SlideRight),
        (Shape::Triangle, Motion::Orbit),
        (Shape::Cross, Motion::SlideRight),
        (Shape::Diamond, Motion::Bounce),
        (Shape::Ring, Motion::SlideDown),
        (Shape::Bar, Motion::Orbit),
        (Shape::Ell, Motion::Hold),
    ];
    if !(2..=table.len()).contains(&num_classes) {
        return Err(CoreError::InvalidArgument(format!(
            "num_classes must be in 2..={}, got {num_classes}",
            table.len()
        )));
    }
    Ok(table[..num_classes]
        .iter()
        .enumerate()
        .map(|(id, &(shape, motion))| {
            let sname = format!("{shape:?}").to_lowercase();
            let mname = format!("{motion:?}").to_lowercase();
            ClassSpec {
                id,
                name: format!("{sname}_{mname}"),
                shape,
                motion,
                appearance_group: sname,
            }
        })
        .collect())
}

fn validate(config: &SyntheticDatasetConfig) -> Result<Vec<ClassSpec>> {
    let classes = class_table(config.num_classes)?;
    for (name, rate) in [
        ("image_noise_rate", config.image_noise_rate),
        ("noise_distractor_fraction", config.noise_distractor_fraction),
        ("video_irrelevant_chunk_rate", config.video_irrelevant_chunk_rate),
    ] {
        if !(0.0..=1.0).contains(&rate) {
            return Err(CoreError::InvalidArgument(format!("{name} must be in [0, 1], got {rate}")));
        }
    }
    if config.n_web_images == 0 || config.n_web_videos == 0 || config.n_target_videos == 0 {
        return Err(CoreError::InvalidArgument("all domain counts must be positive".into()));
    }
    if config.frames_per_video < 2 * config.frames_per_chunk {
        return Err(CoreError::InvalidArgument(format!(
            "frames_per_video {} cannot hold a single {}-frame chunk (needs {})",
            config.frames_per_video,
            config.frames_per_chunk,
            2 * config.frames_per_chunk
        )));
    }
    // the shared-appearance guarantee needs the first pair present
    let mut groups: BTreeMap<&str, usize> = BTreeMap::new();
    for c in &classes {
        *groups.entry(c.appearance_group.as_str()).or_default() += 1;
    }
    if !groups.values().any(|&n| n > 1) {
        return Err(CoreError::InvalidArgument(
            "class table must contain at least one appearance-sharing motion pair".into(),
        ));
    }
    Ok(classes)
}

/// Picks a shape for a wrong-class render: a class from a different
/// appearance group than the labeled class.
fn wrong_class_shape(classes: &[ClassSpec], label: usize, rng: &mut impl Rng) -> Shape {
    let group = &classes[label].appearance_group;
    let candidates: Vec<&ClassSpec> = classes.iter().filter(|c| &c.appearance_group != group).collect();
    if candidates.is_empty() {
        classes[(label + 1) % classes.len()].shape
    } else {
        candidates[rng.gen_range(0..candidates.len())].shape
    }
}

fn render_image(
    classes: &[ClassSpec],
    label: usize,
    noise: Option<NoiseKind>,
    style: &ShiftParams,
    frame: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f32> {
    let look = ItemLook::sample(rng, style);
    let mut px = match noise {
        Some(NoiseKind::Distractor) => {
            let mut layout = rng.clone();
            render_clutter_frame(&mut layout, &look, frame, 0, style.bg_stripe)
        }
        Some(NoiseKind::WrongClass) => {
            let shape = wrong_class_shape(classes, label, rng);
            let st = MotionState::sample(rng, frame);
            let pose = pose_at(Motion::Hold, &st, 0, frame);
            render_shape_frame(shape, &pose, &look, frame, style.bg_stripe)
        }
        None => {
            let spec = &classes[label];
            let st = MotionState::sample(rng, frame);
            // an image is one frame of the class's motion at a random time
            let t = rng.gen_range(0..16);
            let pose = pose_at(spec.motion, &st, t, frame);
            render_shape_frame(spec.shape, &pose, &look, frame, style.bg_stripe)
        }
    };
    apply_style(&mut px, frame, style, rng);
    px
}

fn render_video(
    spec: &ClassSpec,
    style: &ShiftParams,
    frame: usize,
    n_frames: usize,
    noisy_windows: &[usize],
    f_chunk: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<f32> {
    let hw = frame * frame;
    let look = ItemLook::sample(rng, style);
    let st = MotionState::sample(rng, frame);
    let clutter_layout = rng.clone();
    let mut frames: Vec<Vec<f32>> = Vec::with_capacity(n_frames);
    for t in 0..n_frames {
        let window = t / (2 * f_chunk);
        let mut px = if noisy_windows.contains(&window) {
            render_clutter_frame(&mut clutter_layout.clone(), &look, frame, t, style.bg_stripe)
        } else {
            let pose = pose_at(spec.motion, &st, t, frame);
            render_shape_frame(spec.shape, &pose, &look, frame, style.bg_stripe)
        };
        apply_style(&mut px, frame, style, rng);
        frames.push(px);
    }
    // [3, n_frames, h, w]
    let mut out = vec![0.0f32; 3 * n_frames * hw];
    for (t, px) in frames.iter().enumerate() {
        for c in 0..3 {
            let dst = (c * n_frames + t) * hw;
            out[dst..dst + hw].copy_from_slice(&px[c * hw..(c + 1) * hw]);
        }
    }
    out
}

fn exact_count(rate: f32, n: usize) -> usize {
    ((rate as f64) * n as f64).round() as usize
}

/// Generates the full dataset under `dir`: `manifest.json` plus one tensor
/// container per item in `items/`.
pub fn generate_dataset(config: &SyntheticDatasetConfig, dir: &Path) -> Result<Manifest> {
    let classes = validate(config)?;
    let items_dir = dir.join("items");
    std::fs::create_dir_all(&items_dir)?;

    let l = classes.len();
    let fsz = config.frame_size;
    let mut items: Vec<ItemRecord> = Vec::new();

    // --- web images: exact noise counts chosen by a seeded shuffle ---
    let n_img = config.n_web_images;
    let n_noisy = exact_count(config.image_noise_rate, n_img);
    let n_distract = exact_count(config.noise_distractor_fraction, n_noisy);
    let mut noise_order: Vec<usize> = (0..n_img).collect();
    noise_order.shuffle(&mut rng::stream(config.seed, "noise.images"));
    let mut noise_kind: Vec<Option<NoiseKind>> = vec![None; n_img];
    for (rank, &idx) in noise_order.iter().take(n_noisy).enumerate() {
        noise_kind[idx] = Some(if rank < n_distract {
            NoiseKind::Distractor
        } else {
            NoiseKind::WrongClass
        });
    }
    for i in 0..n_img {
        let label = i % l;
        let mut r = rng::item_stream(config.seed, "web_image", i as u64);
        let px = render_image(&classes, label, noise_kind[i], &config.shift_web_image, fsz, &mut r);
        let id = format!("img{i:05}");
        let file = format!("items/{id}.wda");
        let mut tensors = BTreeMap::new();
        tensors.insert("pixels".to_string(), Tensor::new(vec![3, fsz, fsz], px)?);
        save_tensors(&dir.join(&file), &tensors)?;
        items.push(ItemRecord {
            id,
            domain: DomainTag::WebImage,
            split: Split::Train,
            label: Some(label),
            is_noise: noise_kind[i].is_some(),
            noise_kind: noise_kind[i],
            noisy_chunks: Vec::new(),
            frames: 1,
            file,
        });
    }

    // --- web videos: exact irrelevant-chunk count across the whole domain ---
    let chunks_per_video = chunk_starts(config.frames_per_video, config.frames_per_chunk).len();
    let total_chunks = config.n_web_videos * chunks_per_video;
    let n_irrelevant = exact_count(config.video_irrelevant_chunk_rate, total_chunks);
    let mut chunk_order: Vec<usize> = (0..total_chunks).collect();
    chunk_order.shuffle(&mut rng::stream(config.seed, "noise.chunks"));
    let mut noisy_windows: Vec<Vec<usize>> = vec![Vec::new(); config.n_web_videos];
    for &flat in chunk_order.iter().take(n_irrelevant) {
        noisy_windows[flat / chunks_per_video].push(flat % chunks_per_video);
    }
    for w in noisy_windows.iter_mut() {
        w.sort_unstable();
    }
    for j in 0..config.n_web_videos {
        let label = j % l;
        let mut r = rng::item_stream(config.seed, "web_video", j as u64);
        let px = render_video(
            &classes[label],
            &config.shift_web_video,
            fsz,
            config.frames_per_video,
            &noisy_windows[j],
            config.frames_per_chunk,
            &mut r,
        );
        let id = format!("web{j:04}");
        let file = format!("items/{id}.wda");
        let mut tensors = BTreeMap::new();
        tensors.insert(
            "pixels".to_string(),
            Tensor::new(vec![3, config.frames_per_video, fsz, fsz], px)?,
        );
        save_tensors(&dir.join(&file), &tensors)?;
        items.push(ItemRecord {
            id,
            domain: DomainTag::WebVideo,
            split: Split::Train,
            label: Some(label),
            is_noise: !noisy_windows[j].is_empty(),
            noise_kind: None,
            noisy_chunks: noisy_windows[j].clone(),
            frames: config.frames_per_video,
            file,
        });
    }

    // --- target videos: clean third style; labels only in the eval split ---
    for (count, prefix, split) in [
        (config.n_target_videos, "tgt", Split::Train),
        (config.n_target_eval_videos, "evl", Split::Eval),
    ] {
        for k in 0..count {
            let label = k % l;
            let tag = if split == Split::Train { "target_video" } else { "target_eval" };
            let mut r = rng::item_stream(config.seed, tag, k as u64);
            let px = render_video(
                &classes[label],
                &config.shift_target,
                fsz,
                config.frames_per_video,
                &[],
                config.frames_per_chunk,
                &mut r,
            );
            let id = format!("{prefix}{k:04}");
            let file = format!("items/{id}.wda");
            let mut tensors = BTreeMap::new();
            tensors.insert(
                "pixels".to_string(),
                Tensor::new(vec![3, config.frames_per_video, fsz, fsz], px)?,
            );
            save_tensors(&dir.join(&file), &tensors)?;
            items.push(ItemRecord {
                id,
                domain: DomainTag::Target,
                split,
                label: if split == Split::Eval { Some(label) } else { None },
                is_noise: false,
                noise_kind: None,
                noisy_chunks: Vec::new(),
                frames: config.frames_per_video,
                file,
            });
        }
    }

    let manifest = Manifest {
        format_version: 1,
        config: config.clone(),
        classes,
        items,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(seed: u64) -> SyntheticDatasetConfig {
        SyntheticDatasetConfig {
            num_classes: 4,
            n_web_images: 20,
            n_web_videos: 4,
            n_target_videos: 4,
            n_target_eval_videos: 2,
            frames_per_video: 16,
            frame_size: 16,
            frames_per_chunk: 8,
            seed,
            ..Default::default()
        }
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("webadapt-generate-tests").join(name);
        let _ = std::fs::remove_dir_all(&dir);
        dir
    }

    #[test]
    fn zero_noise_rate_corrupts_nothing() {
        let mut cfg = small_config(1);
        cfg.image_noise_rate = 0.0;
        cfg.video_irrelevant_chunk_rate = 0.0;
        let m = generate_dataset(&cfg, &tmp("zero-noise")).unwrap();
        assert!(m.items.iter().all(|i| !i.is_noise));
    }

    #[test]
    fn noise_counts_are_exact() {
        let mut cfg = small_config(2);
        cfg.n_web_images = 100;
        cfg.image_noise_rate = 0.5;
        let m = generate_dataset(&cfg, &tmp("half-noise")).unwrap();
        let noisy = m
            .items
            .iter()
            .filter(|i| i.domain == DomainTag::WebImage && i.is_noise)
            .count();
        assert_eq!(noisy, 50);
        // distractor/wrong split is exact too
        let distract = m
            .items
            .iter()
            .filter(|i| i.noise_kind == Some(NoiseKind::Distractor))
            .count();
        assert_eq!(distract, 25);
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let cfg = small_config(7);
        let d1 = tmp("det-a");
        let d2 = tmp("det-b");
        generate_dataset(&cfg, &d1).unwrap();
        generate_dataset(&cfg, &d2).unwrap();
        let m1 = std::fs::read(d1.join("manifest.json")).unwrap();
        let m2 = std::fs::read(d2.join("manifest.json")).unwrap();
        assert_eq!(m1, m2);
        for entry in std::fs::read_dir(d1.join("items")).unwrap() {
            let p1 = entry.unwrap().path();
            let p2 = d2.join("items").join(p1.file_name().unwrap());
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap(), "{p1:?}");
        }
    }

    #[test]
    fn invalid_rate_fails_before_writing() {
        let mut cfg = small_config(3);
        cfg.image_noise_rate = 1.5;
        let dir = tmp("invalid");
        assert!(generate_dataset(&cfg, &dir).is_err());
        assert!(!dir.join("manifest.json").exists());
    }

    #[test]
    fn class_table_always_has_a_motion_pair() {
        for l in 2..=10 {
            let classes = class_table(l).unwrap();
            let m = Manifest {
                format_version: 1,
                config: SyntheticDatasetConfig::default(),
                classes,
                items: Vec::new(),
            };
            if l >= 2 {
                assert!(!m.motion_only_class_ids().is_empty(), "l={l}");
            }
        }
        assert!(class_table(1).is_err());
        assert!(class_table(11).is_err());
    }

    #[test]
    fn target_train_labels_are_hidden() {
        let m = generate_dataset(&small_config(4), &tmp("labels")).unwrap();
        for item in &m.items {
            match (item.domain, item.split) {
                (DomainTag::Target, Split::Train) => assert!(item.label.is_none()),
                (DomainTag::Target, Split::Eval) => assert!(item.label.is_some()),
                _ => assert!(item.label.is_some()),
            }
        }
    }
}
