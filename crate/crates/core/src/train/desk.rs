//! The desk-scale profile: 64x64 images, 200 training images, 2000 steps,
//! narrower networks than the reference architecture, and the three ablation
//! variants compared by the acceptance suite.

use serde::{Deserialize, Serialize};

use crate::enhance::EnhanceConfig;
use crate::generator::GeneratorConfig;
use crate::localize::LocalizeConfig;
use crate::shuffle::ShuffleKey;
use crate::watermark::WatermarkConfig;

use super::pipeline::ModelConfig;
use super::trainer::TrainConfig;

pub const DESK_IMAGE_SIZE: usize = 64;
pub const DESK_TRAIN_IMAGES: usize = 200;
pub const DESK_HELDOUT_IMAGES: usize = 50;
pub const DESK_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeskVariant {
    /// Watermarking and localization only; the original is the secret.
    NoShuffle,
    /// Adds pixel shuffling of the secret.
    Shuffle,
    /// Shuffling, watermark generator and enhancer.
    Full,
}

impl DeskVariant {
    pub const ALL: [DeskVariant; 3] = [DeskVariant::NoShuffle, DeskVariant::Shuffle, DeskVariant::Full];

    pub fn name(&self) -> &'static str {
        match self {
            DeskVariant::NoShuffle => "no_shuffle",
            DeskVariant::Shuffle => "shuffle",
            DeskVariant::Full => "shuffle_wg_ie",
        }
    }
}

pub fn desk_model(variant: DeskVariant) -> ModelConfig {
    ModelConfig {
        image_size: DESK_IMAGE_SIZE,
        use_shuffle: variant != DeskVariant::NoShuffle,
        use_generator: variant == DeskVariant::Full,
        use_enhancer: variant == DeskVariant::Full,
        shuffle: ShuffleKey::new(0x5eed, 1),
        watermark: WatermarkConfig { blocks: 4, growth: 16, noise_width: 16, ..Default::default() },
        generator: GeneratorConfig {
            blocks: 3,
            dim: 96,
            heads: 6,
            mlp_ratio: 2,
            up_channels: 16,
            ..Default::default()
        },
        enhance: EnhanceConfig { blocks: 4, width: 24, ..Default::default() },
        localize: LocalizeConfig { levels: 3, base: 8, ..Default::default() },
    }
}

pub fn desk_train(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 4,
        iterations: DESK_ITERATIONS,
        warmup: 100,
        degradation: "none".into(),
        seed,
        ..Default::default()
    }
}
