//! Pretext and downstream network definitions.
//!
//! The pretext network ("JPOPNet") feeds each of the nine patches through its
//! own four-convolution branch, fuses the concatenated branch outputs with a
//! 3x3 convolution, splits into a strided-convolution path and a max-pooling
//! path, and classifies the arrangement after global average pooling.
//!
//! The downstream classifier reuses the nine branches as a feature extractor:
//! frames are divided into nine temporal groups, group `k` goes through branch
//! `k`, and a per-frame discriminator is followed by global average pooling,
//! a max over frames and a sigmoid output.

mod checkpoint;
mod config;
mod downstream;
mod pretext;
mod summary;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, ModelKind};
pub use config::{
    variant_schedule, DiscSchedule, DiscStage, DownstreamModelConfig, PretextModelConfig, Variant,
};
pub use downstream::{DownstreamBackward, DownstreamModel, DownstreamTrace, Stop};
pub use pretext::{PretextBackward, PretextModel, PretextTrace};
pub use summary::{LayerSummary, ModelSummary};

use crate::error::Result;
use crate::nn::Scalar;

/// Outcome of copying pretext branches into a downstream model.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransferReport {
    /// Convolution layers copied from the pretext model.
    pub copied_layers: Vec<String>,
    /// Layers left at their fresh initialisation.
    pub initialized_layers: Vec<String>,
}

/// Copies all branch convolution weights; the discriminator and head keep
/// their initialisation.
pub fn transfer_weights<T: Scalar>(
    pretext: &PretextModel<T>,
    downstream: &mut DownstreamModel<T>,
) -> Result<TransferReport> {
    let copied = downstream
        .store
        .copy_from(&pretext.store, |name| name.starts_with("branch"))?;
    let layer_of = |n: &String| n.trim_end_matches(".weight").trim_end_matches(".bias").to_string();
    let mut copied_layers: Vec<String> = copied.iter().map(layer_of).collect();
    copied_layers.dedup();
    let mut initialized_layers: Vec<String> = downstream
        .store
        .params
        .iter()
        .filter(|p| !p.name.starts_with("branch"))
        .map(|p| layer_of(&p.name))
        .collect();
    initialized_layers.dedup();
    Ok(TransferReport {
        copied_layers,
        initialized_layers,
    })
}
