//! Attacks: random tamper masks, splicing and common degradations.

#[cfg(feature = "nn")]
pub mod apply;
#[cfg(feature = "nn")]
pub mod jpeg;
pub mod mask;
pub mod preset;

#[cfg(feature = "nn")]
pub use apply::{apply_batch, apply_degradation, apply_tensor, random_degradation};
pub use mask::{generate_mask, splice, MaskReport, MaskShapes, MaskSpec, MaskStrategy};
pub use preset::{Degradation, DegradationPreset, DegradationRange, PresetTable};
