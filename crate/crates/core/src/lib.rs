//! Self-recovering images with invertible-network watermarks.
//!
//! An image is turned into a secret (optionally through a learned watermark
//! generator), pixel-shuffled under a key, and hidden inside itself by an
//! invertible watermarking network working on Haar subbands. After tampering,
//! the secret is extracted, unshuffled, refined and composited back under a
//! predicted tamper mask.
//!
//! The array-level pieces (images, masks, shuffling, spectra, metrics, mask
//! generation) are always available. The networks and training loop need the
//! `nn` feature; the command-line tool needs `cli`.

#[cfg(feature = "cli")]
pub mod cli;
#[cfg(feature = "nn")]
pub mod config;
pub mod corpus;
pub mod degrade;
#[cfg(feature = "nn")]
pub mod enhance;
pub mod error;
#[cfg(feature = "nn")]
pub mod generator;
#[cfg(feature = "nn")]
pub mod inn;
#[cfg(feature = "nn")]
pub mod localize;
pub mod metrics;
#[cfg(feature = "nn")]
pub mod nn;
pub mod plane;
pub mod shuffle;
pub mod spectrum;
#[cfg(feature = "nn")]
pub mod train;
#[cfg(feature = "nn")]
pub mod watermark;
pub mod wavelet;

pub use error::{Error, Result};
pub use plane::{binarize, blend, ImagePlane, TamperMask};
pub use shuffle::{Permutation, ShuffleKey, Shuffler};
