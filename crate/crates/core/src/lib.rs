//! Masked supervised learning for semantic segmentation.
//!
//! A segmentation network is trained on an image and a randomly masked copy
//! of it through one shared parameter set. The loss combines cross-entropy on
//! both outputs with a similarity penalty between them. At inference time the
//! network runs once on the unmasked image, so the masked branch costs nothing
//! after training.
//!
//! This crate is `no_std` and needs only `alloc`. File formats, image decoding
//! and the command-line front end live in the `masksup` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod losses;
pub mod maskgen;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{LossBundle, LossWeights};
pub use maskgen::{CoverageBand, HoleMask, MaskGenConfig, MaskRegime, RegimeKind};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use nn::{SegmentationModel, SiameseNet, UNet, UNetConfig};
pub use tensor::{ImageTensor, LabelMap, LogitsMap, Scalar};
pub use trainer::{Mode, TrainConfig, TrainReport};
