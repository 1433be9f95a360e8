//! File formats, run management and the command-line interface around
//! [`masksup_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod imageio;
pub mod plots;
pub mod records;
pub mod run;

pub use masksup_core as core;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DataSource, RunConfig};
pub use dataset::{load_image_mask_dir, write_image_mask_dir};
pub use error::{Error, Result};
