//! Everything that touches the file system: datasets, synthetic data,
//! checkpoints, run configuration and CSV reports.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod report;
pub mod synth;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::RunConfig;
pub use dataset::{load_dataset, save_dataset, Split};
pub use synth::{gen_synth, synth_samples};
