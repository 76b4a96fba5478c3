//! Desk-scale training harness.

pub mod model;
pub mod sweep;
pub mod synthetic;
pub mod train;

pub use model::{ModelConfig, ToyModel};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticExample, SyntheticTaskSpec};
pub use train::{load_data, train, RunRecord};
