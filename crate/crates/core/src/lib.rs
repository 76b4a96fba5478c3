pub mod diagnostics;
pub mod error;
pub mod grouping;
pub mod harness;
pub mod metrics;
pub mod reweighter;
pub mod simplex;

pub use error::{Error, Result};
