//! Run configs, regime classification, hyperparameter advice, dataset
//! loading and trace export.

pub mod config;
pub mod dataset;
pub mod export;
pub mod recommend;
pub mod regime;

pub use config::{DataSource, Method, RobustSettings, RunConfig, TrainingSettings};
pub use dataset::{load_jsonl, save_jsonl};
pub use export::{export_trace, summary_json};
pub use recommend::{recommend_hyperparams, Advice, Recommendation};
pub use regime::{classify_regime, Regime, RegimeLabel, RegimeThresholds};
