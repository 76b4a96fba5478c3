//! Independent runs executed in parallel, each labeled with its regime.

use rayon::prelude::*;

use crate::diagnostics::config::RunConfig;
use crate::diagnostics::regime::{classify_regime, RegimeLabel, RegimeThresholds};
use crate::harness::train::{load_data, train, RunRecord};

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub label: String,
    pub config: RunConfig,
    /// The run, or the error message that stopped it.
    pub outcome: Result<RunRecord, String>,
    pub regime: Option<RegimeLabel>,
}

/// Runs every config; a failing run does not stop the others. Output order
/// matches input order.
pub fn sweep(configs: Vec<(String, RunConfig)>, thresholds: &RegimeThresholds) -> Vec<SweepEntry> {
    configs
        .into_par_iter()
        .map(|(label, config)| {
            let outcome = load_data(&config)
                .and_then(|data| train(&data, &config))
                .map_err(|e| e.to_string());
            let regime = outcome
                .as_ref()
                .ok()
                .filter(|r| r.divergence.is_none())
                .map(|r| classify_regime(&r.final_q, thresholds));
            SweepEntry {
                label,
                config,
                outcome,
                regime,
            }
        })
        .collect()
}

/// Baseline, `η×100` and `η/100` around `base` (`α` held fixed, so
/// `η_eff` scales the same way).
pub fn regime_sweep_configs(base: &RunConfig) -> Vec<(String, RunConfig)> {
    [("baseline", 1.0), ("eta_x100", 100.0), ("eta_div100", 0.01)]
        .into_iter()
        .map(|(label, factor)| {
            let mut cfg = base.clone();
            cfg.reweighter.eta *= factor;
            (label.to_owned(), cfg)
        })
        .collect()
}
