//! `<run_id>/trace.csv` and `<run_id>/summary.json` for a finished run.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::diagnostics::config::RunConfig;
use crate::diagnostics::regime::{classify_regime, RegimeLabel, RegimeThresholds};
use crate::error::{Error, Result};
use crate::harness::train::{Divergence, EpochRow, GroupMetrics, RunRecord};

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Header then one row per optimizer step.
pub fn trace_rows(record: &RunRecord) -> Vec<Vec<String>> {
    let mut header: Vec<String> = ["step", "entropy", "active_set", "eta_eff"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(record.groups.iter().map(|k| format!("q_{k}")));
    header.extend(record.groups.iter().map(|k| format!("loss_{k}")));
    header.extend(
        ["epoch", "objective", "mult_mean", "mult_max", "robust"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows = vec![header];
    for s in &record.steps {
        let mut row = vec![
            s.step.to_string(),
            s.entropy.to_string(),
            s.active_set.to_string(),
            s.eta_eff.to_string(),
        ];
        row.extend(s.q.iter().map(|v| v.to_string()));
        row.extend(s.group_losses.iter().map(|v| fmt_opt(*v)));
        row.extend([
            s.epoch.to_string(),
            s.objective.to_string(),
            s.mult_mean.to_string(),
            s.mult_max.to_string(),
            u8::from(s.robust).to_string(),
        ]);
        rows.push(row);
    }
    rows
}

#[derive(Serialize)]
struct FinalState<'a> {
    worst_val_loss: f64,
    mean_val_loss: f64,
    q: &'a [f64],
}

#[derive(Serialize)]
struct Summary<'a> {
    run_id: &'a str,
    method: &'static str,
    seed: u64,
    config_hash: String,
    regime: &'static str,
    steps: usize,
    steps_per_epoch: u64,
    groups: &'a [String],
    #[serde(rename = "final")]
    final_state: FinalState<'a>,
    regime_stats: RegimeLabel,
    per_group: &'a [GroupMetrics],
    epochs: &'a [EpochRow],
    skipped_val_units: usize,
    divergence: Option<Divergence>,
    config: &'a RunConfig,
}

/// Compact JSON summary; no timestamps, so identical runs give identical text.
pub fn summary_json(record: &RunRecord, thresholds: &RegimeThresholds) -> String {
    let regime = classify_regime(&record.final_q, thresholds);
    let summary = Summary {
        run_id: &record.run_id,
        method: record.config.method.name(),
        seed: record.config.seed,
        config_hash: record.config.hash(),
        regime: regime.regime.name(),
        steps: record.steps.len(),
        steps_per_epoch: record.steps_per_epoch,
        groups: &record.groups,
        final_state: FinalState {
            worst_val_loss: record.worst_val_loss,
            mean_val_loss: record.mean_val_loss,
            q: record.final_q.as_slice(),
        },
        regime_stats: regime,
        per_group: &record.per_group,
        epochs: &record.epochs,
        skipped_val_units: record.skipped_val_units,
        divergence: record.divergence,
        config: &record.config,
    };
    serde_json::to_string(&summary).expect("summary serializes")
}

/// Writes both files under `root/<run_id>/` and returns that directory.
pub fn export_trace(record: &RunRecord, root: &Path, thresholds: &RegimeThresholds) -> Result<PathBuf> {
    if record.steps.is_empty() {
        return Err(Error::invalid("run has no steps to export"));
    }
    let dir = root.join(&record.run_id);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let trace = dir.join("trace.csv");
    let mut w = csv::Writer::from_path(&trace).map_err(|e| Error::Schema(format!("{}: {e}", trace.display())))?;
    for row in trace_rows(record) {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&trace, e))?;

    let summary = dir.join("summary.json");
    let mut text = summary_json(record, thresholds);
    text.push('\n');
    std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
    Ok(dir)
}
