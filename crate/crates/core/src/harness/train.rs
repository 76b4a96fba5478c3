//! Minibatch gradient descent under ERM, dense group DRO or STaR-DRO.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::config::{Method, RunConfig};
use crate::error::{Error, Result};
use crate::grouping::{
    annotation_groups, annotation_signal, build_inventory, memberships, token_weights,
    weighted_objective, ExampleRecord, GroupInventory, ScoredExample, SignalMode,
};
use crate::harness::model::ToyModel;
use crate::harness::synthetic::{SyntheticDataset, SyntheticExample};
use crate::reweighter::{Erm, GroupReweighter, MultiplierSet, Observation, StandardDro, StarDro};
use crate::simplex::SimplexVector;

/// Diagnostics logged after each optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub step: u64,
    pub epoch: usize,
    pub objective: f64,
    pub entropy: f64,
    pub active_set: usize,
    pub eta_eff: f64,
    pub q: Vec<f64>,
    /// Overlap-corrected minibatch loss per group; `None` when absent.
    pub group_losses: Vec<Option<f64>>,
    pub mult_mean: f64,
    pub mult_max: f64,
    pub robust: bool,
    /// `Σ π(g)·a_g` for STaR-DRO steps with a usable ascent signal.
    pub ascent_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub val_losses: Vec<Option<f64>>,
    pub worst_val_loss: f64,
    pub mean_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub key: String,
    /// Training examples with this group in their membership set.
    pub train_examples: usize,
    pub val_units: usize,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Divergence {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub config: RunConfig,
    pub groups: Vec<String>,
    pub steps_per_epoch: u64,
    pub steps: Vec<StepRow>,
    pub epochs: Vec<EpochRow>,
    pub final_q: SimplexVector,
    pub per_group: Vec<GroupMetrics>,
    pub worst_val_loss: f64,
    pub mean_val_loss: f64,
    /// Validation units whose group never occurs in training.
    pub skipped_val_units: usize,
    pub divergence: Option<Divergence>,
}

impl RunRecord {
    pub fn objectives(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.objective).collect()
    }

    pub fn final_val_losses(&self) -> Vec<Option<f64>> {
        self.per_group.iter().map(|g| g.val_loss).collect()
    }
}

fn controller(config: &RunConfig, groups: usize, steps_per_epoch: u64) -> Result<Box<dyn GroupReweighter>> {
    let settings = &config.reweighter;
    Ok(match config.method {
        Method::Erm => Box::new(Erm::new(groups)?),
        Method::Dro => Box::new(StandardDro::new(
            groups,
            settings.eta,
            settings.activation_step(steps_per_epoch),
        )?),
        Method::StarDro => Box::new(StarDro::new(groups, settings.reweighter_config(steps_per_epoch)?)?),
    })
}

struct Forward {
    scored: ScoredExample,
    probs: Vec<f64>,
}

fn forward(model: &ToyModel, ex: &SyntheticExample) -> Forward {
    let c = model.classes();
    let t = &ex.tokens;
    let mut probs = vec![0.0; t.len() * c];
    let mut losses = Vec::with_capacity(t.len());
    for (k, (x, &y)) in t.features.iter().zip(&t.labels).enumerate() {
        let p = &mut probs[k * c..(k + 1) * c];
        model.probabilities(x, p);
        losses.push(-p[y].max(f64::MIN_POSITIVE).ln());
    }
    let mut scored = ScoredExample {
        example_loss: 0.0,
        token_losses: losses,
        mask: t.mask.clone(),
    };
    scored.example_loss = scored.masked_mean();
    Forward { scored, probs }
}

/// Per-token gradient weights `w` with objective `= Σ w·ℓ` over completion tokens.
fn gradient_weights(batch: &[ScoredExample], m: &MultiplierSet, mode: SignalMode) -> Result<Vec<Vec<f64>>> {
    match mode {
        SignalMode::Sample => {
            let total: f64 = m.per_example.iter().sum();
            Ok(batch
                .iter()
                .zip(&m.per_example)
                .map(|(ex, &mi)| {
                    let n = ex.mask.iter().filter(|&&r| r).count().max(1) as f64;
                    ex.mask
                        .iter()
                        .map(|&r| if r { mi / (total * n) } else { 0.0 })
                        .collect()
                })
                .collect())
        }
        SignalMode::Annotation => {
            let d = m
                .per_token
                .as_ref()
                .ok_or_else(|| Error::invalid("annotation mode requires token-level multipliers"))?;
            let total: f64 = batch
                .iter()
                .zip(d)
                .flat_map(|(ex, w)| ex.mask.iter().zip(w).filter(|(&r, _)| r).map(|(_, w)| *w))
                .sum();
            Ok(batch
                .iter()
                .zip(d)
                .map(|(ex, w)| {
                    ex.mask
                        .iter()
                        .zip(w)
                        .map(|(&r, &w)| if r { w / total } else { 0.0 })
                        .collect()
                })
                .collect())
        }
    }
}

struct Prepared {
    inventory: GroupInventory,
    member_groups: Vec<Vec<usize>>,
    unit_groups: Vec<Vec<usize>>,
}

fn prepare(train: &[SyntheticExample], scheme: crate::grouping::GroupingScheme) -> Result<Prepared> {
    let records: Vec<ExampleRecord> = train.iter().map(|e| e.record.clone()).collect();
    let inventory = build_inventory(&records, scheme, None)?;
    let mut member_groups = Vec::with_capacity(train.len());
    let mut unit_groups = Vec::with_capacity(train.len());
    for r in &records {
        member_groups.push(memberships(r, &inventory)?.groups);
        unit_groups.push(annotation_groups(r, &inventory)?);
    }
    Ok(Prepared {
        inventory,
        member_groups,
        unit_groups,
    })
}

struct Validation {
    losses: Vec<Option<f64>>,
    accuracy: Vec<Option<f64>>,
    units: Vec<usize>,
    worst: f64,
    mean: f64,
    skipped: usize,
}

fn validate(model: &ToyModel, data: &[SyntheticExample], inventory: &GroupInventory) -> Result<Validation> {
    let g = inventory.len();
    let mut loss_sum = vec![0.0; g];
    let mut correct = vec![0usize; g];
    let mut tokens = vec![0usize; g];
    let mut units = vec![0usize; g];
    let mut skipped = 0;
    let (mut all_loss, mut all_units) = (0.0, 0usize);
    for ex in data {
        let fwd = forward(model, ex);
        let unit_losses = annotation_signal(&ex.record, &fwd.scored.token_losses, &fwd.scored.mask)?;
        for (a, ann) in ex.record.annotations.iter().enumerate() {
            let key = inventory.scheme().key(&ex.record, ann);
            let Some(id) = inventory.id(&key) else {
                skipped += 1;
                continue;
            };
            loss_sum[id] += unit_losses[a];
            units[id] += 1;
            all_loss += unit_losses[a];
            all_units += 1;
            let (start, end) = ann.token_range.expect("checked by annotation_signal");
            for t in start..end {
                tokens[id] += 1;
                if model.predict(&ex.tokens.features[t]) == ex.tokens.labels[t] {
                    correct[id] += 1;
                }
            }
        }
    }
    let losses: Vec<Option<f64>> = (0..g)
        .map(|k| (units[k] > 0).then(|| loss_sum[k] / units[k] as f64))
        .collect();
    let accuracy = (0..g)
        .map(|k| (tokens[k] > 0).then(|| correct[k] as f64 / tokens[k] as f64))
        .collect();
    let worst = losses.iter().flatten().copied().fold(f64::NAN, f64::max);
    let mean = if all_units > 0 {
        all_loss / all_units as f64
    } else {
        f64::NAN
    };
    Ok(Validation {
        losses,
        accuracy,
        units,
        worst,
        mean,
        skipped,
    })
}

/// Loads or generates the run's data.
pub fn load_data(config: &RunConfig) -> Result<SyntheticDataset> {
    use crate::diagnostics::config::DataSource;
    use crate::diagnostics::dataset::load_jsonl;
    match &config.data {
        DataSource::Synthetic(spec) => crate::harness::synthetic::generate_synthetic(spec),
        DataSource::Files { train, validation } => {
            SyntheticDataset::from_splits(load_jsonl(train)?, load_jsonl(validation)?)
        }
    }
}

/// Runs one training job. Divergence stops the run early and is reported in
/// [`RunRecord::divergence`] rather than as an error.
pub fn train(data: &SyntheticDataset, config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let settings = &config.training;
    let prepared = prepare(&data.train, settings.scheme)?;
    let inventory = &prepared.inventory;
    let g = inventory.len();
    let batch_size = settings.batch_size.min(data.train.len());
    let steps_per_epoch = data.train.len().div_ceil(batch_size) as u64;

    let mut model = ToyModel::new(data.features, data.classes, config.model)?;
    let mut ctrl = controller(config, g, steps_per_epoch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut grad = vec![0.0; model.parameters().len()];

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut divergence = None;
    let mut step: u64 = 0;

    'outer: for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let fwd: Vec<Forward> = batch.iter().map(|&i| forward(&model, &data.train[i])).collect();
            let observations: Vec<Observation> = match settings.signal {
                SignalMode::Sample => batch
                    .iter()
                    .zip(&fwd)
                    .map(|(&i, f)| Observation::new(prepared.member_groups[i].clone(), f.scored.example_loss))
                    .collect(),
                SignalMode::Annotation => {
                    let mut obs = Vec::new();
                    for (&i, f) in batch.iter().zip(&fwd) {
                        let ex = &data.train[i];
                        let signal = annotation_signal(&ex.record, &f.scored.token_losses, &f.scored.mask)?;
                        for (&grp, u) in prepared.unit_groups[i].iter().zip(signal) {
                            obs.push(Observation::new(vec![grp], u));
                        }
                    }
                    obs
                }
            };
            let outcome = ctrl.step(&observations)?;
            let mut multipliers = outcome.multipliers;
            if settings.signal == SignalMode::Annotation {
                let mut per_token = Vec::with_capacity(batch.len());
                for (&i, f) in batch.iter().zip(&fwd) {
                    let ex = &data.train[i];
                    let w = token_weights(&ex.record, inventory, &multipliers.per_group, f.scored.token_losses.len())?
                        .ok_or_else(|| {
                            Error::invalid(format!("record `{}` has no token ranges", ex.record.id))
                        })?;
                    per_token.push(w);
                }
                multipliers.per_token = Some(per_token);
            }
            let scored: Vec<ScoredExample> = fwd.iter().map(|f| f.scored.clone()).collect();
            let objective = weighted_objective(&scored, &multipliers, settings.signal)?;
            let weights = gradient_weights(&scored, &multipliers, settings.signal)?;

            grad.iter_mut().for_each(|v| *v = 0.0);
            let c = model.classes();
            for ((&i, f), w) in batch.iter().zip(&fwd).zip(&weights) {
                let t = &data.train[i].tokens;
                for (k, &wk) in w.iter().enumerate() {
                    if wk != 0.0 {
                        model.accumulate_gradient(&t.features[k], &f.probs[k * c..(k + 1) * c], t.labels[k], wk, &mut grad);
                    }
                }
            }

            let diag = ctrl.diagnostics();
            let applied = if settings.signal == SignalMode::Sample {
                &multipliers.per_example
            } else {
                &multipliers.per_group
            };
            let mult_mean = applied.iter().sum::<f64>() / applied.len().max(1) as f64;
            let mult_max = applied.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let ascent_mean = (config.method == Method::StarDro && outcome.stats.scale > 0.0)
                .then(|| outcome.stats.weighted_ascent_mean());
            steps.push(StepRow {
                step,
                epoch,
                objective,
                entropy: diag.entropy,
                active_set: diag.active_set_size,
                eta_eff: diag.eta_eff,
                q: ctrl.weights().as_slice().to_vec(),
                group_losses: outcome.stats.raw_losses,
                mult_mean,
                mult_max,
                robust: outcome.robust,
                ascent_mean,
            });

            if !objective.is_finite() || objective > settings.divergence_threshold {
                divergence = Some(Divergence { step, loss: objective });
                break 'outer;
            }
            if let Err(e) = model.apply(&grad) {
                match e {
                    Error::NumericalFailure { residual, .. } => {
                        divergence = Some(Divergence { step, loss: residual });
                        break 'outer;
                    }
                    other => return Err(other),
                }
            }
            step += 1;
        }
        let v = validate(&model, &data.validation, inventory)?;
        epochs.push(EpochRow {
            epoch,
            val_losses: v.losses,
            worst_val_loss: v.worst,
            mean_val_loss: v.mean,
        });
    }

    let v = validate(&model, &data.validation, inventory)?;
    let mut train_examples = vec![0usize; g];
    for groups in &prepared.member_groups {
        for &k in groups {
            train_examples[k] += 1;
        }
    }
    let per_group = (0..g)
        .map(|k| GroupMetrics {
            key: inventory.key(k).to_owned(),
            train_examples: train_examples[k],
            val_units: v.units[k],
            val_loss: v.losses[k],
            val_accuracy: v.accuracy[k],
        })
        .collect();
    Ok(RunRecord {
        run_id: config.run_id(),
        config: config.clone(),
        groups: inventory.groups().to_vec(),
        steps_per_epoch,
        steps,
        epochs,
        final_q: ctrl.weights().clone(),
        per_group,
        worst_val_loss: v.worst,
        mean_val_loss: v.mean,
        skipped_val_units: v.skipped,
        divergence,
    })
}
