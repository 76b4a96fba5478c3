//! Stateful group reweighting controllers.
//!
//! [`StarDro`] keeps an EMA of per-group difficulty, runs Tsallis mirror
//! ascent on the adversarial simplex, and turns only the mass above uniform
//! into bounded multipliers in `[1, U]`. [`StandardDro`] is the dense
//! exponentiated-gradient baseline driven by raw minibatch losses.
//!
//! Both controllers are single-writer: one training loop owns one controller
//! and calls `step` once per minibatch.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simplex::{exponentiated_gradient_step, mirror_ascent_step, SimplexVector, TsallisOrder};

/// Step index meaning "never activate".
pub const NEVER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweighterConfig {
    pub alpha: TsallisOrder,
    /// Mirror-ascent step size.
    pub eta: f64,
    /// EMA coefficient in (0, 1].
    pub rho: f64,
    /// Multiplier ceiling `U > 1`.
    pub ceiling: f64,
    /// Shaping exponent `γ > 0`.
    pub curvature: f64,
    /// First global step (0-based) at which robust reweighting is applied.
    pub activation_step: u64,
}

impl Default for ReweighterConfig {
    fn default() -> Self {
        Self {
            alpha: TsallisOrder::new(1.08).expect("1.08 > 1"),
            eta: 0.003,
            rho: 0.03,
            ceiling: 10.0,
            curvature: 0.75,
            activation_step: 0,
        }
    }
}

impl ReweighterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid(format!("eta must be > 0, got {}", self.eta)));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::invalid(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        if !(self.ceiling > 1.0) || !self.ceiling.is_finite() {
            return Err(Error::invalid(format!(
                "ceiling must be > 1, got {}",
                self.ceiling
            )));
        }
        if !(self.curvature > 0.0) || !self.curvature.is_finite() {
            return Err(Error::invalid(format!(
                "curvature must be > 0, got {}",
                self.curvature
            )));
        }
        Ok(())
    }

    /// Effective dual step `(α - 1)·η`.
    pub fn eta_eff(&self) -> f64 {
        (self.alpha.get() - 1.0) * self.eta
    }
}

/// One unit contributing to the group-loss estimate: its group-membership
/// set `S_i` and its update signal `u_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub groups: Vec<usize>,
    pub loss: f64,
}

impl Observation {
    pub fn new(groups: Vec<usize>, loss: f64) -> Self {
        Self { groups, loss }
    }

    fn distinct_groups(&self) -> Vec<usize> {
        let mut g = self.groups.clone();
        g.sort_unstable();
        g.dedup();
        g
    }
}

/// Overlap-corrected minibatch estimates and contributor counts.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupEstimates {
    /// `L̂_g` for present groups, `None` otherwise.
    pub losses: Vec<Option<f64>>,
    /// Number of observations contributing to each group.
    pub counts: Vec<usize>,
}

impl GroupEstimates {
    pub fn present(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&g| self.counts[g] > 0).collect()
    }
}

/// Per-group losses with every example's contribution weighted by `1/ν_i`.
pub fn estimate_group_losses(
    num_groups: usize,
    observations: &[Observation],
) -> Result<GroupEstimates> {
    let mut numer = vec![0.0; num_groups];
    let mut denom = vec![0.0; num_groups];
    let mut counts = vec![0usize; num_groups];
    for (i, obs) in observations.iter().enumerate() {
        let groups = obs.distinct_groups();
        if groups.is_empty() {
            return Err(Error::invalid(format!("observation {i} has no groups")));
        }
        if !obs.loss.is_finite() {
            return Err(Error::invalid(format!(
                "observation {i} has non-finite loss {}",
                obs.loss
            )));
        }
        if let Some(&g) = groups.iter().find(|&&g| g >= num_groups) {
            return Err(Error::invalid(format!(
                "observation {i} references group {g} but only {num_groups} exist"
            )));
        }
        let share = 1.0 / groups.len() as f64;
        for g in groups {
            numer[g] += share * obs.loss;
            denom[g] += share;
            counts[g] += 1;
        }
    }
    let losses = numer
        .iter()
        .zip(&denom)
        .map(|(n, d)| (*d > 0.0).then(|| n / d))
        .collect();
    Ok(GroupEstimates { losses, counts })
}

/// EMA update: seed on first sight, blend when present, freeze when absent.
pub fn update_ema(ema: &mut [Option<f64>], raw: &[Option<f64>], rho: f64) {
    for (slot, fresh) in ema.iter_mut().zip(raw) {
        if let Some(x) = fresh {
            *slot = Some(match *slot {
                None => *x,
                Some(prev) => (1.0 - rho) * prev + rho * x,
            });
        }
    }
}

/// Rescaled ascent signal over present groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Ascent {
    /// Count-weighted mean `s_t` of present smoothed losses.
    pub scale: f64,
    /// `L_g / s_t` for present groups, 0 otherwise.
    pub signal: Vec<f64>,
    /// True when `s_t = 0`; the signal is then all zeros.
    pub degenerate: bool,
}

pub fn compute_ascent(smoothed: &[Option<f64>], counts: &[usize]) -> Result<Ascent> {
    if smoothed.len() != counts.len() {
        return Err(Error::invalid("smoothed losses and counts differ in length"));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("no groups present in the batch"));
    }
    let mut scale = 0.0;
    for (g, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let l = smoothed[g].ok_or_else(|| {
            Error::invalid(format!("present group {g} has no smoothed loss"))
        })?;
        scale += n as f64 / total as f64 * l;
    }
    if scale == 0.0 {
        return Ok(Ascent {
            scale,
            signal: vec![0.0; counts.len()],
            degenerate: true,
        });
    }
    let signal = counts
        .iter()
        .zip(smoothed)
        .map(|(&n, l)| match (n, l) {
            (0, _) | (_, None) => 0.0,
            (_, Some(l)) => l / scale,
        })
        .collect();
    Ok(Ascent {
        scale,
        signal,
        degenerate: false,
    })
}

/// Density ratio → clipped excess → power-law shaping.
pub fn shape_multiplier(q_g: f64, num_groups: usize, ceiling: f64, curvature: f64) -> f64 {
    if num_groups <= 1 {
        return 1.0;
    }
    let g = num_groups as f64;
    let excess = ((g * q_g - 1.0) / (g - 1.0)).clamp(0.0, 1.0);
    if excess == 0.0 {
        return 1.0;
    }
    1.0 + (ceiling - 1.0) * excess.powf(curvature)
}

/// Quantities computed for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatchStats {
    pub present: Vec<usize>,
    pub counts: Vec<usize>,
    pub raw_losses: Vec<Option<f64>>,
    pub smoothed_losses: Vec<Option<f64>>,
    pub scale: f64,
    pub ascent: Vec<f64>,
}

impl GroupBatchStats {
    /// `Σ_{g∈P} π(g)·a_g`, which is 1 unless the scale was degenerate.
    pub fn weighted_ascent_mean(&self) -> f64 {
        let total: usize = self.counts.iter().sum();
        self.present
            .iter()
            .map(|&g| self.counts[g] as f64 / total as f64 * self.ascent[g])
            .sum()
    }
}

/// Robust weights produced by a controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet {
    /// Per-group multipliers. Bounded in `[1, U]` for [`StarDro`]; the
    /// density ratio `G·q_g` for [`StandardDro`].
    pub per_group: Vec<f64>,
    /// One weight per observation, in batch order.
    pub per_example: Vec<f64>,
    /// Token-level weights, filled in by annotation-level attribution.
    pub per_token: Option<Vec<Vec<f64>>>,
}

impl MultiplierSet {
    pub fn neutral(num_groups: usize, batch: usize) -> Self {
        Self {
            per_group: vec![1.0; num_groups],
            per_example: vec![1.0; batch],
            per_token: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub stats: GroupBatchStats,
    pub multipliers: MultiplierSet,
    /// Whether robust reweighting was applied at this step.
    pub robust: bool,
}

/// Distributional health of the adversarial weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Shannon entropy of `q` in nats.
    pub entropy: f64,
    pub active_set_size: usize,
    pub eta_eff: f64,
}

pub fn diagnostics(q: &SimplexVector, eta_eff: f64) -> Diagnostics {
    Diagnostics {
        entropy: q.entropy(),
        active_set_size: q.support_size(),
        eta_eff,
    }
}

/// Common surface of the group reweighting controllers.
pub trait GroupReweighter: Send {
    fn step(&mut self, observations: &[Observation]) -> Result<StepOutcome>;
    fn weights(&self) -> &SimplexVector;
    fn diagnostics(&self) -> Diagnostics;
    fn num_groups(&self) -> usize {
        self.weights().len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweighterState {
    pub q: SimplexVector,
    pub ema_losses: Vec<Option<f64>>,
    pub step: u64,
}

impl ReweighterState {
    pub fn new(num_groups: usize) -> Result<Self> {
        Ok(Self {
            q: SimplexVector::uniform(num_groups)?,
            ema_losses: vec![None; num_groups],
            step: 0,
        })
    }
}

/// Per-step `(eta, rho)` override.
pub type StepSchedule = Arc<dyn Fn(u64) -> (f64, f64) + Send + Sync>;

/// Stateful Tsallis-robust reweighting controller.
#[derive(Clone)]
pub struct StarDro {
    config: ReweighterConfig,
    state: ReweighterState,
    schedule: Option<StepSchedule>,
}

impl fmt::Debug for StarDro {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StarDro")
            .field("config", &self.config)
            .field("state", &self.state)
            .field("scheduled", &self.schedule.is_some())
            .finish()
    }
}

impl StarDro {
    pub fn new(num_groups: usize, config: ReweighterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            state: ReweighterState::new(num_groups)?,
            schedule: None,
        })
    }

    pub fn with_schedule(mut self, schedule: StepSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn config(&self) -> &ReweighterConfig {
        &self.config
    }

    pub fn state(&self) -> &ReweighterState {
        &self.state
    }

    fn step_sizes(&self) -> (f64, f64) {
        match &self.schedule {
            Some(f) => f(self.state.step),
            None => (self.config.eta, self.config.rho),
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            q: self.state.q.as_slice().to_vec(),
            ema_losses: self.state.ema_losses.clone(),
            step: self.state.step,
            alpha: self.config.alpha.get(),
            eta: self.config.eta,
            rho: self.config.rho,
            ceiling: self.config.ceiling,
            curvature: self.config.curvature,
            activation_step: self.config.activation_step,
        }
    }

    pub fn from_snapshot(snapshot: &Snapshot) -> Result<Self> {
        let config = ReweighterConfig {
            alpha: TsallisOrder::new(snapshot.alpha)?,
            eta: snapshot.eta,
            rho: snapshot.rho,
            ceiling: snapshot.ceiling,
            curvature: snapshot.curvature,
            activation_step: snapshot.activation_step,
        };
        config.validate()?;
        let q = SimplexVector::new(snapshot.q.clone())?;
        if snapshot.ema_losses.len() != q.len() {
            return Err(Error::Schema(format!(
                "snapshot has {} EMA entries for {} groups",
                snapshot.ema_losses.len(),
                q.len()
            )));
        }
        Ok(Self {
            config,
            state: ReweighterState {
                q,
                ema_losses: snapshot.ema_losses.clone(),
                step: snapshot.step,
            },
            schedule: None,
        })
    }
}

impl GroupReweighter for StarDro {
    fn step(&mut self, observations: &[Observation]) -> Result<StepOutcome> {
        let groups = self.state.q.len();
        let (eta, rho) = self.step_sizes();
        let raw = estimate_group_losses(groups, observations)?;
        update_ema(&mut self.state.ema_losses, &raw.losses, rho);

        let present = raw.present();
        let ascent = if present.is_empty() {
            Ascent {
                scale: 0.0,
                signal: vec![0.0; groups],
                degenerate: true,
            }
        } else {
            compute_ascent(&self.state.ema_losses, &raw.counts)?
        };
        let stats = GroupBatchStats {
            present,
            counts: raw.counts,
            raw_losses: raw.losses,
            smoothed_losses: self.state.ema_losses.clone(),
            scale: ascent.scale,
            ascent: ascent.signal,
        };

        let step = self.state.step;
        self.state.step += 1;
        if step < self.config.activation_step {
            return Ok(StepOutcome {
                stats,
                multipliers: MultiplierSet::neutral(groups, observations.len()),
                robust: false,
            });
        }
        if step == self.config.activation_step {
            self.state.q = SimplexVector::uniform(groups)?;
        }
        if !ascent.degenerate {
            self.state.q = mirror_ascent_step(&self.state.q, &stats.ascent, self.config.alpha, eta)?;
        }

        let mut per_group = vec![1.0; groups];
        for &g in &stats.present {
            per_group[g] =
                shape_multiplier(self.state.q[g], groups, self.config.ceiling, self.config.curvature);
        }
        let per_example = observations
            .iter()
            .map(|obs| {
                let gs = obs.distinct_groups();
                gs.iter().map(|&g| per_group[g]).sum::<f64>() / gs.len() as f64
            })
            .collect();
        Ok(StepOutcome {
            stats,
            multipliers: MultiplierSet {
                per_group,
                per_example,
                per_token: None,
            },
            robust: true,
        })
    }

    fn weights(&self) -> &SimplexVector {
        &self.state.q
    }

    fn diagnostics(&self) -> Diagnostics {
        diagnostics(&self.state.q, self.config.eta_eff())
    }
}

/// Checkpoint document for [`StarDro`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub q: Vec<f64>,
    pub ema_losses: Vec<Option<f64>>,
    pub step: u64,
    pub alpha: f64,
    pub eta: f64,
    pub rho: f64,
    pub ceiling: f64,
    pub curvature: f64,
    pub activation_step: u64,
}

impl Snapshot {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("snapshot", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::json("snapshot", e))
    }
}

/// Dense exponentiated-gradient group DRO on raw minibatch losses.
#[derive(Debug, Clone)]
pub struct StandardDro {
    eta: f64,
    activation_step: u64,
    q: SimplexVector,
    step: u64,
}

impl StandardDro {
    pub fn new(num_groups: usize, eta: f64, activation_step: u64) -> Result<Self> {
        if !(eta >= 0.0) || !eta.is_finite() {
            return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
        }
        Ok(Self {
            eta,
            activation_step,
            q: SimplexVector::uniform(num_groups)?,
            step: 0,
        })
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }
}

impl GroupReweighter for StandardDro {
    fn step(&mut self, observations: &[Observation]) -> Result<StepOutcome> {
        let groups = self.q.len();
        let raw = estimate_group_losses(groups, observations)?;
        let present = raw.present();
        let stats = GroupBatchStats {
            present,
            counts: raw.counts.clone(),
            raw_losses: raw.losses.clone(),
            smoothed_losses: raw.losses.clone(),
            scale: 0.0,
            ascent: vec![0.0; groups],
        };

        let step = self.step;
        self.step += 1;
        if step < self.activation_step {
            return Ok(StepOutcome {
                stats,
                multipliers: MultiplierSet::neutral(groups, observations.len()),
                robust: false,
            });
        }
        if step == self.activation_step {
            self.q = SimplexVector::uniform(groups)?;
        }
        let losses: Vec<f64> = raw.losses.iter().map(|l| l.unwrap_or(0.0)).collect();
        self.q = exponentiated_gradient_step(&self.q, &losses, self.eta)?;

        let mut per_example: Vec<f64> = observations
            .iter()
            .map(|obs| {
                let gs = obs.distinct_groups();
                gs.iter().map(|&g| self.q[g]).sum::<f64>() / gs.len() as f64
            })
            .collect();
        if !per_example.is_empty() {
            let mean = per_example.iter().sum::<f64>() / per_example.len() as f64;
            if !(mean > 0.0) {
                return Err(Error::DegenerateBatch(
                    "all group weights in the batch are zero".into(),
                ));
            }
            per_example.iter_mut().for_each(|w| *w /= mean);
        }
        let per_group = self.q.as_slice().iter().map(|&x| x * groups as f64).collect();
        Ok(StepOutcome {
            stats,
            multipliers: MultiplierSet {
                per_group,
                per_example,
                per_token: None,
            },
            robust: true,
        })
    }

    fn weights(&self) -> &SimplexVector {
        &self.q
    }

    fn diagnostics(&self) -> Diagnostics {
        diagnostics(&self.q, self.eta)
    }
}

/// Empirical risk minimization: every multiplier is 1, `q` stays uniform.
#[derive(Debug, Clone)]
pub struct Erm {
    q: SimplexVector,
}

impl Erm {
    pub fn new(num_groups: usize) -> Result<Self> {
        Ok(Self {
            q: SimplexVector::uniform(num_groups)?,
        })
    }
}

impl GroupReweighter for Erm {
    fn step(&mut self, observations: &[Observation]) -> Result<StepOutcome> {
        let groups = self.q.len();
        let raw = estimate_group_losses(groups, observations)?;
        Ok(StepOutcome {
            stats: GroupBatchStats {
                present: raw.present(),
                counts: raw.counts,
                raw_losses: raw.losses.clone(),
                smoothed_losses: raw.losses,
                scale: 0.0,
                ascent: vec![0.0; groups],
            },
            multipliers: MultiplierSet::neutral(groups, observations.len()),
            robust: false,
        })
    }

    fn weights(&self) -> &SimplexVector {
        &self.q
    }

    fn diagnostics(&self) -> Diagnostics {
        diagnostics(&self.q, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn obs(groups: &[usize], loss: f64) -> Observation {
        Observation::new(groups.to_vec(), loss)
    }

    #[test]
    fn overlap_corrected_estimates() {
        let est = estimate_group_losses(2, &[obs(&[0, 1], 2.0), obs(&[0], 1.0)]).unwrap();
        assert_abs_diff_eq!(est.losses[0].unwrap(), 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.losses[1].unwrap(), 2.0, epsilon = 1e-12);
        assert_eq!(est.counts, vec![2, 1]);

        let est = estimate_group_losses(1, &[obs(&[0], 3.7)]).unwrap();
        assert_eq!(est.losses[0], Some(3.7));

        let est = estimate_group_losses(1, &[obs(&[0], 1.0), obs(&[0], 3.0)]).unwrap();
        assert_eq!(est.losses[0], Some(2.0));
    }

    #[test]
    fn estimate_edge_cases() {
        let est = estimate_group_losses(3, &[]).unwrap();
        assert!(est.losses.iter().all(Option::is_none));
        assert!(est.present().is_empty());
        assert!(matches!(
            estimate_group_losses(3, &[obs(&[], 1.0)]),
            Err(Error::InvalidInput(_))
        ));
        assert!(estimate_group_losses(3, &[obs(&[5], 1.0)]).is_err());
        assert!(estimate_group_losses(3, &[obs(&[0], f64::NAN)]).is_err());
    }

    #[test]
    fn duplicate_memberships_count_once() {
        let est = estimate_group_losses(2, &[obs(&[0, 0, 1], 2.0)]).unwrap();
        assert_eq!(est.losses, vec![Some(2.0), Some(2.0)]);
        assert_eq!(est.counts, vec![1, 1]);
    }

    #[test]
    fn ema_branches() {
        let mut ema = vec![None, Some(1.0), Some(0.7)];
        update_ema(&mut ema, &[Some(2.0), Some(2.0), None], 0.03);
        assert_eq!(ema[0], Some(2.0));
        assert_abs_diff_eq!(ema[1].unwrap(), 1.03, epsilon = 1e-12);
        assert_eq!(ema[2], Some(0.7));
    }

    #[test]
    fn ascent_examples() {
        let a = compute_ascent(&[Some(1.0), Some(2.0)], &[3, 1]).unwrap();
        assert_abs_diff_eq!(a.scale, 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(a.signal[0], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(a.signal[1], 1.6, epsilon = 1e-12);

        let a = compute_ascent(&[Some(4.2), None, Some(9.0)], &[5, 0, 0]).unwrap();
        assert_eq!(a.signal, vec![1.0, 0.0, 0.0]);

        let a = compute_ascent(&[Some(0.6), Some(0.6), Some(0.6)], &[1, 4, 2]).unwrap();
        for x in a.signal {
            assert_abs_diff_eq!(x, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ascent_degenerate_and_errors() {
        let a = compute_ascent(&[Some(0.0), Some(0.0)], &[1, 2]).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.signal, vec![0.0, 0.0]);
        assert!(compute_ascent(&[Some(1.0)], &[0]).is_err());
        assert!(compute_ascent(&[None], &[1]).is_err());
    }

    #[test]
    fn multiplier_shaping() {
        assert_eq!(shape_multiplier(1.0 / 9.0, 9, 10.0, 0.75), 1.0);
        assert_abs_diff_eq!(shape_multiplier(1.0, 9, 10.0, 0.75), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            shape_multiplier(2.0 / 9.0, 9, 10.0, 0.75),
            1.0 + 9.0 * 0.125f64.powf(0.75),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(shape_multiplier(2.0 / 9.0, 9, 10.0, 0.75), 2.892, epsilon = 1e-3);
        assert_eq!(shape_multiplier(0.01, 9, 10.0, 0.75), 1.0);
        assert_eq!(shape_multiplier(1.0, 1, 10.0, 0.75), 1.0);
    }

    #[test]
    fn config_validation() {
        let base = ReweighterConfig::default();
        assert!(base.validate().is_ok());
        assert!(ReweighterConfig { rho: 0.0, ..base }.validate().is_err());
        assert!(ReweighterConfig { rho: 1.5, ..base }.validate().is_err());
        assert!(ReweighterConfig { ceiling: 1.0, ..base }.validate().is_err());
        assert!(ReweighterConfig { curvature: 0.0, ..base }.validate().is_err());
        assert!(ReweighterConfig { eta: 0.0, ..base }.validate().is_err());
    }

    #[test]
    fn diagnostics_examples() {
        let d = diagnostics(&SimplexVector::uniform(9).unwrap(), 0.0);
        assert_abs_diff_eq!(d.entropy, 2.1972245773362196, epsilon = 1e-12);
        assert_eq!(d.active_set_size, 9);
        let cfg = ReweighterConfig::default();
        assert_abs_diff_eq!(cfg.eta_eff(), 2.4e-4, epsilon = 1e-15);
        let mut point = vec![0.0; 9];
        point[0] = 1.0;
        let d = diagnostics(&SimplexVector::new(point).unwrap(), 0.0);
        assert_eq!(d.entropy, 0.0);
        assert_eq!(d.active_set_size, 1);
    }

    #[test]
    fn star_dro_before_activation_is_neutral() {
        let cfg = ReweighterConfig {
            activation_step: 3,
            ..Default::default()
        };
        let mut ctl = StarDro::new(3, cfg).unwrap();
        for _ in 0..3 {
            let out = ctl.step(&[obs(&[0], 5.0), obs(&[1], 0.1)]).unwrap();
            assert!(!out.robust);
            assert_eq!(out.multipliers.per_example, vec![1.0, 1.0]);
            assert_eq!(ctl.weights(), &SimplexVector::uniform(3).unwrap());
        }
        // EMA warm-started during the neutral phase.
        assert!(ctl.state().ema_losses[0].is_some());
        let out = ctl.step(&[obs(&[0], 5.0), obs(&[1], 0.1)]).unwrap();
        assert!(out.robust);
        assert!(ctl.weights()[0] > 1.0 / 3.0);
    }

    #[test]
    fn star_dro_multipliers_use_post_update_weights() {
        let cfg = ReweighterConfig {
            alpha: TsallisOrder::new(2.0).unwrap(),
            eta: 1.0,
            ..Default::default()
        };
        let mut ctl = StarDro::new(2, cfg).unwrap();
        let out = ctl.step(&[obs(&[0], 3.0), obs(&[1], 1.0)]).unwrap();
        // a = [1.5, 0.5]; u = 0.5 + a → [2.0, 1.0]; sparsemax → [1, 0].
        assert_eq!(ctl.weights().as_slice(), &[1.0, 0.0]);
        assert_abs_diff_eq!(out.multipliers.per_group[0], 10.0, epsilon = 1e-12);
        assert_eq!(out.multipliers.per_group[1], 1.0);
        assert_abs_diff_eq!(out.stats.weighted_ascent_mean(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn star_dro_absent_groups_stay_neutral_and_frozen() {
        let mut ctl = StarDro::new(3, ReweighterConfig::default()).unwrap();
        ctl.step(&[obs(&[0], 1.0), obs(&[1], 2.0), obs(&[2], 0.5)])
            .unwrap();
        let frozen = ctl.state().ema_losses[2];
        for _ in 0..5 {
            let out = ctl.step(&[obs(&[0], 1.0), obs(&[1], 2.0)]).unwrap();
            assert_eq!(out.multipliers.per_group[2], 1.0);
            assert_eq!(out.stats.ascent[2], 0.0);
            assert_eq!(ctl.state().ema_losses[2], frozen);
        }
    }

    #[test]
    fn star_dro_mean_aggregation() {
        let cfg = ReweighterConfig {
            alpha: TsallisOrder::new(2.0).unwrap(),
            eta: 1.0,
            ..Default::default()
        };
        let mut ctl = StarDro::new(2, cfg).unwrap();
        let out = ctl
            .step(&[obs(&[0], 3.0), obs(&[1], 1.0), obs(&[0, 1], 2.0)])
            .unwrap();
        let m = &out.multipliers;
        assert_abs_diff_eq!(
            m.per_example[2],
            0.5 * (m.per_group[0] + m.per_group[1]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn degenerate_scale_skips_mirror_step() {
        let mut ctl = StarDro::new(2, ReweighterConfig::default()).unwrap();
        let out = ctl.step(&[obs(&[0], 0.0), obs(&[1], 0.0)]).unwrap();
        assert_eq!(ctl.weights(), &SimplexVector::uniform(2).unwrap());
        assert_eq!(out.multipliers.per_example, vec![1.0, 1.0]);
    }

    #[test]
    fn schedule_hook_overrides_constants() {
        let cfg = ReweighterConfig {
            alpha: TsallisOrder::new(2.0).unwrap(),
            ..Default::default()
        };
        let mut fixed = StarDro::new(2, cfg).unwrap();
        let mut scheduled = StarDro::new(2, cfg)
            .unwrap()
            .with_schedule(Arc::new(|_| (0.0, 0.03)));
        let batch = [obs(&[0], 3.0), obs(&[1], 1.0)];
        fixed.step(&batch).unwrap();
        scheduled.step(&batch).unwrap();
        assert_ne!(fixed.weights(), scheduled.weights());
        assert_eq!(scheduled.weights(), &SimplexVector::uniform(2).unwrap());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut ctl = StarDro::new(3, ReweighterConfig::default()).unwrap();
        ctl.step(&[obs(&[0], 1.0), obs(&[1], 2.0)]).unwrap();
        let text = ctl.snapshot().to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in [
            "q",
            "ema_losses",
            "step",
            "alpha",
            "eta",
            "rho",
            "ceiling",
            "curvature",
            "activation_step",
        ] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        assert!(value["ema_losses"][2].is_null());
        let restored = StarDro::from_snapshot(&Snapshot::from_json(&text).unwrap()).unwrap();
        assert_eq!(restored.state(), ctl.state());
        assert_eq!(restored.config(), ctl.config());
    }

    #[test]
    fn standard_dro_examples() {
        let mut ctl = StandardDro::new(2, 1.0, 0).unwrap();
        let out = ctl.step(&[obs(&[0], 1.0), obs(&[1], 0.0)]).unwrap();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(ctl.weights()[0], e / (e + 1.0), epsilon = 1e-12);
        let mean: f64 = out.multipliers.per_example.iter().sum::<f64>() / 2.0;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);

        let mut ctl = StandardDro::new(3, 0.5, 0).unwrap();
        let out = ctl.step(&[obs(&[0], 0.7), obs(&[1], 0.7), obs(&[2], 0.7)]).unwrap();
        for w in &out.multipliers.per_example {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-12);
        }
        for w in ctl.weights().as_slice() {
            assert_abs_diff_eq!(*w, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn standard_dro_absent_group_gets_zero_gradient() {
        let mut ctl = StandardDro::new(3, 1.0, 0).unwrap();
        ctl.step(&[obs(&[0], 1.0), obs(&[1], 1.0)]).unwrap();
        let q = ctl.weights();
        // Present groups multiplied by e, absent by 1, then renormalized.
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(q[2], 1.0 / (2.0 * e + 1.0), epsilon = 1e-12);
    }
}
