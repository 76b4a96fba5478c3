//! Multinomial logistic regression over per-token feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub learning_rate: f64,
    /// Decoupled weight decay `λ`.
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            weight_decay: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Linear softmax classifier, `θ` stored row-major as features × classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    features: usize,
    classes: usize,
    theta: Vec<f64>,
    config: ModelConfig,
}

impl ToyModel {
    /// Zero-initialized model.
    pub fn new(features: usize, classes: usize, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        if features == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "need at least one feature and two classes, got {features} x {classes}"
            )));
        }
        Ok(Self {
            features,
            classes,
            theta: vec![0.0; features * classes],
            config,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn parameters(&self) -> &[f64] {
        &self.theta
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Class probabilities for one token, written into `out`.
    pub fn probabilities(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.features);
        out.iter_mut().for_each(|o| *o = 0.0);
        for (f, &xf) in x.iter().enumerate() {
            if xf == 0.0 {
                continue;
            }
            let row = &self.theta[f * self.classes..(f + 1) * self.classes];
            for (o, w) in out.iter_mut().zip(row) {
                *o += xf * w;
            }
        }
        let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            total += *o;
        }
        out.iter_mut().for_each(|o| *o /= total);
    }

    /// Cross-entropy of one token.
    pub fn token_loss(&self, x: &[f64], label: usize) -> f64 {
        let mut p = vec![0.0; self.classes];
        self.probabilities(x, &mut p);
        -p[label].max(f64::MIN_POSITIVE).ln()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let mut p = vec![0.0; self.classes];
        self.probabilities(x, &mut p);
        p.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
            .0
    }

    /// Adds `weight·∇ℓ` for one token given its probabilities.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        probs: &[f64],
        label: usize,
        weight: f64,
        grad: &mut [f64],
    ) {
        for (f, &xf) in x.iter().enumerate() {
            if xf == 0.0 {
                continue;
            }
            let row = &mut grad[f * self.classes..(f + 1) * self.classes];
            for (c, g) in row.iter_mut().enumerate() {
                let residual = probs[c] - if c == label { 1.0 } else { 0.0 };
                *g += weight * xf * residual;
            }
        }
    }

    /// `θ ← (1 − lr·λ)·θ − lr·grad`.
    pub fn apply(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.theta.len() {
            return Err(Error::invalid("gradient shape does not match parameters"));
        }
        let lr = self.config.learning_rate;
        let shrink = 1.0 - lr * self.config.weight_decay;
        for (w, g) in self.theta.iter_mut().zip(grad) {
            *w = shrink * *w - lr * g;
        }
        if let Some(bad) = self.theta.iter().find(|w| !w.is_finite()) {
            return Err(Error::NumericalFailure {
                message: "non-finite model parameter".into(),
                residual: *bad,
            });
        }
        Ok(())
    }
}
