//! Classification of a converged adversarial distribution.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::simplex::SimplexVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegimeThresholds {
    /// Mass on the two largest groups that signals collapse.
    pub top2_mass: f64,
    /// Half-width of the band around `1/G` treated as uniform.
    pub uniform_band: f64,
    /// Entropy floor as a fraction of `ln G`.
    pub entropy_floor: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            top2_mass: 0.94,
            uniform_band: 0.02,
            entropy_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Balanced,
    OverConcentrated,
    UnderDifferentiated,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Balanced => "balanced",
            Regime::OverConcentrated => "over_concentrated",
            Regime::UnderDifferentiated => "under_differentiated",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub entropy: f64,
    pub top2_mass: f64,
    pub active_set_size: usize,
    pub exact_zeros: usize,
    pub max_uniform_deviation: f64,
}

/// Over-concentration is checked first, then under-differentiation.
///
/// The top-2 test only applies for `G > 2`, where it is not vacuous.
pub fn classify_regime(q: &SimplexVector, thresholds: &RegimeThresholds) -> RegimeLabel {
    let g = q.len();
    let mut sorted: Vec<f64> = q.as_slice().to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top2_mass = sorted.iter().take(2).sum::<f64>();
    let entropy = q.entropy();
    let active_set_size = q.support_size();
    let exact_zeros = g - active_set_size;
    let uniform = 1.0 / g as f64;
    let max_uniform_deviation = q
        .as_slice()
        .iter()
        .map(|x| (x - uniform).abs())
        .fold(0.0, f64::max);

    let collapsed = g > 2 && top2_mass >= thresholds.top2_mass;
    let thinned = exact_zeros > 0
        && active_set_size < g
        && entropy < thresholds.entropy_floor * (g as f64).ln();
    let regime = if collapsed || thinned {
        Regime::OverConcentrated
    } else if max_uniform_deviation < thresholds.uniform_band {
        Regime::UnderDifferentiated
    } else {
        Regime::Balanced
    };
    RegimeLabel {
        regime,
        entropy,
        top2_mass,
        active_set_size,
        exact_zeros,
        max_uniform_deviation,
    }
}
