//! Hyperparameter ranges by group count.

use serde::Serialize;

/// Inclusive range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo..=self.hi).contains(&x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub groups: usize,
    pub bucket: &'static str,
    pub eta: Band,
    pub rho: Band,
    pub alpha: Band,
    pub weight_decay: Band,
    /// Rounded `η_eff` figure quoted for the bucket.
    pub eta_eff_typical: f64,
    /// `(α−1)·η` over the bucket's η and α ranges.
    pub eta_eff_band: Band,
    /// `2.4e-4 · 9 / G`: the nine-group baseline scaled by `1/G`.
    pub eta_eff_target: f64,
    pub min_epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Advice {
    Ranges(Recommendation),
    /// With a single group the adversary has nothing to choose.
    Degenerate { groups: usize, message: String },
}

struct Row {
    bucket: &'static str,
    max_groups: usize,
    eta: Band,
    rho: Band,
    alpha: Band,
    eta_eff: f64,
    weight_decay: Band,
    min_epochs: u32,
}

const ROWS: [Row; 4] = [
    Row {
        bucket: "<=10",
        max_groups: 10,
        eta: Band::new(0.003, 0.005),
        rho: Band::new(0.02, 0.05),
        alpha: Band::new(1.05, 1.15),
        eta_eff: 2e-4,
        weight_decay: Band::new(0.05, 0.10),
        min_epochs: 2,
    },
    Row {
        bucket: "10-30",
        max_groups: 30,
        eta: Band::new(0.001, 0.003),
        rho: Band::new(0.03, 0.08),
        alpha: Band::new(1.03, 1.10),
        eta_eff: 1e-4,
        weight_decay: Band::new(0.05, 0.10),
        min_epochs: 2,
    },
    Row {
        bucket: "30-100",
        max_groups: 100,
        eta: Band::new(5e-4, 1e-3),
        rho: Band::new(0.05, 0.10),
        alpha: Band::new(1.02, 1.05),
        eta_eff: 5e-5,
        weight_decay: Band::new(0.05, 0.15),
        min_epochs: 2,
    },
    Row {
        bucket: ">100",
        max_groups: usize::MAX,
        eta: Band::new(0.0, 1e-3),
        rho: Band::new(0.08, 0.15),
        alpha: Band::new(1.01, 1.03),
        eta_eff: 2e-5,
        weight_decay: Band::new(0.10, 0.20),
        min_epochs: 3,
    },
];

const BASELINE_ETA_EFF: f64 = 0.08 * 0.003;
const BASELINE_GROUPS: f64 = 9.0;

pub fn recommend_hyperparams(groups: usize) -> Advice {
    if groups <= 1 {
        return Advice::Degenerate {
            groups,
            message: "a single group makes group DRO vacuous; train with ERM".into(),
        };
    }
    let row = ROWS
        .iter()
        .find(|r| groups <= r.max_groups)
        .expect("last row is unbounded");
    Advice::Ranges(Recommendation {
        groups,
        bucket: row.bucket,
        eta: row.eta,
        rho: row.rho,
        alpha: row.alpha,
        weight_decay: row.weight_decay,
        eta_eff_typical: row.eta_eff,
        eta_eff_band: Band::new(
            (row.alpha.lo - 1.0) * row.eta.lo,
            (row.alpha.hi - 1.0) * row.eta.hi,
        ),
        eta_eff_target: BASELINE_ETA_EFF * BASELINE_GROUPS / groups as f64,
        min_epochs: row.min_epochs,
    })
}
