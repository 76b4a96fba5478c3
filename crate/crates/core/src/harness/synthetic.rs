//! Skewed multi-group toy task with per-token features.
//!
//! Groups are Sub-codes nested under a few Codes and the model predicts the
//! Code of every content token. Groups are dealt to Codes largest first,
//! each going to the Code with the smallest running total, so the skew
//! lives between Sub-codes rather than between Codes.
//!
//! Every example is a short "completion": two prompt tokens (masked out),
//! then for each annotation a delimiter token followed by 2 to 5 content
//! tokens, then a closing delimiter. Content tokens of an annotation share a
//! feature vector drawn around the prototype of the annotation's class and
//! carry that class as their label. Delimiter tokens carry an extra
//! structural class that is trivially predictable.
//!
//! Hard groups get label noise and a prototype shift toward the next class,
//! which raises their Bayes risk.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grouping::{AnnotationRecord, Direction, ExampleRecord};

/// Feature layout: bias, delimiter flag, prompt flag, then signal and noise dims.
const FIXED_FEATURES: usize = 3;
const MIN_UNIT_TOKENS: usize = 2;
const MAX_UNIT_TOKENS: usize = 5;
const MAX_EXTRA_ANNOTATIONS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardGroup {
    pub group: usize,
    /// Probability that an annotation's label is replaced by another class.
    #[serde(default)]
    pub label_noise: f64,
    /// Fraction of the prototype moved toward the next class, in `[0, 1)`.
    #[serde(default)]
    pub shift: f64,
    /// Scale of this group's own offset from its class prototype; replaces
    /// the task-wide `group_offset` when larger.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskSpec {
    pub num_groups: usize,
    /// Training examples whose primary annotation falls in each group.
    pub group_sizes: Vec<usize>,
    pub hard_groups: Vec<HardGroup>,
    /// Informative feature dimensions.
    pub feature_dim: usize,
    /// Pure-noise feature dimensions.
    pub noise_dim: usize,
    /// Content classes (Codes).
    pub classes: usize,
    pub separation: f64,
    /// Scale of each group's own offset from its class prototype.
    pub group_offset: f64,
    /// Per-annotation spread around the class prototype.
    pub feature_noise: f64,
    /// Per-token spread around the annotation's feature vector.
    pub token_jitter: f64,
    pub base_label_noise: f64,
    /// Probability of each extra annotation drawn from another group.
    pub cross_group_rate: f64,
    pub validation_per_group: usize,
    pub seed: u64,
}

/// Geometric sizes from `largest` down to `smallest`.
pub fn geometric_sizes(groups: usize, largest: usize, smallest: usize) -> Vec<usize> {
    if groups == 1 {
        return vec![largest];
    }
    let ratio = (smallest as f64 / largest as f64).powf(1.0 / (groups - 1) as f64);
    (0..groups)
        .map(|k| (largest as f64 * ratio.powi(k as i32)).round() as usize)
        .collect()
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        Self {
            num_groups: 9,
            group_sizes: geometric_sizes(9, 300, 5),
            hard_groups: vec![
                HardGroup {
                    group: 4,
                    label_noise: 0.05,
                    shift: 0.5,
                    offset: 3.0,
                },
                HardGroup {
                    group: 3,
                    label_noise: 0.05,
                    shift: 0.5,
                    offset: 3.0,
                },
            ],
            feature_dim: 8,
            noise_dim: 192,
            classes: 3,
            separation: 1.0,
            group_offset: 0.0,
            feature_noise: 0.6,
            token_jitter: 0.3,
            base_label_noise: 0.1,
            cross_group_rate: 0.1,
            validation_per_group: 200,
            seed: 0,
        }
    }
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 {
            return Err(Error::invalid("num_groups must be positive"));
        }
        if self.group_sizes.len() != self.num_groups {
            return Err(Error::invalid(format!(
                "{} group sizes for {} groups",
                self.group_sizes.len(),
                self.num_groups
            )));
        }
        if self.group_sizes.iter().sum::<usize>() == 0 {
            return Err(Error::invalid("group sizes sum to zero"));
        }
        if self.classes == 0 {
            return Err(Error::invalid("classes must be positive"));
        }
        let mut seen = BTreeSet::new();
        for h in &self.hard_groups {
            if h.group >= self.num_groups || !seen.insert(h.group) {
                return Err(Error::invalid(format!("bad hard group index {}", h.group)));
            }
            if !(0.0..=1.0).contains(&h.label_noise)
                || !(0.0..1.0).contains(&h.shift)
                || !(h.offset >= 0.0 && h.offset.is_finite())
            {
                return Err(Error::invalid(format!(
                    "hard group {} needs label_noise in [0, 1], shift in [0, 1) and offset >= 0",
                    h.group
                )));
            }
        }
        for (name, p) in [
            ("base_label_noise", self.base_label_noise),
            ("cross_group_rate", self.cross_group_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, v) in [
            ("separation", self.separation),
            ("group_offset", self.group_offset),
            ("feature_noise", self.feature_noise),
            ("token_jitter", self.token_jitter),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        FIXED_FEATURES + self.feature_dim + self.noise_dim
    }

    /// Content classes plus the delimiter class.
    pub fn label_count(&self) -> usize {
        self.classes + 1
    }

    /// Class of every group.
    pub fn group_classes(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.num_groups).collect();
        order.sort_by_key(|&g| (std::cmp::Reverse(self.group_sizes[g]), g));
        let mut totals = vec![0usize; self.classes];
        let mut class = vec![0; self.num_groups];
        for g in order {
            let c = (0..self.classes).min_by_key(|&c| (totals[c], c)).expect("classes > 0");
            class[g] = c;
            totals[c] += self.group_sizes[g];
        }
        class
    }

}

/// Per-token inputs of one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// Completion mask; prompt tokens are `false`.
    pub mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A grouped record plus its token-level payload. Serialized as one JSON
/// object with an extra `tokens` field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    #[serde(flatten)]
    pub record: ExampleRecord,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub train: Vec<SyntheticExample>,
    pub validation: Vec<SyntheticExample>,
    pub features: usize,
    /// Number of label classes, delimiter included.
    pub classes: usize,
}

impl SyntheticDataset {
    /// Wraps loaded splits, inferring and checking the shapes.
    pub fn from_splits(train: Vec<SyntheticExample>, validation: Vec<SyntheticExample>) -> Result<Self> {
        let mut features = None;
        let mut classes = 0;
        for ex in train.iter().chain(&validation) {
            let t = &ex.tokens;
            if t.features.len() != t.len() || t.mask.len() != t.len() {
                return Err(Error::Schema(format!(
                    "record `{}`: features, labels and mask differ in length",
                    ex.record.id
                )));
            }
            for x in &t.features {
                match features {
                    None => features = Some(x.len()),
                    Some(f) if f != x.len() => {
                        return Err(Error::Schema(format!(
                            "record `{}`: feature vector of length {} (expected {f})",
                            ex.record.id,
                            x.len()
                        )))
                    }
                    _ => {}
                }
            }
            classes = t.labels.iter().fold(classes, |c, &l| c.max(l + 1));
        }
        let features = features.ok_or_else(|| Error::invalid("dataset has no tokens"))?;
        Ok(Self {
            train,
            validation,
            features,
            classes: classes.max(2),
        })
    }
}

struct Generator<'a> {
    spec: &'a SyntheticTaskSpec,
    rng: ChaCha8Rng,
    prototypes: Vec<Vec<f64>>,
    offsets: Vec<Vec<f64>>,
    class_of: Vec<usize>,
}

impl Generator<'_> {
    fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    fn hard(&self, group: usize) -> Option<&HardGroup> {
        self.spec.hard_groups.iter().find(|h| h.group == group)
    }

    fn unit_label(&mut self, group: usize) -> usize {
        let classes = self.spec.classes;
        let clean = self.class_of[group];
        let noise = self.spec.base_label_noise + self.hard(group).map_or(0.0, |h| h.label_noise);
        if classes > 1 && self.rng.random_bool(noise.min(1.0)) {
            let k = self.rng.random_range(0..classes - 1);
            if k >= clean {
                k + 1
            } else {
                k
            }
        } else {
            clean
        }
    }

    fn unit_vector(&mut self, group: usize) -> Vec<f64> {
        let classes = self.spec.classes;
        let c = self.class_of[group];
        let shift = self.hard(group).map_or(0.0, |h| h.shift);
        let mut v = Vec::with_capacity(self.spec.feature_dim + self.spec.noise_dim);
        for d in 0..self.spec.feature_dim {
            let mean = (1.0 - shift) * self.prototypes[c][d]
                + shift * self.prototypes[(c + 1) % classes][d]
                + self.offsets[group][d];
            v.push(mean + self.spec.feature_noise * self.normal());
        }
        for _ in 0..self.spec.noise_dim {
            v.push(self.normal());
        }
        v
    }

    fn token(&mut self, delimiter: bool, prompt: bool, base: Option<&[f64]>) -> Vec<f64> {
        let mut x = vec![1.0, f64::from(u8::from(delimiter)), f64::from(u8::from(prompt))];
        let dims = self.spec.feature_dim + self.spec.noise_dim;
        match base {
            Some(v) => {
                for &b in v {
                    x.push(b + self.spec.token_jitter * self.normal());
                }
            }
            None if prompt => {
                for _ in 0..dims {
                    x.push(self.normal());
                }
            }
            None => x.extend(std::iter::repeat_n(0.0, dims)),
        }
        x
    }

    fn example(&mut self, id: String, groups: &[usize]) -> SyntheticExample {
        let delim = self.spec.classes;
        let mut tokens = TokenSequence {
            features: Vec::new(),
            labels: Vec::new(),
            mask: Vec::new(),
        };
        let push = |tokens: &mut TokenSequence, x: Vec<f64>, y: usize, m: bool| {
            tokens.features.push(x);
            tokens.labels.push(y);
            tokens.mask.push(m);
        };
        for _ in 0..2 {
            let x = self.token(false, true, None);
            push(&mut tokens, x, delim, false);
        }
        let mut annotations = Vec::with_capacity(groups.len());
        let mut spans = Vec::with_capacity(groups.len());
        for &g in groups {
            let x = self.token(true, false, None);
            push(&mut tokens, x, delim, true);
            let label = self.unit_label(g);
            let base = self.unit_vector(g);
            let len = self.rng.random_range(MIN_UNIT_TOKENS..=MAX_UNIT_TOKENS);
            let start = tokens.len();
            let mut words = Vec::with_capacity(len);
            for _ in 0..len {
                let x = self.token(false, false, Some(&base));
                push(&mut tokens, x, label, true);
                words.push(format!("w{g}x{}", self.rng.random_range(0..20)));
            }
            let span = words.join(" ");
            annotations.push(
                AnnotationRecord::new(
                    format!("code{:02}", self.class_of[g]),
                    format!("sub{g:03}"),
                    span.clone(),
                )
                    .with_range(start, start + len),
            );
            spans.push(span);
        }
        let x = self.token(true, false, None);
        push(&mut tokens, x, delim, true);

        let mut record = ExampleRecord::new(id, annotations);
        record.sentence = spans.join(" ; ");
        record.direction = Some(Direction::Y);
        SyntheticExample { record, tokens }
    }

    fn groups_for(&mut self, primary: usize, extra: Option<&WeightedIndex<f64>>) -> Vec<usize> {
        let mut groups = vec![primary];
        let Some(dist) = extra else {
            return groups;
        };
        for _ in 0..MAX_EXTRA_ANNOTATIONS {
            if self.rng.random_bool(self.spec.cross_group_rate) {
                let mut g = dist.sample(&mut self.rng);
                if g == primary {
                    g = (g + 1) % self.spec.num_groups;
                }
                groups.push(g);
            }
        }
        groups
    }
}

/// Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut draw = |scale: f64| -> Vec<f64> {
        (0..spec.feature_dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let prototypes = (0..spec.classes).map(|_| draw(spec.separation)).collect();
    let offsets = (0..spec.num_groups)
        .map(|g| {
            let own = spec.hard_groups.iter().find(|h| h.group == g).map_or(0.0, |h| h.offset);
            draw(own.max(spec.group_offset))
        })
        .collect();
    let mut gen = Generator {
        spec,
        rng,
        prototypes,
        offsets,
        class_of: spec.group_classes(),
    };
    let extra = if spec.num_groups > 1 && spec.cross_group_rate > 0.0 {
        let w: Vec<f64> = spec.group_sizes.iter().map(|&n| n as f64 + 1.0).collect();
        Some(WeightedIndex::new(w).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let mut primaries: Vec<usize> = spec
        .group_sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| std::iter::repeat_n(g, n))
        .collect();
    primaries.shuffle(&mut gen.rng);
    let mut train = Vec::with_capacity(primaries.len());
    for (i, &g) in primaries.iter().enumerate() {
        let groups = gen.groups_for(g, extra.as_ref());
        train.push(gen.example(format!("train-{i:05}"), &groups));
    }

    let mut validation = Vec::with_capacity(spec.num_groups * spec.validation_per_group);
    for g in 0..spec.num_groups {
        for _ in 0..spec.validation_per_group {
            let id = format!("val-{:05}", validation.len());
            validation.push(gen.example(id, &[g]));
        }
    }
    Ok(SyntheticDataset {
        train,
        validation,
        features: spec.feature_count(),
        classes: spec.label_count(),
    })
}
