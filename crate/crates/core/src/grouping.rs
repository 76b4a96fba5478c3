//! Group inventories built from structured (Code, Sub-code, Span) labels,
//! example and annotation memberships, and the maps that route per-group
//! multipliers back to examples and tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reweighter::MultiplierSet;

/// One grounded (Code, Sub-code, Span) triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "Code")]
    pub code: String,
    #[serde(rename = "Sub-code")]
    pub subcode: String,
    #[serde(rename = "Span")]
    pub span: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_loss: Option<f64>,
    /// Half-open token interval `[start, end)` of this annotation in the completion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_range: Option<(usize, usize)>,
}

impl AnnotationRecord {
    pub fn new(code: impl Into<String>, subcode: impl Into<String>, span: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            subcode: subcode.into(),
            span: span.into(),
            unit_loss: None,
            token_range: None,
        }
    }

    pub fn with_range(mut self, start: usize, end: usize) -> Self {
        self.token_range = Some((start, end));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Y,
    N,
}

/// A sentence with its context, direction flag and gold annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub id: String,
    #[serde(default)]
    pub sentence: String,
    #[serde(default)]
    pub context_prev: Option<String>,
    #[serde(default)]
    pub context_next: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default)]
    pub annotations: Vec<AnnotationRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example_loss: Option<f64>,
}

impl ExampleRecord {
    pub fn new(id: impl Into<String>, annotations: Vec<AnnotationRecord>) -> Self {
        Self {
            id: id.into(),
            sentence: String::new(),
            context_prev: None,
            context_next: None,
            direction: None,
            annotations,
            example_loss: None,
        }
    }
}

/// Code → permitted Sub-codes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ValidityMap(pub BTreeMap<String, BTreeSet<String>>);

impl ValidityMap {
    pub fn allows(&self, code: &str, subcode: &str) -> bool {
        self.0.get(code).is_some_and(|subs| subs.contains(subcode))
    }

    pub fn insert(&mut self, code: impl Into<String>, subcode: impl Into<String>) {
        self.0.entry(code.into()).or_default().insert(subcode.into());
    }

    /// Every (Code, Sub-code) pair realized in `dataset`.
    pub fn from_dataset(dataset: &[ExampleRecord]) -> Self {
        let mut map = Self::default();
        for a in dataset.iter().flat_map(|e| &e.annotations) {
            map.insert(&a.code, &a.subcode);
        }
        map
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingScheme {
    Code,
    Subcode,
    CodeXSubcode,
    NumAnnotations,
    CodeXSubcodeXNa,
}

impl GroupingScheme {
    pub const ALL: [GroupingScheme; 5] = [
        GroupingScheme::Code,
        GroupingScheme::Subcode,
        GroupingScheme::CodeXSubcode,
        GroupingScheme::NumAnnotations,
        GroupingScheme::CodeXSubcodeXNa,
    ];

    /// Group key of one annotation of `example` under this scheme.
    pub fn key(self, example: &ExampleRecord, annotation: &AnnotationRecord) -> String {
        let na = example.annotations.len();
        match self {
            GroupingScheme::Code => annotation.code.clone(),
            GroupingScheme::Subcode => annotation.subcode.clone(),
            GroupingScheme::CodeXSubcode => format!("{}|{}", annotation.code, annotation.subcode),
            GroupingScheme::NumAnnotations => format!("NA_{na}"),
            GroupingScheme::CodeXSubcodeXNa => {
                format!("{}|{}|NA_{na}", annotation.code, annotation.subcode)
            }
        }
    }
}

impl fmt::Display for GroupingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GroupingScheme::Code => "code",
            GroupingScheme::Subcode => "subcode",
            GroupingScheme::CodeXSubcode => "code_x_subcode",
            GroupingScheme::NumAnnotations => "num_annotations",
            GroupingScheme::CodeXSubcodeXNa => "code_x_subcode_x_na",
        };
        f.write_str(name)
    }
}

/// Dense, lexicographically ordered group ids for one scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupInventory {
    scheme: GroupingScheme,
    groups: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl GroupInventory {
    pub fn scheme(&self) -> GroupingScheme {
        self.scheme
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn id(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: usize) -> &str {
        &self.groups[id]
    }

    fn lookup(&self, key: String) -> Result<usize> {
        self.id(&key).ok_or(Error::Lookup(key))
    }
}

/// Collects the group keys realized in `dataset`. With `validity` set, every
/// annotation must carry a Sub-code permitted for its Code.
pub fn build_inventory(
    dataset: &[ExampleRecord],
    scheme: GroupingScheme,
    validity: Option<&ValidityMap>,
) -> Result<GroupInventory> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot build a group inventory from an empty dataset"));
    }
    let mut keys = BTreeSet::new();
    for example in dataset {
        for a in &example.annotations {
            if let Some(map) = validity {
                if !map.allows(&a.code, &a.subcode) {
                    return Err(Error::Schema(format!(
                        "record `{}`: Sub-code `{}` is not valid for Code `{}`",
                        example.id, a.subcode, a.code
                    )));
                }
            }
            keys.insert(scheme.key(example, a));
        }
    }
    if keys.is_empty() {
        return Err(Error::invalid("dataset carries no annotations"));
    }
    let groups: Vec<String> = keys.into_iter().collect();
    let index = groups
        .iter()
        .enumerate()
        .map(|(i, k)| (k.clone(), i))
        .collect();
    Ok(GroupInventory {
        scheme,
        groups,
        index,
    })
}

/// Distinct group set `S_i` of an example and its size `ν_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Membership {
    pub groups: Vec<usize>,
}

impl Membership {
    pub fn nu(&self) -> usize {
        self.groups.len()
    }
}

pub fn memberships(example: &ExampleRecord, inventory: &GroupInventory) -> Result<Membership> {
    let mut groups = annotation_groups(example, inventory)?;
    groups.sort_unstable();
    groups.dedup();
    if groups.is_empty() {
        return Err(Error::invalid(format!(
            "record `{}` has no annotations",
            example.id
        )));
    }
    Ok(Membership { groups })
}

/// The single group of each annotation, in annotation order.
pub fn annotation_groups(example: &ExampleRecord, inventory: &GroupInventory) -> Result<Vec<usize>> {
    example
        .annotations
        .iter()
        .map(|a| inventory.lookup(inventory.scheme.key(example, a)))
        .collect()
}

fn checked_range(example: &ExampleRecord, a: usize, len: usize) -> Result<(usize, usize)> {
    let (start, end) = example.annotations[a].token_range.ok_or_else(|| {
        Error::invalid(format!(
            "record `{}` annotation {a} has no token range",
            example.id
        ))
    })?;
    if start >= end {
        return Err(Error::invalid(format!(
            "record `{}` annotation {a} has empty token range [{start}, {end})",
            example.id
        )));
    }
    if end > len {
        return Err(Error::invalid(format!(
            "record `{}` annotation {a} range ends at {end} beyond {len} tokens",
            example.id
        )));
    }
    Ok((start, end))
}

/// Length-normalized masked loss of each annotation's token range.
pub fn annotation_signal(
    example: &ExampleRecord,
    token_losses: &[f64],
    mask: &[bool],
) -> Result<Vec<f64>> {
    if token_losses.len() != mask.len() {
        return Err(Error::invalid("token losses and mask differ in length"));
    }
    (0..example.annotations.len())
        .map(|a| {
            let (start, end) = checked_range(example, a, token_losses.len())?;
            let total: f64 = (start..end)
                .filter(|&t| mask[t])
                .map(|t| token_losses[t])
                .sum();
            Ok(total / (end - start) as f64)
        })
        .collect()
}

/// Per-token robust weights: each annotated token takes the multiplier of
/// its annotation's group, every other token keeps weight 1.
///
/// Returns `Ok(None)` when no annotation carries a token range, in which
/// case only sample-level weighting is possible.
pub fn token_weights(
    example: &ExampleRecord,
    inventory: &GroupInventory,
    per_group: &[f64],
    num_tokens: usize,
) -> Result<Option<Vec<f64>>> {
    if example.annotations.iter().all(|a| a.token_range.is_none()) {
        return Ok(None);
    }
    let groups = annotation_groups(example, inventory)?;
    let mut weights = vec![1.0; num_tokens];
    let mut owner: Vec<Option<usize>> = vec![None; num_tokens];
    for (a, &g) in groups.iter().enumerate() {
        let (start, end) = checked_range(example, a, num_tokens)?;
        let m = *per_group
            .get(g)
            .ok_or_else(|| Error::invalid(format!("no multiplier for group {g}")))?;
        for t in start..end {
            if let Some(other) = owner[t] {
                return Err(Error::Schema(format!(
                    "record `{}`: annotations {other} and {a} overlap at token {t}",
                    example.id
                )));
            }
            owner[t] = Some(a);
            weights[t] = m;
        }
    }
    Ok(Some(weights))
}

/// Granularity of the update signal and of the robust weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    #[default]
    Sample,
    Annotation,
}

/// Losses of one example as seen by the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExample {
    /// Per-example loss `ℓ̄_i`.
    pub example_loss: f64,
    /// Unmasked per-token losses.
    pub token_losses: Vec<f64>,
    /// Completion mask `r_{i,t}`.
    pub mask: Vec<bool>,
}

impl ScoredExample {
    /// Mean token loss over completion tokens.
    pub fn masked_mean(&self) -> f64 {
        let (sum, n) = self
            .token_losses
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .fold((0.0, 0usize), |(s, n), (l, _)| (s + l, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// `Σ m_i·ℓ̄_i / Σ m_i`.
pub fn sample_objective(losses: &[f64], multipliers: &[f64]) -> Result<f64> {
    if losses.len() != multipliers.len() {
        return Err(Error::invalid("losses and multipliers differ in length"));
    }
    let denom: f64 = multipliers.iter().sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateBatch("multiplier total is zero".into()));
    }
    Ok(losses.iter().zip(multipliers).map(|(l, m)| l * m).sum::<f64>() / denom)
}

/// `Σ d_{i,t}·ℓ̃_{i,t} / Σ d_{i,t}·r_{i,t}` with `ℓ̃ = r·ℓ`.
pub fn annotation_objective(batch: &[ScoredExample], weights: &[Vec<f64>]) -> Result<f64> {
    if batch.len() != weights.len() {
        return Err(Error::invalid("batch and token weights differ in length"));
    }
    let mut numer = 0.0;
    let mut denom = 0.0;
    for (ex, d) in batch.iter().zip(weights) {
        if d.len() != ex.token_losses.len() || ex.mask.len() != ex.token_losses.len() {
            return Err(Error::invalid("token weights, losses and mask must align"));
        }
        for ((l, &r), w) in ex.token_losses.iter().zip(&ex.mask).zip(d) {
            if r {
                numer += w * l;
                denom += w;
            }
        }
    }
    if !(denom > 0.0) {
        return Err(Error::DegenerateBatch(
            "no weighted completion tokens in batch".into(),
        ));
    }
    Ok(numer / denom)
}

/// Robust objective for a scored batch under either signal mode.
pub fn weighted_objective(
    batch: &[ScoredExample],
    multipliers: &MultiplierSet,
    mode: SignalMode,
) -> Result<f64> {
    match mode {
        SignalMode::Sample => {
            let losses: Vec<f64> = batch.iter().map(|e| e.example_loss).collect();
            sample_objective(&losses, &multipliers.per_example)
        }
        SignalMode::Annotation => {
            let weights = multipliers.per_token.as_ref().ok_or_else(|| {
                Error::invalid("annotation mode requires token-level multipliers")
            })?;
            annotation_objective(batch, weights)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn worked_sample() -> ExampleRecord {
        ExampleRecord::new(
            "worked",
            vec![
                AnnotationRecord::new("InfoGive", "Generalinformation", "I submitted application"),
                AnnotationRecord::new(
                    "InfoGiveSDOH",
                    "HealthCareAccessAndQuality",
                    "look for email from Org3 in spam mail as well",
                ),
                AnnotationRecord::new(
                    "PartnershipProvider",
                    "maintainCommunication",
                    "let us know if you do not receive anything by MM/DD/YYYY",
                ),
            ],
        )
    }

    #[test]
    fn worked_sample_inventories() {
        let data = vec![worked_sample()];
        let inv = build_inventory(&data, GroupingScheme::Code, None).unwrap();
        assert_eq!(
            inv.groups(),
            &["InfoGive", "InfoGiveSDOH", "PartnershipProvider"]
        );
        assert_eq!(memberships(&data[0], &inv).unwrap().nu(), 3);

        let inv = build_inventory(&data, GroupingScheme::NumAnnotations, None).unwrap();
        assert_eq!(inv.groups(), &["NA_3"]);
        assert_eq!(memberships(&data[0], &inv).unwrap().nu(), 1);

        let inv = build_inventory(&data, GroupingScheme::CodeXSubcodeXNa, None).unwrap();
        assert_eq!(inv.len(), 3);
        assert!(inv.id("InfoGive|Generalinformation|NA_3").is_some());
    }

    #[test]
    fn single_annotation_pair_inventory() {
        let data = vec![ExampleRecord::new("a", vec![AnnotationRecord::new("C", "S", "x")])];
        let inv = build_inventory(&data, GroupingScheme::CodeXSubcode, None).unwrap();
        assert_eq!(inv.len(), 1);
        assert_eq!(inv.key(0), "C|S");
    }

    #[test]
    fn shared_code_deduplicates() {
        let ex = ExampleRecord::new(
            "dup",
            vec![
                AnnotationRecord::new("InfoGive", "A", "x"),
                AnnotationRecord::new("InfoGive", "B", "y"),
            ],
        );
        let inv = build_inventory(std::slice::from_ref(&ex), GroupingScheme::Code, None).unwrap();
        assert_eq!(memberships(&ex, &inv).unwrap().nu(), 1);
        assert_eq!(annotation_groups(&ex, &inv).unwrap(), vec![0, 0]);
    }

    #[test]
    fn validity_map_violation_names_record() {
        let mut map = ValidityMap::default();
        map.insert("InfoGive", "Generalinformation");
        let data = vec![ExampleRecord::new(
            "bad-7",
            vec![AnnotationRecord::new("InfoGive", "maintainCommunication", "x")],
        )];
        match build_inventory(&data, GroupingScheme::Code, Some(&map)) {
            Err(Error::Schema(msg)) => assert!(msg.contains("bad-7")),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(build_inventory(&[], GroupingScheme::Code, None).is_err());
    }

    #[test]
    fn unknown_key_is_lookup_error() {
        let data = vec![worked_sample()];
        let inv = build_inventory(&data, GroupingScheme::Code, None).unwrap();
        let other = ExampleRecord::new("o", vec![AnnotationRecord::new("Nope", "S", "x")]);
        assert!(matches!(memberships(&other, &inv), Err(Error::Lookup(_))));
    }

    #[test]
    fn annotation_signal_examples() {
        let ex = ExampleRecord::new("e", vec![AnnotationRecord::new("C", "S", "x").with_range(2, 6)]);
        let losses = [9.0, 9.0, 1.0, 2.0, 3.0, 2.0, 9.0];
        let mask = [false, false, true, true, true, true, true];
        assert_eq!(annotation_signal(&ex, &losses, &mask).unwrap(), vec![2.0]);

        let ex = ExampleRecord::new("e", vec![AnnotationRecord::new("C", "S", "x").with_range(0, 1)]);
        assert_eq!(annotation_signal(&ex, &[0.5], &[true]).unwrap(), vec![0.5]);
        assert_eq!(annotation_signal(&ex, &[0.0], &[true]).unwrap(), vec![0.0]);

        let ex = ExampleRecord::new("e", vec![AnnotationRecord::new("C", "S", "x").with_range(1, 1)]);
        assert!(matches!(
            annotation_signal(&ex, &[0.5, 0.5], &[true, true]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn token_weights_examples() {
        let ex = ExampleRecord::new("e", vec![AnnotationRecord::new("Hard", "S", "x").with_range(3, 8)]);
        let inv = build_inventory(std::slice::from_ref(&ex), GroupingScheme::Code, None).unwrap();
        let d = token_weights(&ex, &inv, &[2.5], 10).unwrap().unwrap();
        assert_eq!(d, vec![1.0, 1.0, 1.0, 2.5, 2.5, 2.5, 2.5, 2.5, 1.0, 1.0]);

        let plain = ExampleRecord::new("p", vec![AnnotationRecord::new("Hard", "S", "x")]);
        assert_eq!(token_weights(&plain, &inv, &[2.5], 10).unwrap(), None);

        let overlapping = ExampleRecord::new(
            "o",
            vec![
                AnnotationRecord::new("Hard", "S", "x").with_range(0, 4),
                AnnotationRecord::new("Hard", "S", "y").with_range(3, 6),
            ],
        );
        assert!(matches!(
            token_weights(&overlapping, &inv, &[2.5], 10),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn sample_objective_examples() {
        assert_abs_diff_eq!(
            sample_objective(&[1.0, 3.0], &[1.0, 3.0]).unwrap(),
            2.5,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            sample_objective(&[1.0, 3.0, 5.0], &[1.0; 3]).unwrap(),
            3.0,
            epsilon = 1e-15
        );
        assert!(matches!(
            sample_objective(&[1.0], &[0.0]),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn annotation_objective_uniform_weights_is_masked_mean() {
        let ex = ScoredExample {
            example_loss: 0.0,
            token_losses: vec![5.0, 1.0, 2.0, 3.0],
            mask: vec![false, true, true, true],
        };
        let obj = annotation_objective(std::slice::from_ref(&ex), &[vec![1.0; 4]]).unwrap();
        assert_abs_diff_eq!(obj, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ex.masked_mean(), 2.0, epsilon = 1e-15);
        let none = ScoredExample {
            mask: vec![false; 4],
            ..ex
        };
        assert!(annotation_objective(&[none], &[vec![1.0; 4]]).is_err());
    }

    #[test]
    fn jsonl_field_names() {
        let mut ex = worked_sample();
        ex.direction = Some(Direction::Y);
        ex.context_prev = Some("before".into());
        let text = serde_json::to_string(&ex).unwrap();
        for key in ["\"Code\"", "\"Sub-code\"", "\"Span\"", "\"direction\":\"Y\"", "\"context_prev\""] {
            assert!(text.contains(key), "{key} missing from {text}");
        }
        let back: ExampleRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ex);
    }
}
