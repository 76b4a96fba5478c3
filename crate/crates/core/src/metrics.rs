//! Evaluation of structured predictions at three levels: micro-averaged
//! multi-label P/R/F1 over Codes and Sub-codes, and relaxed span matching.
//!
//! A predicted span matches a gold span when either token set contains the
//! other or their token Jaccard similarity is at least 0.6. Tokens are
//! produced by [`SpanTokenizer`]: lowercase, strip ASCII punctuation, split
//! on whitespace.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::grouping::ExampleRecord;

pub const JACCARD_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanTokenizer {
    pub lowercase: bool,
    pub strip_punctuation: bool,
}

impl Default for SpanTokenizer {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
        }
    }
}

impl SpanTokenizer {
    pub fn tokens(&self, text: &str) -> BTreeSet<String> {
        let mut cleaned: String = if self.strip_punctuation {
            text.chars().filter(|c| !c.is_ascii_punctuation()).collect()
        } else {
            text.to_owned()
        };
        if self.lowercase {
            cleaned = cleaned.to_lowercase();
        }
        cleaned.split_whitespace().map(str::to_owned).collect()
    }
}

/// Relaxed span matcher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanMatcher {
    pub tokenizer: SpanTokenizer,
    pub jaccard_threshold: f64,
}

impl Default for SpanMatcher {
    fn default() -> Self {
        Self {
            tokenizer: SpanTokenizer::default(),
            jaccard_threshold: JACCARD_THRESHOLD,
        }
    }
}

impl SpanMatcher {
    pub fn matches(&self, pred: &str, gold: &str) -> bool {
        let p = self.tokenizer.tokens(pred);
        let g = self.tokenizer.tokens(gold);
        if p.is_empty() || g.is_empty() {
            return false;
        }
        if g.is_subset(&p) || p.is_subset(&g) {
            return true;
        }
        jaccard(&p, &g) >= self.jaccard_threshold
    }
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Relaxed match with the default tokenizer and threshold.
pub fn span_match(pred: &str, gold: &str) -> bool {
    SpanMatcher::default().matches(pred, gold)
}

/// Precision, recall and F1 as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when there were no predictions; precision is then reported as 0.
    pub precision_undefined: bool,
    /// Set when there were no gold labels; recall is then reported as 0.
    pub recall_undefined: bool,
}

impl Prf {
    fn from_counts(hits: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted > 0 { hits as f64 / predicted as f64 } else { 0.0 };
        let recall = if gold > 0 { hits as f64 / gold as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            precision_undefined: predicted == 0,
            recall_undefined: gold == 0,
        }
    }
}

/// Micro-averaged multi-label P/R/F1.
pub fn multilabel_f1(pred: &[BTreeSet<String>], gold: &[BTreeSet<String>]) -> Result<Prf> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted instances vs {} gold instances",
            pred.len(),
            gold.len()
        )));
    }
    let (mut hits, mut predicted, mut total_gold) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        hits += p.intersection(g).count();
        predicted += p.len();
        total_gold += g.len();
    }
    Ok(Prf::from_counts(hits, predicted, total_gold))
}

/// How predicted spans are credited against gold spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpanMatching {
    /// Each prediction is a TP if it matches any gold span; a gold span may
    /// be matched by several predictions.
    #[default]
    Literal,
    /// Greedy one-to-one assignment in prediction order. Not part of the
    /// reference protocol; offered for comparison.
    OneToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpanReport {
    pub prf: Prf,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn span_f1(
    pred: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
    matcher: &SpanMatcher,
    matching: SpanMatching,
) -> Result<SpanReport> {
    if pred.len() != gold.len() {
        return Err(Error::invalid(format!(
            "{} predicted instances vs {} gold instances",
            pred.len(),
            gold.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gold) {
        let gold_spans: Vec<&String> = g.iter().collect();
        let mut gold_hit = vec![false; gold_spans.len()];
        for span in p {
            let found = match matching {
                SpanMatching::Literal => {
                    let mut any = false;
                    for (j, gs) in gold_spans.iter().enumerate() {
                        if matcher.matches(span, gs) {
                            gold_hit[j] = true;
                            any = true;
                        }
                    }
                    any
                }
                SpanMatching::OneToOne => {
                    match (0..gold_spans.len())
                        .find(|&j| !gold_hit[j] && matcher.matches(span, gold_spans[j]))
                    {
                        Some(j) => {
                            gold_hit[j] = true;
                            true
                        }
                        None => false,
                    }
                }
            };
            if found {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        fn_ += gold_hit.iter().filter(|&&h| !h).count();
    }
    Ok(SpanReport {
        prf: Prf::from_counts(tp, tp + fp, tp + fn_),
        tp,
        fp,
        fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricsReport {
    pub code: Prf,
    pub subcode: Prf,
    pub span: SpanReport,
}

#[derive(Serialize)]
struct PercentTriple {
    precision: Box<RawValue>,
    recall: Box<RawValue>,
    f1: Box<RawValue>,
}

#[derive(Serialize)]
struct PercentReport {
    code: PercentTriple,
    subcode: PercentTriple,
    span: PercentTriple,
}

fn percent(x: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{:.2}", 100.0 * x)).expect("formatted float is valid JSON")
}

impl From<&Prf> for PercentTriple {
    fn from(p: &Prf) -> Self {
        Self {
            precision: percent(p.precision),
            recall: percent(p.recall),
            f1: percent(p.f1),
        }
    }
}

impl MetricsReport {
    /// JSON with percentages rounded to two decimals, e.g. `"f1": 81.47`.
    pub fn to_json(&self) -> String {
        let report = PercentReport {
            code: (&self.code).into(),
            subcode: (&self.subcode).into(),
            span: (&self.span.prf).into(),
        };
        serde_json::to_string_pretty(&report).expect("report serializes")
    }
}

/// Label sets of one record at each level.
fn levels(record: &ExampleRecord) -> [BTreeSet<String>; 3] {
    let mut out: [BTreeSet<String>; 3] = Default::default();
    for a in &record.annotations {
        out[0].insert(a.code.clone());
        out[1].insert(a.subcode.clone());
        out[2].insert(a.span.clone());
    }
    out
}

/// Scores predictions against gold records aligned by `id`.
pub fn evaluate(
    pred: &[ExampleRecord],
    gold: &[ExampleRecord],
    matcher: &SpanMatcher,
    matching: SpanMatching,
) -> Result<MetricsReport> {
    let pred_by_id: BTreeMap<&str, &ExampleRecord> =
        pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|r| r.id.as_str()).collect();
    let missing: Vec<&str> = gold_ids
        .iter()
        .filter(|id| !pred_by_id.contains_key(*id))
        .copied()
        .collect();
    let unexpected: Vec<&str> = pred_by_id
        .keys()
        .filter(|id| !gold_ids.contains(*id))
        .copied()
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(Error::Schema(format!(
            "instance ids differ; missing from predictions: [{}]; not in gold: [{}]",
            missing.join(", "),
            unexpected.join(", ")
        )));
    }

    let mut p_levels: [Vec<BTreeSet<String>>; 3] = Default::default();
    let mut g_levels: [Vec<BTreeSet<String>>; 3] = Default::default();
    for g in gold {
        let p = pred_by_id[g.id.as_str()];
        for (k, set) in levels(p).into_iter().enumerate() {
            p_levels[k].push(set);
        }
        for (k, set) in levels(g).into_iter().enumerate() {
            g_levels[k].push(set);
        }
    }
    Ok(MetricsReport {
        code: multilabel_f1(&p_levels[0], &g_levels[0])?,
        subcode: multilabel_f1(&p_levels[1], &g_levels[1])?,
        span: span_f1(&p_levels[2], &g_levels[2], matcher, matching)?,
    })
}
