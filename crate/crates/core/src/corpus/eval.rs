use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{spans_from_bio, EntitySpan, TagSeq, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl TypeScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        TypeScores { precision, recall, f1, tp, fp, fn_ }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Micro-averaged entity-level scores with a per-type breakdown.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_type: BTreeMap<String, TypeScores>,
}

/// Exact-match entity scoring: a predicted span counts only if both its
/// boundaries and its type match a gold span.
pub fn entity_f1(gold: &[TaggedSentence], pred: &[TagSeq]) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(Error::Length {
            sentence: gold.get(pred.len().min(gold.len())).map_or_else(String::new, |s| s.id.clone()),
            msg: format!("{} gold sentences but {} predictions", gold.len(), pred.len()),
        });
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(Error::Length {
                sentence: g.id.clone(),
                msg: format!("{} gold tags but {} predicted", g.len(), p.len()),
            });
        }
        let gold_spans: HashSet<EntitySpan> = g.spans().into_iter().collect();
        let pred_spans: HashSet<EntitySpan> = spans_from_bio(p).into_iter().collect();
        for s in &pred_spans {
            let c = counts.entry(s.etype.clone()).or_default();
            if gold_spans.contains(s) {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
        for s in gold_spans.difference(&pred_spans) {
            counts.entry(s.etype.clone()).or_default().2 += 1;
        }
    }
    let (tp, fp, fn_) = counts.values().fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let total = TypeScores::from_counts(tp, fp, fn_);
    Ok(EvalReport {
        precision: total.precision,
        recall: total.recall,
        f1: total.f1,
        tp,
        fp,
        fn_,
        per_type: counts.into_iter().map(|(t, (a, b, c))| (t, TypeScores::from_counts(a, b, c))).collect(),
    })
}
