//! From logits to entities: span filtering, overlap resolution, BIO decoding.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{tags_to_spans, EntitySpan, LabelSet};
use crate::error::{Error, Result};
use crate::models::{Model, ModelOutput, Strategy};
use crate::nnet::softmax_rows;
use crate::spans::SpanCandidate;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub entities: Vec<EntitySpan>,
    /// Parallel to `entities`.
    pub confidences: Vec<f64>,
    /// Candidates decoded / candidates enumerated; 1.0 without a filter.
    pub retained_fraction: f64,
}

impl Prediction {
    pub fn empty() -> Self {
        Prediction {
            entities: Vec::new(),
            confidences: Vec::new(),
            retained_fraction: 1.0,
        }
    }
}

/// Keep `(i, j)` iff every token in it has entity probability `>= tau`.
pub fn filter_spans(candidates: &[SpanCandidate], probs: &[f64], tau: f64) -> Vec<SpanCandidate> {
    candidates
        .iter()
        .filter(|c| probs[c.start..=c.end].iter().all(|&p| p >= tau))
        .copied()
        .collect()
}

fn check_rows(logits: &Tensor, expected: usize) -> Result<()> {
    if logits.rows() != expected {
        return Err(Error::Shape(format!(
            "{} logit rows for {expected} items",
            logits.rows()
        )));
    }
    Ok(())
}

/// Confidence-greedy non-maximum suppression over non-O candidates.
/// Ties go to the earlier start, then the shorter span.
pub fn decode_spans(
    logits: &Tensor,
    candidates: &[SpanCandidate],
    labels: &LabelSet,
) -> Result<Prediction> {
    check_rows(logits, candidates.len())?;
    if logits.rows() > 0 && logits.cols() != labels.num_types() {
        return Err(Error::Shape(format!(
            "{} logit columns for {} classes",
            logits.cols(),
            labels.num_types()
        )));
    }
    let probs = softmax_rows(logits);
    let mut scored: Vec<(SpanCandidate, usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(r, c)| {
            let k = probs.argmax_row(r);
            (k != 0).then(|| (*c, k, probs.get(r, k)))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.start.cmp(&b.0.start))
            .then(a.0.end.cmp(&b.0.end))
    });
    let mut kept: Vec<(SpanCandidate, usize, f64)> = Vec::new();
    for item in scored {
        if kept.iter().all(|k| !k.0.overlaps(&item.0)) {
            kept.push(item);
        }
    }
    kept.sort_by_key(|k| k.0);
    Ok(Prediction {
        entities: kept
            .iter()
            .map(|(c, k, _)| EntitySpan::new(c.start, c.end, labels.type_name(*k)))
            .collect(),
        confidences: kept.iter().map(|k| k.2).collect(),
        retained_fraction: 1.0,
    })
}

/// Per-token argmax, lenient BIO repair; confidence is the mean argmax
/// probability over the entity's tokens.
pub fn decode_bio(logits: &Tensor, labels: &LabelSet) -> Result<Prediction> {
    if logits.rows() > 0 && logits.cols() != labels.num_bio() {
        return Err(Error::Shape(format!(
            "{} logit columns for {} BIO labels",
            logits.cols(),
            labels.num_bio()
        )));
    }
    let probs = softmax_rows(logits);
    let best: Vec<usize> = (0..probs.rows()).map(|r| probs.argmax_row(r)).collect();
    let tags: Vec<&str> = best.iter().map(|&k| labels.bio_name(k)).collect();
    let entities = tags_to_spans(&tags);
    let confidences = entities
        .iter()
        .map(|e| {
            let sum: f64 = (e.start..=e.end).map(|t| probs.get(t, best[t])).sum();
            sum / e.len() as f64
        })
        .collect();
    Ok(Prediction {
        entities,
        confidences,
        retained_fraction: 1.0,
    })
}

/// Full inference path for one sentence of token ids. `threshold` only
/// affects the span-filter strategy.
pub fn predict(model: &Model, ids: &[usize], threshold: Option<f64>) -> Result<Prediction> {
    let threshold = match model.strategy() {
        Strategy::SfSpandec => threshold,
        _ => None,
    };
    match model.forward(ids, threshold)? {
        ModelOutput::Token { logits } => decode_bio(&logits, model.labels()),
        ModelOutput::Span(out) => {
            let mut p = decode_spans(&out.logits, &out.candidates, model.labels())?;
            if out.enumerated > 0 {
                p.retained_fraction = out.candidates.len() as f64 / out.enumerated as f64;
            }
            Ok(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: String,
    pub confidence: f64,
}

/// One JSON-lines output object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub words: Vec<String>,
    pub entities: Vec<EntityRecord>,
    pub retained_fraction: f64,
}

impl PredictionRecord {
    pub fn new(words: Vec<String>, prediction: &Prediction) -> Self {
        PredictionRecord {
            words,
            entities: prediction
                .entities
                .iter()
                .zip(&prediction.confidences)
                .map(|(e, &confidence)| EntityRecord {
                    start: e.start,
                    end: e.end,
                    entity_type: e.entity_type.clone(),
                    confidence,
                })
                .collect(),
            retained_fraction: prediction.retained_fraction,
        }
    }
}
