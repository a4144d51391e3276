//! Strict entity-level micro F1 and the inference throughput benchmark.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, EntitySpan};
use crate::error::{Error, Result};
use crate::infer::{decode_spans, predict, Prediction};
use crate::models::{ModelOutput, Strategy, Tagger};
use crate::spans::SpanCandidate;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_positives)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.true_positives + self.false_negatives)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    /// Gold entity count.
    pub fn support(&self) -> usize {
        self.true_positives + self.false_negatives
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub counts: Counts,
}

impl From<Counts> for TypeScore {
    fn from(c: Counts) -> Self {
        TypeScore {
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            support: c.support(),
            counts: c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub counts: Counts,
    pub per_type: BTreeMap<String, TypeScore>,
}

/// A prediction is correct iff `(start, end, type)` equals a gold entity.
pub fn micro_f1(gold: &[Vec<EntitySpan>], predicted: &[Vec<EntitySpan>]) -> Result<Prf> {
    if gold.len() != predicted.len() {
        return Err(Error::Misaligned {
            gold: gold.len(),
            predicted: predicted.len(),
        });
    }
    let mut total = Counts::default();
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        let gs: HashSet<&EntitySpan> = g.iter().collect();
        let ps: HashSet<&EntitySpan> = p.iter().collect();
        for e in &ps {
            let c = per_type.entry(e.entity_type.clone()).or_default();
            if gs.contains(e) {
                c.true_positives += 1;
                total.true_positives += 1;
            } else {
                c.false_positives += 1;
                total.false_positives += 1;
            }
        }
        for e in gs.difference(&ps) {
            per_type.entry(e.entity_type.clone()).or_default().false_negatives += 1;
            total.false_negatives += 1;
        }
    }
    Ok(Prf {
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        support: total.support(),
        counts: total,
        per_type: per_type.into_iter().map(|(k, c)| (k, c.into())).collect(),
    })
}

/// Predicted entity lists, one per prediction.
pub fn entities_of(predictions: &[Prediction]) -> Vec<Vec<EntitySpan>> {
    predictions.iter().map(|p| p.entities.clone()).collect()
}

/// Share of gold entities whose exact span is still among the candidates
/// left after filtering.
pub fn span_survival(gold: &[Vec<EntitySpan>], retained: &[Vec<SpanCandidate>]) -> Result<f64> {
    if gold.len() != retained.len() {
        return Err(Error::Misaligned {
            gold: gold.len(),
            predicted: retained.len(),
        });
    }
    let mut total = 0;
    let mut kept = 0;
    for (g, r) in gold.iter().zip(retained) {
        let set: HashSet<(usize, usize)> = r.iter().map(|c| (c.start, c.end)).collect();
        total += g.len();
        kept += g.iter().filter(|e| set.contains(&(e.start, e.end))).count();
    }
    Ok(if total == 0 { 1.0 } else { kept as f64 / total as f64 })
}

/// One operating point of the span filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Decoded candidates over enumerated candidates, pooled over the corpus.
    pub retained_fraction: f64,
    /// Share of gold spans still among the decoded candidates.
    pub survival: f64,
    pub f1: f64,
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn threshold_grid(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 || !from.is_finite() || !to.is_finite() || from > to {
        return Err(Error::Config(format!(
            "bad threshold grid: from {from} to {to} in {steps} steps"
        )));
    }
    if steps == 1 {
        return Ok(vec![from]);
    }
    let step = (to - from) / (steps - 1) as f64;
    Ok((0..steps).map(|k| if k + 1 == steps { to } else { from + step * k as f64 }).collect())
}

/// Retention, gold-span survival and F1 of a span-filter model at each
/// threshold.
pub fn sweep_threshold(tagger: &Tagger, corpus: &Corpus, thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if tagger.model.strategy() != Strategy::SfSpandec {
        return Err(Error::Config(format!(
            "threshold sweeps need a sf_spandec model, got {}",
            tagger.model.strategy()
        )));
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let encoded: Vec<Vec<usize>> = corpus.iter().map(|s| tagger.encode(&s.words)).collect();
    let gold = corpus.gold_spans();
    let labels = tagger.model.labels();
    thresholds
        .iter()
        .map(|&tau| {
            let (mut kept, mut enumerated) = (0usize, 0usize);
            let mut retained = Vec::with_capacity(corpus.len());
            let mut predicted = Vec::with_capacity(corpus.len());
            for ids in &encoded {
                let ModelOutput::Span(out) = tagger.model.forward(ids, Some(tau))? else {
                    unreachable!("span-filter models produce span output");
                };
                kept += out.candidates.len();
                enumerated += out.enumerated;
                predicted.push(decode_spans(&out.logits, &out.candidates, labels)?.entities);
                retained.push(out.candidates);
            }
            Ok(SweepRow {
                threshold: tau,
                retained_fraction: if enumerated == 0 { 1.0 } else { kept as f64 / enumerated as f64 },
                survival: span_survival(&gold, &retained)?,
                f1: micro_f1(&gold, &predicted)?.f1,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub batch_size: usize,
    pub warmup_batches: usize,
    pub repeats: usize,
    /// Span-filter threshold; ignored by the other strategies.
    pub threshold: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            batch_size: 8,
            warmup_batches: 2,
            repeats: 3,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub strategy: Strategy,
    /// Mean over runs.
    pub samples_per_second: f64,
    pub runs: Vec<f64>,
    pub batch_size: usize,
    pub warmup_batches: usize,
    pub measured_batches: usize,
    pub sentences: usize,
    pub mean_retained_fraction: f64,
    pub threads: usize,
    pub hardware: String,
}

/// CPU model string and logical core count.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string());
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!("{cpu} ({cores} logical cores, 1 worker thread)")
}

/// Time the serving path (id lookup, enumeration, filtering, forward,
/// decoding) over `sentences` in fixed order. Each run processes every batch
/// once after `warmup_batches` untimed batches.
pub fn benchmark_throughput(
    tagger: &Tagger,
    sentences: &[Vec<String>],
    config: &BenchConfig,
) -> Result<ThroughputReport> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if config.batch_size == 0 || config.repeats == 0 {
        return Err(Error::Config("batch size and repeats must be positive".into()));
    }
    let batches: Vec<&[Vec<String>]> = sentences.chunks(config.batch_size).collect();
    let run_batch = |batch: &[Vec<String>]| -> Result<f64> {
        let mut retained = 0.0;
        for words in batch {
            let ids = tagger.encode(words);
            retained += predict(&tagger.model, &ids, config.threshold)?.retained_fraction;
        }
        Ok(retained)
    };
    for batch in batches.iter().cycle().take(config.warmup_batches) {
        run_batch(batch)?;
    }
    let mut runs = Vec::with_capacity(config.repeats);
    let mut retained = 0.0;
    for _ in 0..config.repeats {
        let start = Instant::now();
        retained = 0.0;
        for batch in &batches {
            retained += run_batch(batch)?;
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        runs.push(sentences.len() as f64 / secs);
    }
    Ok(ThroughputReport {
        strategy: tagger.model.strategy(),
        samples_per_second: runs.iter().sum::<f64>() / runs.len() as f64,
        runs,
        batch_size: config.batch_size,
        warmup_batches: config.warmup_batches,
        measured_batches: batches.len(),
        sentences: sentences.len(),
        mean_retained_fraction: retained / sentences.len() as f64,
        threads: 1,
        hardware: hardware_descriptor(),
    })
}

/// Left-aligned first column, right-aligned rest, two-space gutters.
pub fn text_table<S: AsRef<str>>(header: &[S], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.as_ref().chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, cell) in cells.iter().enumerate().take(cols) {
            if i > 0 {
                out.push_str("  ");
            }
            if i == 0 {
                out.push_str(&format!("{cell:<w$}", w = widths[i]));
            } else {
                out.push_str(&format!("{cell:>w$}", w = widths[i]));
            }
        }
        out.trim_end().to_string()
    };
    let mut out = line(header.iter().map(AsRef::as_ref).collect());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// F1 report as a text table, one row per type plus the micro average.
pub fn prf_table(prf: &Prf) -> String {
    let row = |name: &str, p: f64, r: f64, f: f64, n: usize| {
        vec![
            name.to_string(),
            format!("{p:.4}"),
            format!("{r:.4}"),
            format!("{f:.4}"),
            n.to_string(),
        ]
    };
    let mut rows: Vec<Vec<String>> = prf
        .per_type
        .iter()
        .map(|(t, s)| row(t, s.precision, s.recall, s.f1, s.support))
        .collect();
    rows.push(row("micro", prf.precision, prf.recall, prf.f1, prf.support));
    text_table(&["type", "precision", "recall", "f1", "support"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn e(s: usize, t: usize, ty: &str) -> EntitySpan {
        EntitySpan::new(s, t, ty)
    }

    #[test]
    fn identical_is_perfect() {
        let gold = vec![vec![e(0, 1, "PER")], vec![], vec![e(2, 2, "LOC")]];
        let prf = micro_f1(&gold, &gold).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn one_extra_prediction() {
        let gold = vec![vec![e(0, 1, "PER")]];
        let pred = vec![vec![e(0, 1, "PER"), e(3, 3, "LOC")]];
        let prf = micro_f1(&gold, &pred).unwrap();
        assert_eq!(prf.precision, 0.5);
        assert_eq!(prf.recall, 1.0);
        assert!((prf.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(prf.per_type["LOC"].counts.false_positives, 1);
        assert_eq!(prf.per_type["LOC"].support, 0);
    }

    #[test]
    fn wrong_type_is_fp_and_fn() {
        let prf = micro_f1(&[vec![e(0, 1, "PER")]], &[vec![e(0, 1, "LOC")]]).unwrap();
        assert_eq!(
            prf.counts,
            Counts {
                true_positives: 0,
                false_positives: 1,
                false_negatives: 1
            }
        );
        assert_eq!(prf.f1, 0.0);
    }

    #[test]
    fn misaligned_and_empty() {
        assert!(matches!(
            micro_f1(&[vec![]], &[]),
            Err(Error::Misaligned { gold: 1, predicted: 0 })
        ));
        let prf = micro_f1(&[], &[]).unwrap();
        assert_eq!(prf.f1, 0.0);
    }

    #[test]
    fn survival_counts_exact_offsets() {
        use crate::spans::SpanCandidate;
        let gold = vec![vec![e(0, 1, "PER"), e(3, 3, "LOC")]];
        let kept = vec![vec![SpanCandidate::new(0, 1), SpanCandidate::new(3, 4)]];
        assert_eq!(span_survival(&gold, &kept).unwrap(), 0.5);
    }

    #[test]
    fn table_alignment() {
        let t = text_table(&["a", "bb"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    bb\n-------\nxyz   1\n");
    }

    fn sentence_spans() -> impl proptest::strategy::Strategy<Value = Vec<EntitySpan>> {
        proptest::collection::vec((0usize..4, 0usize..2, 0usize..2), 0..4).prop_map(|v| {
            v.into_iter()
                .map(|(s, l, t)| e(s, s + l, ["A", "B"][t]))
                .collect()
        })
    }

    #[test]
    fn grid_endpoints() {
        assert_eq!(threshold_grid(0.0, 1.0, 5).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(threshold_grid(0.3, 0.9, 1).unwrap(), vec![0.3]);
        assert!(threshold_grid(1.0, 0.0, 3).is_err());
        assert!(threshold_grid(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn sweep_on_untrained_model() {
        use crate::corpus::{build_vocab, generate_synthetic, SyntheticSpec};
        use crate::models::{Model, ModelConfig};
        use crate::nnet::EncoderConfig;
        let spec = SyntheticSpec {
            sentences: 5,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic(&spec, 3).unwrap();
        let vocab = build_vocab(&corpus, 1).unwrap();
        let enc = EncoderConfig::new(2, 8, 2, 16, vocab.len(), 16);
        let config = ModelConfig::new(Strategy::SfSpandec, enc, spec.label_set().unwrap());
        let tagger = Tagger {
            model: Model::init(config, 1).unwrap(),
            vocab,
        };
        let rows = sweep_threshold(&tagger, &corpus, &[0.0, 0.5, 1.1]).unwrap();
        assert_eq!((rows[0].retained_fraction, rows[0].survival), (1.0, 1.0));
        assert!(rows[1].retained_fraction <= rows[0].retained_fraction);
        assert_eq!((rows[2].retained_fraction, rows[2].survival, rows[2].f1), (0.0, 0.0, 0.0));
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            pairs in proptest::collection::vec((sentence_spans(), sentence_spans()), 0..6),
            rot in 0usize..6,
        ) {
            let (gold, pred): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let a = micro_f1(&gold, &pred).unwrap();
            let k = if gold.is_empty() { 0 } else { rot % gold.len() };
            let (mut g2, mut p2) = (gold.clone(), pred.clone());
            g2.rotate_left(k);
            p2.rotate_left(k);
            let b = micro_f1(&g2, &p2).unwrap();
            prop_assert_eq!(a.counts, b.counts);
            prop_assert_eq!(a.f1, b.f1);
        }
    }
}
