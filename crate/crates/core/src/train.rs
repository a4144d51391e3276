//! Losses, AdamW with a one-cycle schedule, and the training loop.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_vocab, Corpus, EntitySpan, LabelSet, Sentence, OUTSIDE};
use crate::error::{Error, Result};
use crate::eval::micro_f1;
use crate::infer::predict;
use crate::models::{GraphOutput, Model, ModelConfig, Tagger};
use crate::nnet::{Gradients, Graph, ParamGroup, ParamKind, ParamStore, Var};
use crate::spans::SpanCandidate;
use crate::tensor::Tensor;

/// Class index per candidate: the gold type on an exact match, else O (0).
pub fn span_targets(
    candidates: &[SpanCandidate],
    gold: &[EntitySpan],
    labels: &LabelSet,
) -> Result<Vec<usize>> {
    let mut by_span = HashMap::with_capacity(gold.len());
    for e in gold {
        let k = labels
            .type_index(&e.entity_type)
            .ok_or_else(|| Error::UnknownLabel(e.entity_type.clone()))?;
        by_span.insert((e.start, e.end), k);
    }
    Ok(candidates
        .iter()
        .map(|c| by_span.get(&(c.start, c.end)).copied().unwrap_or(0))
        .collect())
}

/// Weighted mean cross-entropy over candidate spans. `outside_weight`
/// scales O-labelled candidates (1.0 is the plain mean).
pub fn span_loss(
    g: &mut Graph,
    logits: Var,
    candidates: &[SpanCandidate],
    gold: &[EntitySpan],
    labels: &LabelSet,
    outside_weight: f64,
) -> Result<Var> {
    let targets = span_targets(candidates, gold, labels)?;
    let raw: Vec<f64> = targets
        .iter()
        .map(|&t| if t == 0 { outside_weight } else { 1.0 })
        .collect();
    mean_ce(g, logits, &targets, raw)
}

fn mean_ce(g: &mut Graph, logits: Var, targets: &[usize], mut weights: Vec<f64>) -> Result<Var> {
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    g.softmax_cross_entropy(logits, targets, &weights)
}

/// Mean cross-entropy over tokens.
pub fn bio_loss(g: &mut Graph, logits: Var, gold_tags: &[String], labels: &LabelSet) -> Result<Var> {
    let targets = labels.bio_ids(gold_tags)?;
    let n = targets.len();
    mean_ce(g, logits, &targets, vec![1.0; n])
}

/// Mean binary cross-entropy of the entity probability (softmax column 1 of
/// the two-way filter logits); target 1 iff the gold tag is not O.
pub fn sf_loss(g: &mut Graph, sf_logits: Var, gold_tags: &[String]) -> Result<Var> {
    let targets: Vec<usize> = gold_tags.iter().map(|t| usize::from(t != OUTSIDE)).collect();
    let n = targets.len();
    mean_ce(g, sf_logits, &targets, vec![1.0; n])
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    /// Span or BIO term.
    pub main: f64,
    /// Unweighted filter term (0 for strategies without a filter).
    pub sf: f64,
}

/// Strategy-dependent objective on one sentence; every candidate is
/// decoded, no filtering.
pub fn total_loss(
    g: &mut Graph,
    model: &Model,
    ids: &[usize],
    sentence: &Sentence,
    sf_weight: f64,
    outside_weight: f64,
) -> Result<(Var, LossParts)> {
    let labels = model.labels();
    match model.forward_graph(g, ids, None)? {
        GraphOutput::Token { logits } => {
            let loss = bio_loss(g, logits, &sentence.tags, labels)?;
            let v = g.value(loss).get(0, 0);
            Ok((
                loss,
                LossParts {
                    total: v,
                    main: v,
                    sf: 0.0,
                },
            ))
        }
        GraphOutput::Span {
            logits,
            candidates,
            sf_logits,
            ..
        } => {
            let gold = sentence.spans();
            let main = span_loss(g, logits, &candidates, &gold, labels, outside_weight)?;
            let main_v = g.value(main).get(0, 0);
            match sf_logits {
                Some(sf) => {
                    let sfl = sf_loss(g, sf, &sentence.tags)?;
                    let sf_v = g.value(sfl).get(0, 0);
                    let weighted = g.scale(sfl, sf_weight);
                    let loss = g.add(main, weighted)?;
                    Ok((
                        loss,
                        LossParts {
                            total: g.value(loss).get(0, 0),
                            main: main_v,
                            sf: sf_v,
                        },
                    ))
                }
                None => Ok((
                    main,
                    LossParts {
                        total: main_v,
                        main: main_v,
                        sf: 0.0,
                    },
                )),
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate of encoder parameters.
    pub learning_rate: f64,
    /// Multiplier for newly initialised parameters (decoder, heads, markers).
    pub head_lr_multiplier: f64,
    pub warmup_ratio: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub weight_decay: f64,
    pub sf_weight: f64,
    /// Loss weight of O-labelled span candidates.
    pub outside_weight: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop once dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 5e-5,
            head_lr_multiplier: 10.0,
            warmup_ratio: 0.03,
            batch_size: 64,
            clip_norm: 1.0,
            weight_decay: 0.01,
            sf_weight: 1.0,
            outside_weight: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            target_dev_f1: None,
        }
    }
}

impl TrainConfig {
    /// Small-model, from-scratch settings used for the synthetic runs.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 1e-4,
            head_lr_multiplier: 20.0,
            warmup_ratio: 0.03,
            batch_size: 4,
            sf_weight: 0.1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("head_lr_multiplier", self.head_lr_multiplier),
            ("clip_norm", self.clip_norm),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return Err(Error::Config("warmup_ratio must be in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        for (name, v) in [
            ("weight_decay", self.weight_decay),
            ("sf_weight", self.sf_weight),
            ("outside_weight", self.outside_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must be in [0, 1)".into()));
        }
        if let Some(t) = self.target_dev_f1 {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config("target_dev_f1 must be in [0, 1]".into()));
            }
        }
        Ok(())
    }
}

/// One-cycle schedule: linear ramp to `peak` over the first
/// `ceil(warmup_ratio · total)` steps, then cosine decay towards zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize, warmup_ratio: f64) -> Self {
        let warmup_steps = ((warmup_ratio * total_steps as f64).ceil() as usize).clamp(1, total_steps.max(1));
        OneCycle {
            peak,
            total_steps,
            warmup_steps,
        }
    }

    /// Learning rate of zero-based step `step`.
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let decay = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        let progress = ((step - self.warmup_steps) as f64 / decay).min(1.0);
        self.peak * 0.5 * (1.0 + (PI * progress).cos())
    }
}

/// Adam with decoupled weight decay, applied to weight matrices only.
#[derive(Debug, Clone)]
pub struct AdamW {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: usize,
}

impl AdamW {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .ids()
            .map(|id| {
                let (r, c) = store.get(id).shape();
                Tensor::zeros(r, c)
            })
            .collect();
        AdamW {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Clip `grads` to `config.clip_norm`, then update every parameter.
    /// Parameters without a gradient buffer are treated as zero-gradient.
    /// Returns the pre-clipping global norm.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &mut Gradients,
        lr: f64,
        config: &TrainConfig,
    ) -> f64 {
        let norm = grads.global_norm();
        if norm > config.clip_norm {
            grads.scale(config.clip_norm / norm);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - config.beta1.powi(t);
        let bc2 = 1.0 - config.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let info = store.info(id);
            let rate = match info.group {
                ParamGroup::Encoder => lr,
                ParamGroup::Head => lr * config.head_lr_multiplier,
            };
            let decay = if info.kind == ParamKind::Weight {
                config.weight_decay
            } else {
                0.0
            };
            let grad = grads.get(id).map(Tensor::data);
            let m = self.first[id.index()].data_mut();
            let v = self.second[id.index()].data_mut();
            let p = store.get_mut(id).data_mut();
            for k in 0..p.len() {
                let gk = grad.map_or(0.0, |g| g[k]);
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * gk;
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * gk * gk;
                let update = (m[k] / bc1) / ((v[k] / bc2).sqrt() + config.eps);
                p[k] -= rate * (update + decay * p[k]);
            }
        }
        norm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub steps: usize,
    /// Mean total loss per epoch.
    pub loss: Vec<f64>,
    /// Mean filter loss per epoch (zeros without a filter head).
    pub sf_loss: Vec<f64>,
    pub dev_f1: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub best_dev_f1: f64,
    pub checkpoint: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

/// Per-epoch callback argument.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub sf_loss: f64,
    pub dev_f1: f64,
    pub seconds: f64,
}

/// Dev-set F1 at the model's configured filter threshold.
pub fn evaluate_f1(tagger: &Tagger, corpus: &Corpus) -> Result<f64> {
    let threshold = Some(tagger.model.config.sf_threshold);
    let mut predicted = Vec::with_capacity(corpus.len());
    for s in corpus.iter() {
        predicted.push(predict(&tagger.model, &tagger.encode(&s.words), threshold)?.entities);
    }
    Ok(micro_f1(&corpus.gold_spans(), &predicted)?.f1)
}

pub fn train(
    model_config: ModelConfig,
    config: &TrainConfig,
    train_set: &Corpus,
    dev_set: &Corpus,
    checkpoint: Option<&Path>,
) -> Result<(Tagger, TrainReport)> {
    train_with_progress(model_config, config, train_set, dev_set, checkpoint, |_| {})
}

/// Train on `train_set`, keep the parameters with the best dev F1, and save
/// them to `checkpoint` when given. The vocabulary comes from `train_set`
/// alone and overrides `encoder.vocab_size`.
pub fn train_with_progress(
    mut model_config: ModelConfig,
    config: &TrainConfig,
    train_set: &Corpus,
    dev_set: &Corpus,
    checkpoint: Option<&Path>,
    mut progress: impl FnMut(&EpochStats),
) -> Result<(Tagger, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() || dev_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let vocab = build_vocab(train_set, 1)?;
    model_config.encoder.vocab_size = vocab.len();
    let longest = train_set.iter().chain(dev_set.iter()).map(Sentence::len).max().unwrap_or(0);
    if longest > model_config.encoder.max_positions {
        return Err(Error::PositionOutOfRange {
            position: longest - 1,
            max_positions: model_config.encoder.max_positions,
        });
    }
    let model = Model::init(model_config, config.seed)?;
    let mut tagger = Tagger { model, vocab };
    let encoded: Vec<Vec<usize>> = train_set.iter().map(|s| tagger.encode(&s.words)).collect();

    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let schedule = OneCycle::new(
        config.learning_rate,
        batches_per_epoch * config.epochs,
        config.warmup_ratio,
    );
    let mut optimizer = AdamW::new(&tagger.model.store);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let started = Instant::now();
    let mut report = TrainReport {
        epochs: config.epochs,
        steps: 0,
        loss: Vec::with_capacity(config.epochs),
        sf_loss: Vec::with_capacity(config.epochs),
        dev_f1: Vec::with_capacity(config.epochs),
        best_epoch: None,
        best_dev_f1: 0.0,
        checkpoint: None,
        wall_clock_secs: 0.0,
    };
    let mut best: Option<ParamStore> = None;

    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut sf_sum) = (0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            let mut grads = Gradients::new(&tagger.model.store);
            {
                let model = &tagger.model;
                for &i in batch {
                    let mut g = Graph::new(&model.store);
                    let (loss, parts) = total_loss(
                        &mut g,
                        model,
                        &encoded[i],
                        &train_set.sentences[i],
                        config.sf_weight,
                        config.outside_weight,
                    )?;
                    if !parts.total.is_finite() {
                        return Err(Error::Divergence(format!(
                            "non-finite loss at epoch {epoch}, step {}, sentence {i}",
                            optimizer.steps()
                        )));
                    }
                    loss_sum += parts.total;
                    sf_sum += parts.sf;
                    g.backward(loss, &mut grads)?;
                }
            }
            grads.scale(1.0 / batch.len() as f64);
            let lr = schedule.lr(optimizer.steps());
            optimizer.step(&mut tagger.model.store, &mut grads, lr, config);
            if !tagger.model.store.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite parameters after step {} (epoch {epoch})",
                    optimizer.steps()
                )));
            }
        }
        let n = train_set.len() as f64;
        let f1 = evaluate_f1(&tagger, dev_set)?;
        report.loss.push(loss_sum / n);
        report.sf_loss.push(sf_sum / n);
        report.dev_f1.push(f1);
        if report.best_epoch.is_none() || f1 > report.best_dev_f1 {
            report.best_epoch = Some(epoch);
            report.best_dev_f1 = f1;
            best = Some(tagger.model.store.clone());
        }
        progress(&EpochStats {
            epoch,
            loss: loss_sum / n,
            sf_loss: sf_sum / n,
            dev_f1: f1,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        if config.target_dev_f1.is_some_and(|t| f1 >= t) {
            break;
        }
    }
    report.epochs = report.dev_f1.len();
    if let Some(store) = best {
        tagger.model.store = store;
    }
    report.steps = optimizer.steps();
    if let Some(path) = checkpoint {
        tagger.save(path)?;
        report.checkpoint = Some(path.to_path_buf());
    }
    report.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((tagger, report))
}
