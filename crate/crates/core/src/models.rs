//! The four strategies assembled over shared components.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSet, Vocabulary};
use crate::error::{Error, Result};
use crate::heads::{entity_probabilities, SpanClassifier, SpanDecoder, TokenHead};
use crate::infer::filter_spans;
use crate::nnet::{
    checkpoint,
    truncated_normal, AttentionPattern, Encoder, EncoderConfig, Graph, ParamGroup, ParamId,
    ParamKind, ParamStore, Var,
};
use crate::spans::{chunk_ranges, enumerate_spans, marker_queries, pair_pattern, SpanCandidate};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Token,
    Plmarker,
    Spandec,
    SfSpandec,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Token,
        Strategy::Plmarker,
        Strategy::Spandec,
        Strategy::SfSpandec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Token => "token",
            Strategy::Plmarker => "plmarker",
            Strategy::Spandec => "spandec",
            Strategy::SfSpandec => "sf_spandec",
        }
    }

    pub fn is_span_based(self) -> bool {
        self != Strategy::Token
    }

    pub fn uses_decoder(self) -> bool {
        matches!(self, Strategy::Spandec | Strategy::SfSpandec)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "token" => Ok(Strategy::Token),
            "plmarker" | "pl_marker" => Ok(Strategy::Plmarker),
            "spandec" => Ok(Strategy::Spandec),
            "sf_spandec" | "sfspandec" => Ok(Strategy::SfSpandec),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

fn default_threshold() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub strategy: Strategy,
    pub encoder: EncoderConfig,
    pub encoder_blocks_used: usize,
    pub decoder_blocks: usize,
    #[serde(default = "default_threshold")]
    pub sf_threshold: f64,
    pub labels: LabelSet,
    /// Layer norm on marker states before the pair classifier.
    #[serde(default = "default_true")]
    pub classifier_norm: bool,
    /// Stop span-filter gradients at the encoder output.
    #[serde(default)]
    pub sf_detach: bool,
    /// Marker tokens per forward chunk (`None`: everything at once).
    #[serde(default)]
    pub marker_budget: Option<usize>,
}

impl ModelConfig {
    /// Default block split: the decoder strategies drop the last encoder
    /// block and add one decoder block.
    pub fn new(strategy: Strategy, encoder: EncoderConfig, labels: LabelSet) -> Self {
        let (encoder_blocks_used, decoder_blocks) = if strategy.uses_decoder() {
            (encoder.num_blocks.saturating_sub(1).max(1), 1)
        } else {
            (encoder.num_blocks, 0)
        };
        ModelConfig {
            strategy,
            encoder,
            encoder_blocks_used,
            decoder_blocks,
            sf_threshold: default_threshold(),
            labels,
            classifier_norm: true,
            sf_detach: false,
            marker_budget: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let n = self.encoder.num_blocks;
        if self.strategy.uses_decoder() {
            if self.encoder_blocks_used == 0 || self.encoder_blocks_used > n {
                return Err(Error::Config(format!(
                    "{}: encoder_blocks_used must be in 1..={n}",
                    self.strategy
                )));
            }
            if self.decoder_blocks == 0 {
                return Err(Error::Config(format!("{} needs a decoder block", self.strategy)));
            }
        } else if self.encoder_blocks_used != n || self.decoder_blocks != 0 {
            return Err(Error::Config(format!(
                "{} uses all {n} encoder blocks and no decoder",
                self.strategy
            )));
        }
        if !(self.sf_threshold >= 0.0) {
            return Err(Error::Config("sf_threshold must be a probability".into()));
        }
        if self.marker_budget == Some(0) {
            return Err(Error::Config("marker_budget must be positive".into()));
        }
        Ok(())
    }

    fn chunk_pairs(&self) -> Option<usize> {
        self.marker_budget.map(|b| (b / 2).max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Head {
    Token(TokenHead),
    Plmarker {
        markers: ParamId,
        classifier: SpanClassifier,
    },
    SpanDec {
        markers: ParamId,
        decoder: SpanDecoder,
        filter: Option<TokenHead>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    head: Head,
}

/// Graph nodes of one forward pass.
#[derive(Debug, Clone)]
pub enum GraphOutput {
    Token {
        logits: Var,
    },
    Span {
        logits: Var,
        candidates: Vec<SpanCandidate>,
        enumerated: usize,
        sf_logits: Option<Var>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanOutput {
    /// One row per retained candidate, `|E|` columns.
    pub logits: Tensor,
    pub candidates: Vec<SpanCandidate>,
    pub enumerated: usize,
    /// Entity probability per token (span-filter strategy only).
    pub sf_probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelOutput {
    Token { logits: Tensor },
    Span(SpanOutput),
}

impl Model {
    /// Build the exact parameter set the strategy needs.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, &config.encoder, &mut rng)?;
        let enc = &config.encoder;
        let classes = config.labels.num_types();
        let marker_table = |store: &mut ParamStore, rng: &mut ChaCha8Rng| {
            store.insert(
                "markers",
                ParamGroup::Head,
                ParamKind::Weight,
                truncated_normal(rng, 2, enc.hidden_dim, crate::nnet::layers::INIT_STD),
            )
        };
        let head = match config.strategy {
            Strategy::Token => Head::Token(TokenHead::init(
                &mut store,
                &mut rng,
                "token_head",
                enc.hidden_dim,
                config.labels.num_bio(),
            )?),
            Strategy::Plmarker => Head::Plmarker {
                markers: marker_table(&mut store, &mut rng)?,
                classifier: SpanClassifier::init(
                    &mut store,
                    &mut rng,
                    "plmarker.classifier",
                    enc.hidden_dim,
                    classes,
                    config.classifier_norm,
                )?,
            },
            Strategy::Spandec | Strategy::SfSpandec => {
                let markers = marker_table(&mut store, &mut rng)?;
                let decoder = SpanDecoder::init(
                    &mut store,
                    &mut rng,
                    config.decoder_blocks,
                    enc.hidden_dim,
                    enc.ffn_dim,
                    enc.num_heads,
                    classes,
                    config.classifier_norm,
                )?;
                let filter = if config.strategy == Strategy::SfSpandec {
                    Some(TokenHead::init(&mut store, &mut rng, "sf_head", enc.hidden_dim, 2)?)
                } else {
                    None
                };
                Head::SpanDec {
                    markers,
                    decoder,
                    filter,
                }
            }
        };
        Ok(Model {
            config,
            store,
            encoder,
            head,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn labels(&self) -> &LabelSet {
        &self.config.labels
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn marker_table(&self) -> Option<ParamId> {
        match &self.head {
            Head::Plmarker { markers, .. } | Head::SpanDec { markers, .. } => Some(*markers),
            Head::Token(_) => None,
        }
    }

    pub fn decoder(&self) -> Option<&SpanDecoder> {
        match &self.head {
            Head::SpanDec { decoder, .. } => Some(decoder),
            _ => None,
        }
    }

    pub fn filter_head(&self) -> Option<&TokenHead> {
        match &self.head {
            Head::SpanDec { filter, .. } => filter.as_ref(),
            _ => None,
        }
    }

    pub fn token_head(&self) -> Option<&TokenHead> {
        match &self.head {
            Head::Token(h) => Some(h),
            _ => None,
        }
    }

    /// Record one forward pass on `g`. `threshold` applies the span filter
    /// (span-filter strategy only); `None` decodes every candidate.
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        ids: &[usize],
        threshold: Option<f64>,
    ) -> Result<GraphOutput> {
        self.encoder.check_positions(ids.len())?;
        let enc_cfg = &self.config.encoder;
        let classes = self.config.labels.num_types();
        match &self.head {
            Head::Token(head) => {
                if ids.is_empty() {
                    let logits = g.input(Tensor::zeros(0, head.classes));
                    return Ok(GraphOutput::Token { logits });
                }
                let z = self.encoder.forward(g, ids, enc_cfg.num_blocks)?;
                Ok(GraphOutput::Token {
                    logits: head.forward(g, z)?,
                })
            }
            Head::Plmarker {
                markers,
                classifier,
            } => {
                let candidates = enumerate_spans(ids.len(), enc_cfg.max_span_len);
                let enumerated = candidates.len();
                if candidates.is_empty() {
                    let logits = g.input(Tensor::zeros(0, classes));
                    return Ok(GraphOutput::Span {
                        logits,
                        candidates,
                        enumerated,
                        sf_logits: None,
                    });
                }
                let logits = self.plmarker_logits(g, ids, &candidates, *markers, classifier)?;
                Ok(GraphOutput::Span {
                    logits,
                    candidates,
                    enumerated,
                    sf_logits: None,
                })
            }
            Head::SpanDec {
                markers,
                decoder,
                filter,
            } => {
                let all = enumerate_spans(ids.len(), enc_cfg.max_span_len);
                let enumerated = all.len();
                if ids.is_empty() {
                    let logits = g.input(Tensor::zeros(0, classes));
                    let sf_logits = filter.as_ref().map(|_| g.input(Tensor::zeros(0, 2)));
                    return Ok(GraphOutput::Span {
                        logits,
                        candidates: all,
                        enumerated,
                        sf_logits,
                    });
                }
                let z = self
                    .encoder
                    .forward(g, ids, self.config.encoder_blocks_used)?;
                let sf_logits = match filter {
                    Some(head) => {
                        let input = if self.config.sf_detach { g.detach(z) } else { z };
                        Some(head.forward(g, input)?)
                    }
                    None => None,
                };
                let candidates = match (sf_logits, threshold) {
                    (Some(sf), Some(tau)) => {
                        let probs = entity_probabilities(g.value(sf));
                        filter_spans(&all, &probs, tau)
                    }
                    _ => all,
                };
                let queries = if candidates.is_empty() {
                    g.input(Tensor::zeros(0, enc_cfg.hidden_dim))
                } else {
                    marker_queries(g, *markers, self.encoder.position_embeddings, &candidates)?
                };
                let logits = decoder.forward(g, queries, z, None, self.config.chunk_pairs())?;
                Ok(GraphOutput::Span {
                    logits,
                    candidates,
                    enumerated,
                    sf_logits,
                })
            }
        }
    }

    /// Levitated markers through every encoder block; text never reads
    /// markers, so the text stream is computed once and shared by all chunks.
    fn plmarker_logits(
        &self,
        g: &mut Graph,
        ids: &[usize],
        candidates: &[SpanCandidate],
        markers: ParamId,
        classifier: &SpanClassifier,
    ) -> Result<Var> {
        let s = ids.len();
        let positions: Vec<usize> = (0..s).collect();
        let mut text = self.encoder.embed(g, ids, &positions)?;
        let text_pattern = Arc::new(AttentionPattern::dense(s, s));
        let mut text_kv = Vec::with_capacity(self.encoder.blocks.len());
        for block in &self.encoder.blocks {
            let (next, kv) = block.text_step(g, text, text_pattern.clone())?;
            text_kv.push(kv);
            text = next;
        }
        let queries = marker_queries(g, markers, self.encoder.position_embeddings, candidates)?;
        let mut outputs = Vec::new();
        for range in chunk_ranges(candidates.len(), self.config.chunk_pairs()) {
            let pattern = pair_pattern(range.len(), s);
            let mut m = if range.len() == candidates.len() {
                queries
            } else {
                g.slice_rows(queries, 2 * range.start, 2 * range.end)?
            };
            for (block, kv) in self.encoder.blocks.iter().zip(&text_kv) {
                m = block.attend_markers(g, m, *kv, pattern.clone())?;
            }
            outputs.push(classifier.forward(g, m)?);
        }
        if outputs.len() == 1 {
            Ok(outputs[0])
        } else {
            g.concat_rows(&outputs)
        }
    }

    /// Final-layer text states of the levitated-marker encoder.
    pub fn plmarker_text_states(&self, ids: &[usize], with_markers: bool) -> Result<Tensor> {
        let Head::Plmarker { markers, .. } = &self.head else {
            return Err(Error::Config("not a plmarker model".into()));
        };
        let mut g = Graph::new(&self.store);
        let s = ids.len();
        let positions: Vec<usize> = (0..s).collect();
        let mut text = self.encoder.embed(&mut g, ids, &positions)?;
        let text_pattern = Arc::new(AttentionPattern::dense(s, s));
        let candidates = enumerate_spans(s, self.config.encoder.max_span_len);
        let mut m = if with_markers && !candidates.is_empty() {
            Some(marker_queries(
                &mut g,
                *markers,
                self.encoder.position_embeddings,
                &candidates,
            )?)
        } else {
            None
        };
        let pattern = pair_pattern(candidates.len(), s);
        for block in &self.encoder.blocks {
            let (next, kv) = block.text_step(&mut g, text, text_pattern.clone())?;
            if let Some(mk) = m {
                m = Some(block.attend_markers(&mut g, mk, kv, pattern.clone())?);
            }
            text = next;
        }
        Ok(g.value(text).clone())
    }

    /// Inference forward pass on one sentence of token ids.
    pub fn forward(&self, ids: &[usize], threshold: Option<f64>) -> Result<ModelOutput> {
        let mut g = Graph::new(&self.store);
        match self.forward_graph(&mut g, ids, threshold)? {
            GraphOutput::Token { logits } => Ok(ModelOutput::Token {
                logits: g.value(logits).clone(),
            }),
            GraphOutput::Span {
                logits,
                candidates,
                enumerated,
                sf_logits,
            } => Ok(ModelOutput::Span(SpanOutput {
                logits: g.value(logits).clone(),
                candidates,
                enumerated,
                sf_probs: sf_logits.map(|v| entity_probabilities(g.value(v))),
            })),
        }
    }

    fn expect(&self, strategy: Strategy) -> Result<()> {
        if self.strategy() != strategy {
            return Err(Error::Config(format!(
                "model is {}, not {strategy}",
                self.strategy()
            )));
        }
        Ok(())
    }

    /// BIO logits per sentence.
    pub fn forward_token(&self, batch: &[Vec<usize>]) -> Result<Vec<Tensor>> {
        self.expect(Strategy::Token)?;
        batch
            .iter()
            .map(|ids| match self.forward(ids, None)? {
                ModelOutput::Token { logits } => Ok(logits),
                ModelOutput::Span(_) => unreachable!("token head"),
            })
            .collect()
    }

    fn span_outputs(&self, batch: &[Vec<usize>], threshold: Option<f64>) -> Result<Vec<SpanOutput>> {
        batch
            .iter()
            .map(|ids| match self.forward(ids, threshold)? {
                ModelOutput::Span(out) => Ok(out),
                ModelOutput::Token { .. } => unreachable!("span head"),
            })
            .collect()
    }

    pub fn forward_plmarker(&self, batch: &[Vec<usize>]) -> Result<Vec<SpanOutput>> {
        self.expect(Strategy::Plmarker)?;
        self.span_outputs(batch, None)
    }

    pub fn forward_spandec(&self, batch: &[Vec<usize>]) -> Result<Vec<SpanOutput>> {
        if !self.strategy().uses_decoder() {
            return Err(Error::Config(format!("model is {}, not spandec", self.strategy())));
        }
        self.span_outputs(batch, None)
    }

    /// Decode only candidates whose tokens all reach entity probability `tau`.
    pub fn forward_sf_spandec(&self, batch: &[Vec<usize>], tau: f64) -> Result<Vec<SpanOutput>> {
        self.expect(Strategy::SfSpandec)?;
        self.span_outputs(batch, Some(tau))
    }
}

/// A model together with the vocabulary its embeddings were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Tagger {
    pub model: Model,
    pub vocab: Vocabulary,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    vocab: Vocabulary,
}

impl Tagger {
    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        self.vocab.encode(words)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::to_value(CheckpointMeta {
            model: self.model.config.clone(),
            vocab: self.vocab.clone(),
        })?;
        checkpoint::save(path, &meta, &self.model.store)
    }

    /// Rebuild the architecture from the stored config, then copy every
    /// parameter in by name.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (meta, stored) = checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(meta)
            .map_err(|e| Error::Checkpoint(format!("bad checkpoint metadata: {e}")))?;
        let mut model = Model::init(meta.model, 0)?;
        if stored.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} stored parameters, architecture has {}",
                stored.len(),
                model.store.len()
            )));
        }
        model.store.load_from(&stored)?;
        Ok(Tagger {
            model,
            vocab: meta.vocab,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels() -> LabelSet {
        LabelSet::new(&["PER", "LOC"]).unwrap()
    }

    fn model(strategy: Strategy) -> Model {
        let enc = EncoderConfig::new(3, 16, 4, 32, 40, 24);
        Model::init(ModelConfig::new(strategy, enc, labels()), 11).unwrap()
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
        assert!("crf".parse::<Strategy>().is_err());
    }

    #[test]
    fn default_split_and_validation() {
        let enc = EncoderConfig::new(12, 16, 4, 32, 40, 24);
        let c = ModelConfig::new(Strategy::Spandec, enc.clone(), labels());
        assert_eq!((c.encoder_blocks_used, c.decoder_blocks), (11, 1));
        let mut ablation = c.clone();
        ablation.encoder_blocks_used = 12;
        assert!(ablation.validate().is_ok());
        let mut bad = ModelConfig::new(Strategy::Token, enc, labels());
        bad.decoder_blocks = 1;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parameter_sets_match_strategy() {
        assert!(model(Strategy::Token).store.lookup("token_head.weight").is_some());
        assert!(model(Strategy::Token).store.lookup("markers").is_none());
        let pl = model(Strategy::Plmarker);
        assert!(pl.store.lookup("markers").is_some());
        assert!(pl.store.lookup("decoder.blocks.0.attn.query.weight").is_none());
        let sd = model(Strategy::Spandec);
        assert!(sd.store.lookup("decoder.blocks.0.attn.query.weight").is_some());
        assert!(sd.store.lookup("sf_head.weight").is_none());
        let sf = model(Strategy::SfSpandec);
        assert!(sf.store.lookup("sf_head.weight").is_some());
        assert_eq!(sf.store.get(sf.store.lookup("sf_head.weight").unwrap()).cols(), 2);
    }

    #[test]
    fn token_output_shape_and_determinism() {
        let m = model(Strategy::Token);
        let out = m.forward_token(&[vec![3, 4, 5]]).unwrap();
        assert_eq!(out[0].shape(), (3, labels().num_bio()));
        assert_eq!(out, m.forward_token(&[vec![3, 4, 5]]).unwrap());
    }

    #[test]
    fn empty_sentence_gives_empty_logits() {
        for s in Strategy::ALL {
            match model(s).forward(&[], Some(0.5)).unwrap() {
                ModelOutput::Token { logits } => assert_eq!(logits.rows(), 0),
                ModelOutput::Span(out) => {
                    assert_eq!(out.logits.rows(), 0);
                    assert!(out.candidates.is_empty());
                }
            }
        }
    }

    #[test]
    fn plmarker_chunking_is_output_invariant() {
        let mut m = model(Strategy::Plmarker);
        let ids: Vec<usize> = (2..15).collect();
        let whole = m.forward_plmarker(&[ids.clone()]).unwrap().remove(0);
        m.config.marker_budget = Some(16);
        let chunked = m.forward_plmarker(&[ids]).unwrap().remove(0);
        assert_eq!(whole.candidates, chunked.candidates);
        assert!(whole.logits.max_rel_diff(&chunked.logits, 1e-12) < 1e-5);
    }

    #[test]
    fn plmarker_text_is_isolated_from_markers() {
        let m = model(Strategy::Plmarker);
        let ids = vec![4, 8, 15, 16, 23];
        let a = m.plmarker_text_states(&ids, false).unwrap();
        let b = m.plmarker_text_states(&ids, true).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn spandec_ablation_variant_runs() {
        let enc = EncoderConfig::new(3, 16, 4, 32, 40, 24);
        let mut c = ModelConfig::new(Strategy::Spandec, enc, labels());
        c.encoder_blocks_used = 3;
        let m = Model::init(c, 1).unwrap();
        let out = m.forward_spandec(&[vec![2, 3, 4]]).unwrap();
        assert_eq!(out[0].logits.shape(), (6, 3));
    }

    #[test]
    fn sf_threshold_boundaries() {
        let m = model(Strategy::SfSpandec);
        let ids = vec![5, 6, 7, 8];
        let plain = m.forward_spandec(&[ids.clone()]).unwrap().remove(0);
        let zero = m.forward_sf_spandec(&[ids.clone()], 0.0).unwrap().remove(0);
        assert_eq!(plain.candidates, zero.candidates);
        assert_eq!(plain.logits, zero.logits);
        let none = m.forward_sf_spandec(&[ids], 1.0 + 1e-9).unwrap().remove(0);
        assert!(none.candidates.is_empty());
        assert_eq!(none.logits.rows(), 0);
        assert_eq!(none.enumerated, 10);
    }

    #[test]
    fn wrong_strategy_is_rejected() {
        assert!(model(Strategy::Token).forward_plmarker(&[vec![2]]).is_err());
        assert!(model(Strategy::Spandec).forward_sf_spandec(&[vec![2]], 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let corpus = crate::corpus::Corpus::new(vec![crate::corpus::Sentence::new(
            vec!["a".into(), "b".into()],
            vec!["B-PER".into(), "O".into()],
        )
        .unwrap()]);
        let tagger = Tagger {
            model: model(Strategy::SfSpandec),
            vocab: crate::corpus::build_vocab(&corpus, 1).unwrap(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        tagger.save(&path).unwrap();
        let back = Tagger::load(&path).unwrap();
        assert_eq!(back, tagger);
    }

    #[test]
    fn too_long_sentence() {
        let m = model(Strategy::Spandec);
        assert!(matches!(
            m.forward(&vec![2; 25], None),
            Err(Error::PositionOutOfRange { .. })
        ));
    }
}
