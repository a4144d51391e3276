//! Prediction heads: the span decoder, the BIO token classifier and the
//! binary span-filter classifier.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nnet::{
    softmax_rows, AttentionPattern, Block, Graph, HiddenStates, Linear, Norm, ParamGroup,
    ParamStore, Var,
};
use crate::spans::{build_cross_mask, chunk_ranges, PackedSpanBatch};
use crate::tensor::Tensor;
use std::sync::Arc;

/// Concatenate-then-classify over marker pairs: `[h_i; h_j] → logits`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanClassifier {
    pub norm: Option<Norm>,
    pub linear: Linear,
    pub hidden: usize,
}

impl SpanClassifier {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden: usize,
        classes: usize,
        with_norm: bool,
    ) -> Result<Self> {
        let norm = if with_norm {
            Some(Norm::init(store, &format!("{name}.norm"), hidden, ParamGroup::Head)?)
        } else {
            None
        };
        let linear = Linear::init(
            store,
            rng,
            &format!("{name}.linear"),
            2 * hidden,
            classes,
            ParamGroup::Head,
        )?;
        Ok(SpanClassifier {
            norm,
            linear,
            hidden,
        })
    }

    /// `markers` is `2P × d` in packed order; returns `P × |E|`.
    pub fn forward(&self, g: &mut Graph, markers: Var) -> Result<Var> {
        let (rows, cols) = g.shape(markers);
        if rows % 2 != 0 || cols != self.hidden {
            return Err(Error::Shape(format!(
                "span classifier expects 2P x {} markers, got {rows}x{cols}",
                self.hidden
            )));
        }
        let h = match &self.norm {
            Some(norm) => norm.forward(g, markers)?,
            None => markers,
        };
        // Row-major reshape joins rows 2k and 2k+1 into row k.
        let pairs = g.reshape(h, rows / 2, 2 * cols)?;
        self.linear.forward(g, pairs)
    }
}

/// Stacked pre-norm cross-attention + MLP blocks followed by the pair
/// classifier. Marker pairs read the encoder states and their own partner.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanDecoder {
    pub blocks: Vec<Block>,
    pub classifier: SpanClassifier,
    pub num_classes: usize,
}

impl SpanDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        num_blocks: usize,
        hidden: usize,
        ffn: usize,
        heads: usize,
        classes: usize,
        classifier_norm: bool,
    ) -> Result<Self> {
        let blocks = (0..num_blocks)
            .map(|i| {
                Block::init(
                    store,
                    rng,
                    &format!("decoder.blocks.{i}"),
                    hidden,
                    ffn,
                    heads,
                    ParamGroup::Head,
                )
            })
            .collect::<Result<_>>()?;
        let classifier =
            SpanClassifier::init(store, rng, "decoder.classifier", hidden, classes, classifier_norm)?;
        Ok(SpanDecoder {
            blocks,
            classifier,
            num_classes: classes,
        })
    }

    /// Decode `queries` (`2P × d`) against `text` (`S × d`). `text_valid`
    /// marks readable text rows (`None`: all). Candidates are processed in
    /// chunks of `chunk_pairs` pairs; chunking never changes the result.
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        text: Var,
        text_valid: Option<&[bool]>,
        chunk_pairs: Option<usize>,
    ) -> Result<Var> {
        let (rows, width) = g.shape(queries);
        let seq_len = g.shape(text).0;
        if rows % 2 != 0 || width != g.shape(text).1 {
            return Err(Error::Shape(format!(
                "decoder queries {rows}x{width} vs text {:?}",
                g.shape(text)
            )));
        }
        let num_pairs = rows / 2;
        if num_pairs == 0 {
            return Ok(g.input(Tensor::zeros(0, self.num_classes)));
        }
        let text_kv = self
            .blocks
            .iter()
            .map(|b| Ok(b.key_values(g, text)?.1))
            .collect::<Result<Vec<_>>>()?;
        let valid = match text_valid {
            Some(v) => v.to_vec(),
            None => vec![true; seq_len],
        };
        let mut outputs = Vec::new();
        for range in chunk_ranges(num_pairs, chunk_pairs) {
            let candidates = range.len();
            let pattern = Arc::new(pattern_for(candidates, &valid)?);
            let mut m = if candidates == num_pairs {
                queries
            } else {
                g.slice_rows(queries, 2 * range.start, 2 * range.end)?
            };
            for (block, kv) in self.blocks.iter().zip(&text_kv) {
                m = block.attend_markers(g, m, *kv, pattern.clone())?;
            }
            outputs.push(self.classifier.forward(g, m)?);
        }
        if outputs.len() == 1 {
            Ok(outputs[0])
        } else {
            g.concat_rows(&outputs)
        }
    }
}

fn pattern_for(num_pairs: usize, text_valid: &[bool]) -> Result<AttentionPattern> {
    let dummy = vec![crate::spans::SpanCandidate::new(0, 0); num_pairs];
    Ok(build_cross_mask(&dummy, text_valid.len(), Some(text_valid))?.pattern())
}

/// Per-token linear classifier (`d → classes`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenHead {
    pub linear: Linear,
    pub classes: usize,
}

impl TokenHead {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden: usize,
        classes: usize,
    ) -> Result<Self> {
        Ok(TokenHead {
            linear: Linear::init(store, rng, name, hidden, classes, ParamGroup::Head)?,
            classes,
        })
    }

    pub fn forward(&self, g: &mut Graph, states: Var) -> Result<Var> {
        self.linear.forward(g, states)
    }
}

/// Span decoding on a packed batch. The text keys are `states`; its padding
/// mask and the batch's pair structure restrict attention.
pub fn span_decode(
    store: &ParamStore,
    decoder: &SpanDecoder,
    batch: &PackedSpanBatch,
    states: &HiddenStates,
) -> Result<Tensor> {
    if batch.queries.rows() != 2 * batch.num_pairs() {
        return Err(Error::Shape("queries do not match candidate count".into()));
    }
    if batch.cross_mask.seq_len() != states.values.rows() && !batch.is_empty() {
        return Err(Error::Shape(format!(
            "batch built for {} text rows, states have {}",
            batch.cross_mask.seq_len(),
            states.values.rows()
        )));
    }
    let mut g = Graph::new(store);
    let q = g.input(batch.queries.clone());
    let text = g.input(states.values.clone());
    let logits = decoder.forward(&mut g, q, text, Some(&states.mask), None)?;
    Ok(g.value(logits).clone())
}

/// BIO logits for every row of `states` (padded rows included).
pub fn token_classify(store: &ParamStore, head: &TokenHead, states: &HiddenStates) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let x = g.input(states.values.clone());
    let logits = head.forward(&mut g, x)?;
    Ok(g.value(logits).clone())
}

/// Probability of the any-entity class per token, from 2-class logits.
pub fn entity_probabilities(sf_logits: &Tensor) -> Vec<f64> {
    let probs = softmax_rows(sf_logits);
    (0..probs.rows()).map(|r| probs.get(r, 1)).collect()
}

/// Per-token entity probability from the span-filter head.
pub fn sf_scores(store: &ParamStore, head: &TokenHead, states: &HiddenStates) -> Result<Vec<f64>> {
    if head.classes != 2 {
        return Err(Error::Shape(format!(
            "span filter head must have 2 classes, has {}",
            head.classes
        )));
    }
    Ok(entity_probabilities(&token_classify(store, head, states)?))
}
