use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::graph::{AttentionPattern, Graph, Var};
use crate::nnet::layers::{Block, INIT_STD};
use crate::nnet::params::{truncated_normal, ParamGroup, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub num_blocks: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    #[serde(default = "default_max_span_len")]
    pub max_span_len: usize,
    #[serde(default)]
    pub position_init: PositionInit,
}

/// Starting values of the (trainable) positional table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionInit {
    /// Truncated normal like every other weight.
    #[default]
    Normal,
    /// Sine/cosine pairs at geometric frequencies, scaled to the same
    /// per-entry standard deviation as the normal init.
    Sinusoidal,
}

/// `pe[p][2k] = sin(p / 10000^(2k/d))`, `pe[p][2k+1] = cos(...)`, times `scale`.
pub fn sinusoidal_table(positions: usize, dim: usize, scale: f64) -> Tensor {
    let mut t = Tensor::zeros(positions, dim);
    for p in 0..positions {
        for c in 0..dim {
            let k = (c / 2) as f64;
            let angle = p as f64 / 10000f64.powf(2.0 * k / dim as f64);
            let v = if c % 2 == 0 { angle.sin() } else { angle.cos() };
            t.set(p, c, scale * v);
        }
    }
    t
}

fn default_max_span_len() -> usize {
    crate::corpus::MAX_ENTITY_WORDS
}

impl EncoderConfig {
    /// A config with `head_dim` derived from `hidden_dim / num_heads`.
    pub fn new(
        num_blocks: usize,
        hidden_dim: usize,
        num_heads: usize,
        ffn_dim: usize,
        vocab_size: usize,
        max_positions: usize,
    ) -> Self {
        EncoderConfig {
            num_blocks,
            hidden_dim,
            num_heads,
            head_dim: if num_heads == 0 { 0 } else { hidden_dim / num_heads },
            ffn_dim,
            vocab_size,
            max_positions,
            max_span_len: default_max_span_len(),
            position_init: PositionInit::Normal,
        }
    }

    /// Two blocks, hidden 64, two heads; vocabulary size is filled in at training time.
    pub fn desk() -> Self {
        EncoderConfig::new(2, 64, 2, 128, 0, 128)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.hidden_dim != self.num_heads * self.head_dim {
            return Err(Error::Config(format!(
                "hidden_dim {} != num_heads {} x head_dim {}",
                self.hidden_dim, self.num_heads, self.head_dim
            )));
        }
        if self.hidden_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Config("hidden_dim and ffn_dim must be positive".into()));
        }
        if self.vocab_size < 2 || self.max_positions == 0 {
            return Err(Error::Config("vocab_size >= 2 and max_positions >= 1 required".into()));
        }
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// Graph-level encoder: embeddings plus a stack of pre-norm blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub word_embeddings: ParamId,
    pub position_embeddings: ParamId,
    pub blocks: Vec<Block>,
}

impl Encoder {
    pub fn init<R: Rng>(store: &mut ParamStore, config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let group = ParamGroup::Encoder;
        let word_embeddings = store.insert(
            "encoder.word_embeddings",
            group,
            ParamKind::Weight,
            truncated_normal(rng, config.vocab_size, config.hidden_dim, INIT_STD),
        )?;
        let position_embeddings = store.insert(
            "encoder.position_embeddings",
            group,
            ParamKind::Weight,
            match config.position_init {
                PositionInit::Normal => {
                    truncated_normal(rng, config.max_positions, config.hidden_dim, INIT_STD)
                }
                PositionInit::Sinusoidal => sinusoidal_table(
                    config.max_positions,
                    config.hidden_dim,
                    INIT_STD * std::f64::consts::SQRT_2,
                ),
            },
        )?;
        let blocks = (0..config.num_blocks)
            .map(|i| {
                Block::init(
                    store,
                    rng,
                    &format!("encoder.blocks.{i}"),
                    config.hidden_dim,
                    config.ffn_dim,
                    config.num_heads,
                    group,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config: config.clone(),
            word_embeddings,
            position_embeddings,
            blocks,
        })
    }

    pub fn check_positions(&self, len: usize) -> Result<()> {
        if len > self.config.max_positions {
            return Err(Error::PositionOutOfRange {
                position: len - 1,
                max_positions: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Word plus positional embeddings.
    pub fn embed(&self, g: &mut Graph, ids: &[usize], positions: &[usize]) -> Result<Var> {
        if let Some(&p) = positions.iter().find(|&&p| p >= self.config.max_positions) {
            return Err(Error::PositionOutOfRange {
                position: p,
                max_positions: self.config.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::Shape(format!(
                "token id {id} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let words = g.param(self.word_embeddings);
        let words = g.gather(words, ids)?;
        let pos = g.param(self.position_embeddings);
        let pos = g.gather(pos, positions)?;
        g.add(words, pos)
    }

    fn check_depth(&self, blocks_used: usize) -> Result<()> {
        if blocks_used == 0 || blocks_used > self.blocks.len() {
            return Err(Error::Config(format!(
                "cannot use {blocks_used} of {} encoder blocks",
                self.blocks.len()
            )));
        }
        Ok(())
    }

    /// States after `blocks_used` blocks for a sentence at positions `0..n`.
    pub fn forward(&self, g: &mut Graph, ids: &[usize], blocks_used: usize) -> Result<Var> {
        let positions: Vec<usize> = (0..ids.len()).collect();
        self.forward_at(g, ids, &positions, blocks_used)
    }

    pub fn forward_at(
        &self,
        g: &mut Graph,
        ids: &[usize],
        positions: &[usize],
        blocks_used: usize,
    ) -> Result<Var> {
        Ok(*self
            .trace(g, ids, positions, blocks_used)?
            .last()
            .expect("trace holds the embeddings"))
    }

    /// Activations at every depth: index 0 is the embedding sum, index `k`
    /// the output of block `k`.
    pub fn trace(
        &self,
        g: &mut Graph,
        ids: &[usize],
        positions: &[usize],
        blocks_used: usize,
    ) -> Result<Vec<Var>> {
        self.check_depth(blocks_used)?;
        if ids.len() != positions.len() {
            return Err(Error::Shape(format!(
                "{} ids for {} positions",
                ids.len(),
                positions.len()
            )));
        }
        let mut x = self.embed(g, ids, positions)?;
        let pattern = Arc::new(AttentionPattern::dense(ids.len(), ids.len()));
        let mut trace = vec![x];
        for block in &self.blocks[..blocks_used] {
            x = block.self_attend(g, x, pattern.clone())?;
            trace.push(x);
        }
        Ok(trace)
    }
}

/// Padded id matrix with a validity mask.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
}

impl TokenBatch {
    /// Right-pad `sequences` with `PAD` to a common length.
    pub fn pad(sequences: &[Vec<usize>]) -> Self {
        Self::pad_to(sequences, sequences.iter().map(Vec::len).max().unwrap_or(0))
    }

    pub fn pad_to(sequences: &[Vec<usize>], width: usize) -> Self {
        let mut ids = Vec::with_capacity(sequences.len());
        let mut mask = Vec::with_capacity(sequences.len());
        for s in sequences {
            let mut row = s.clone();
            row.resize(width.max(s.len()), crate::corpus::PAD);
            let mut m = vec![true; s.len()];
            m.resize(row.len(), false);
            ids.push(row);
            mask.push(m);
        }
        TokenBatch { ids, mask }
    }
}

/// Per-token contextual vectors; rows where `mask` is false are padding and
/// hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub values: Tensor,
    pub mask: Vec<bool>,
}

impl HiddenStates {
    pub fn unpadded(values: Tensor) -> Self {
        let mask = vec![true; values.rows()];
        HiddenStates { values, mask }
    }

    pub fn num_valid(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The valid rows, in order.
    pub fn valid_rows(&self) -> Tensor {
        let idx: Vec<usize> = (0..self.mask.len()).filter(|&i| self.mask[i]).collect();
        self.values.select_rows(&idx)
    }
}

/// A standalone encoder with its own parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub store: ParamStore,
    pub encoder: Encoder,
}

impl EncoderParams {
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, config, &mut rng)?;
        Ok(EncoderParams { store, encoder })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn encode(&self, batch: &TokenBatch) -> Result<Vec<HiddenStates>> {
        self.encode_truncated(batch, self.encoder.blocks.len())
    }

    pub fn encode_truncated(&self, batch: &TokenBatch, blocks_used: usize) -> Result<Vec<HiddenStates>> {
        if batch.ids.len() != batch.mask.len() {
            return Err(Error::Shape("id and mask row counts differ".into()));
        }
        batch
            .ids
            .iter()
            .zip(&batch.mask)
            .map(|(ids, mask)| self.encode_row(ids, mask, blocks_used))
            .collect()
    }

    fn encode_row(&self, ids: &[usize], mask: &[bool], blocks_used: usize) -> Result<HiddenStates> {
        if ids.len() != mask.len() {
            return Err(Error::Shape(format!("{} ids but {} mask entries", ids.len(), mask.len())));
        }
        self.encoder.check_positions(ids.len())?;
        let positions: Vec<usize> = (0..ids.len()).filter(|&i| mask[i]).collect();
        let valid: Vec<usize> = positions.iter().map(|&i| ids[i]).collect();
        let mut values = Tensor::zeros(ids.len(), self.encoder.config.hidden_dim);
        if !valid.is_empty() {
            let mut g = Graph::new(&self.store);
            let out = self.encoder.forward_at(&mut g, &valid, &positions, blocks_used)?;
            for (r, &p) in positions.iter().enumerate() {
                values.row_mut(p).copy_from_slice(g.value(out).row(r));
            }
        } else {
            self.encoder.check_depth(blocks_used)?;
        }
        Ok(HiddenStates {
            values,
            mask: mask.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> EncoderConfig {
        EncoderConfig::new(3, 16, 4, 32, 20, 12)
    }

    #[test]
    fn init_is_deterministic() {
        let a = EncoderParams::init(&config(), 3).unwrap();
        let b = EncoderParams::init(&config(), 3).unwrap();
        assert_eq!(a, b);
        let c = EncoderParams::init(&config(), 4).unwrap();
        assert_ne!(a.store, c.store);
    }

    #[test]
    fn init_values() {
        let p = EncoderParams::init(&config(), 1).unwrap();
        let gamma = p.store.get(p.encoder.blocks[0].attn_norm.gamma);
        assert!(gamma.data().iter().all(|&v| v == 1.0));
        let bias = p.store.get(p.encoder.blocks[0].query.bias);
        assert!(bias.data().iter().all(|&v| v == 0.0));
        let w = p.store.get(p.encoder.word_embeddings);
        assert!(w.data().iter().all(|v| v.abs() <= 0.04));
    }

    #[test]
    fn rejects_inconsistent_heads() {
        let mut c = config();
        c.head_dim = 5;
        assert!(matches!(EncoderParams::init(&c, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_is_a_function_of_its_id() {
        let p = EncoderParams::init(&config(), 0).unwrap();
        let a = p.encode(&TokenBatch::pad(&[vec![5]])).unwrap();
        let b = p.encode(&TokenBatch::pad(&[vec![5]])).unwrap();
        let c = p.encode(&TokenBatch::pad(&[vec![6]])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].values, c[0].values);
    }

    #[test]
    fn batch_order_does_not_matter() {
        let p = EncoderParams::init(&config(), 0).unwrap();
        let x = vec![vec![2, 3, 4], vec![7, 8], vec![9]];
        let fwd = p.encode(&TokenBatch::pad(&x)).unwrap();
        let rev: Vec<_> = x.iter().rev().cloned().collect();
        let bwd = p.encode(&TokenBatch::pad(&rev)).unwrap();
        for (a, b) in fwd.iter().zip(bwd.iter().rev()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn padding_leaves_valid_rows_unchanged() {
        let p = EncoderParams::init(&config(), 2).unwrap();
        let plain = p.encode(&TokenBatch::pad(&[vec![2, 3, 4]])).unwrap();
        let padded = p.encode(&TokenBatch::pad_to(&[vec![2, 3, 4]], 9)).unwrap();
        let a = plain[0].valid_rows();
        let b = padded[0].valid_rows();
        assert!(a.max_rel_diff(&b, 1e-12) < 1e-5);
        for r in 3..9 {
            assert!(padded[0].values.row(r).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn truncation_matches_intermediate_activations() {
        let p = EncoderParams::init(&config(), 9).unwrap();
        let ids = vec![3, 1, 4, 1, 5];
        let batch = TokenBatch::pad(&[ids.clone()]);
        let full = p.encode(&batch).unwrap();
        let same = p.encode_truncated(&batch, 3).unwrap();
        assert_eq!(full, same);

        let mut g = Graph::new(&p.store);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let trace = p.encoder.trace(&mut g, &ids, &positions, 3).unwrap();
        for k in 1..=3 {
            let truncated = p.encode_truncated(&batch, k).unwrap();
            assert!(truncated[0].values.max_abs_diff(g.value(trace[k])) < 1e-12);
        }
        assert!(matches!(p.encode_truncated(&batch, 0), Err(Error::Config(_))));
        assert!(p.encode_truncated(&batch, 4).is_err());
    }

    #[test]
    fn too_long_is_rejected() {
        let p = EncoderParams::init(&config(), 0).unwrap();
        let long = vec![2; 13];
        assert!(matches!(
            p.encode(&TokenBatch::pad(&[long])),
            Err(Error::PositionOutOfRange { .. })
        ));
    }
}
