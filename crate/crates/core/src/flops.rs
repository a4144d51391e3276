//! Closed-form FLOPs and parameter counts. One multiply-accumulate counts as
//! two FLOPs; embedding lookups, heads, activations and normalisation are
//! left out unless [`FlopsOptions::include_overhead`] is set.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelConfig, Strategy};
use crate::nnet::{Block, EncoderConfig};
use crate::spans::candidate_count;

/// Transformer shape plus sequence and marker sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsParams {
    pub blocks: u64,
    pub seq_len: u64,
    /// Marker tokens (two per candidate pair).
    pub markers: u64,
    pub hidden: u64,
    pub heads: u64,
    pub ffn: u64,
}

impl FlopsParams {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return Err(Error::Config("blocks, hidden, heads and ffn must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden / self.heads
    }

    pub fn with_markers(self, markers: u64) -> Self {
        FlopsParams { markers, ..self }
    }
}

/// Self-attention per block: `8·S·H² + 4·S²·H`.
pub fn attn_text_flops(p: &FlopsParams) -> u64 {
    8 * p.seq_len * p.hidden * p.hidden + 4 * p.seq_len * p.seq_len * p.hidden
}

/// Feed-forward per block over the text: `4·S·H·F`.
pub fn ffn_text_flops(p: &FlopsParams) -> u64 {
    4 * p.seq_len * p.hidden * p.ffn
}

/// Marker cross-attention per block: `8·M·H² + 4·S·M·H`.
pub fn attn_marker_flops(p: &FlopsParams) -> u64 {
    8 * p.markers * p.hidden * p.hidden + 4 * p.seq_len * p.markers * p.hidden
}

/// Feed-forward per block over the markers: `4·M·H·F`.
pub fn ffn_marker_flops(p: &FlopsParams) -> u64 {
    4 * p.markers * p.hidden * p.ffn
}

/// How a marker count given on the command line is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerConvention {
    /// The count is marker tokens, used as is.
    #[default]
    Tokens,
    /// The count is candidate pairs; two marker tokens each.
    Pairs,
}

impl MarkerConvention {
    pub fn tokens(self, count: u64) -> u64 {
        match self {
            MarkerConvention::Tokens => count,
            MarkerConvention::Pairs => 2 * count,
        }
    }
}

impl FromStr for MarkerConvention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens" => Ok(MarkerConvention::Tokens),
            "pairs" => Ok(MarkerConvention::Pairs),
            other => Err(Error::Config(format!("unknown marker convention `{other}`"))),
        }
    }
}

/// Candidate count for `(seq_len, max_span_len)`, the value plugged in as
/// the marker count by default.
pub fn default_markers(seq_len: u64, max_span_len: u64) -> u64 {
    candidate_count(seq_len as usize, max_span_len as usize) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlopsOptions {
    /// Add a rough estimate for layer norms (5 FLOPs per element), GELU
    /// (8 per element) and the attention softmax (3 per score).
    pub include_overhead: bool,
}

fn overhead(p: &FlopsParams, queries: u64, keys: u64) -> u64 {
    queries * (2 * 5 * p.hidden + 8 * p.ffn) + 3 * p.heads * queries * keys
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyCost {
    pub strategy: Strategy,
    pub encoder_blocks: u64,
    pub decoder_blocks: u64,
    pub retention: f64,
    /// Marker tokens after applying `retention`.
    pub markers: u64,
    pub flops: u64,
    pub gflops: f64,
}

/// Default block split for a model with `blocks` layers.
pub fn default_blocks(strategy: Strategy, blocks: u64) -> (u64, u64) {
    if strategy.uses_decoder() {
        (blocks.saturating_sub(1).max(1), 1)
    } else {
        (blocks, 0)
    }
}

/// Total forward FLOPs of one sentence under `strategy`.
///
/// Text blocks cost `attn_text + ffn_text`, marker blocks
/// `attn_marker + ffn_marker`. PL-Marker pays both in all `L` blocks; the
/// decoder strategies pay text cost in the encoder blocks and marker cost in
/// the decoder blocks, the span-filter one with `round(r·M)` markers.
pub fn strategy_gflops(
    strategy: Strategy,
    p: &FlopsParams,
    encoder_blocks: u64,
    decoder_blocks: u64,
    retention: f64,
    options: FlopsOptions,
) -> Result<StrategyCost> {
    p.validate()?;
    if !(retention > 0.0 && retention <= 1.0) {
        return Err(Error::Config(format!("retention {retention} outside (0, 1]")));
    }
    if retention != 1.0 && strategy != Strategy::SfSpandec {
        return Err(Error::Config(format!("{strategy} has no span filter; retention must be 1")));
    }
    match strategy {
        Strategy::Token | Strategy::Plmarker => {
            if encoder_blocks != p.blocks || decoder_blocks != 0 {
                return Err(Error::Config(format!(
                    "{strategy} runs all {} blocks and no decoder",
                    p.blocks
                )));
            }
        }
        Strategy::Spandec | Strategy::SfSpandec => {
            if encoder_blocks == 0 || decoder_blocks == 0 {
                return Err(Error::Config(format!(
                    "{strategy} needs at least one encoder and one decoder block"
                )));
            }
        }
    }
    let markers = match strategy {
        Strategy::Token => 0,
        Strategy::SfSpandec => (retention * p.markers as f64).round() as u64,
        Strategy::Plmarker | Strategy::Spandec => p.markers,
    };
    let mp = p.with_markers(markers);
    let text = attn_text_flops(&mp) + ffn_text_flops(&mp);
    let marker = attn_marker_flops(&mp) + ffn_marker_flops(&mp);
    let (text_extra, marker_extra) = if options.include_overhead {
        (
            overhead(&mp, mp.seq_len, mp.seq_len),
            overhead(&mp, markers, mp.seq_len + 2),
        )
    } else {
        (0, 0)
    };
    let flops = match strategy {
        Strategy::Token => p.blocks * (text + text_extra),
        Strategy::Plmarker => p.blocks * (text + marker + text_extra + marker_extra),
        Strategy::Spandec | Strategy::SfSpandec => {
            encoder_blocks * (text + text_extra) + decoder_blocks * (marker + marker_extra)
        }
    };
    Ok(StrategyCost {
        strategy,
        encoder_blocks,
        decoder_blocks,
        retention,
        markers,
        flops,
        gflops: flops as f64 / 1e9,
    })
}

/// Named transformer shapes for the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Minilm,
    BertB,
    RobertaL,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Minilm, Preset::BertB, Preset::RobertaL];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Minilm => "minilm",
            Preset::BertB => "bert-b",
            Preset::RobertaL => "roberta-l",
        }
    }

    /// `(blocks, hidden, heads, ffn)`.
    pub fn shape(self) -> (u64, u64, u64, u64) {
        match self {
            Preset::Minilm => (12, 384, 12, 1536),
            Preset::BertB => (12, 768, 12, 3072),
            Preset::RobertaL => (24, 1024, 16, 4096),
        }
    }

    pub fn vocab_size(self) -> u64 {
        match self {
            Preset::Minilm | Preset::BertB => 30_522,
            Preset::RobertaL => 50_265,
        }
    }

    pub fn params(self, seq_len: u64, markers: u64) -> FlopsParams {
        let (blocks, hidden, heads, ffn) = self.shape();
        FlopsParams {
            blocks,
            seq_len,
            markers,
            hidden,
            heads,
            ffn,
        }
    }

    pub fn encoder_config(self) -> EncoderConfig {
        let (blocks, hidden, heads, ffn) = self.shape();
        EncoderConfig::new(
            blocks as usize,
            hidden as usize,
            heads as usize,
            ffn as usize,
            self.vocab_size() as usize,
            512,
        )
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "minilm" => Ok(Preset::Minilm),
            "bert-b" | "bert-base" | "bert_b" => Ok(Preset::BertB),
            "roberta-l" | "roberta-large" | "roberta_l" => Ok(Preset::RobertaL),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// Word plus position tables.
    pub embeddings: usize,
    pub per_block: usize,
    pub encoder: usize,
    pub decoder: usize,
    /// Markers, classifiers and filter head (0 from [`param_count`]).
    pub heads: usize,
    pub total: usize,
}

/// Embeddings plus `encoder_blocks + decoder_blocks` blocks, heads excluded.
pub fn param_count(
    config: &EncoderConfig,
    encoder_blocks: usize,
    decoder_blocks: usize,
    vocab_size: usize,
) -> ParamCount {
    let h = config.hidden_dim;
    let embeddings = vocab_size * h + config.max_positions * h;
    let per_block = Block::num_scalars(h, config.ffn_dim);
    let encoder = encoder_blocks * per_block;
    let decoder = decoder_blocks * per_block;
    ParamCount {
        embeddings,
        per_block,
        encoder,
        decoder,
        heads: 0,
        total: embeddings + encoder + decoder,
    }
}

/// Every trainable scalar of a model built from `config`. Unused trailing
/// encoder blocks of the decoder strategies are still allocated and counted
/// in `encoder`.
pub fn model_param_count(config: &ModelConfig) -> ParamCount {
    let enc = &config.encoder;
    let h = enc.hidden_dim;
    let mut count = param_count(enc, enc.num_blocks, config.decoder_blocks, enc.vocab_size);
    let types = config.labels.num_types();
    let span_classifier = if config.classifier_norm { 2 * h } else { 0 } + 2 * h * types + types;
    count.heads = match config.strategy {
        Strategy::Token => h * config.labels.num_bio() + config.labels.num_bio(),
        Strategy::Plmarker | Strategy::Spandec => 2 * h + span_classifier,
        Strategy::SfSpandec => 2 * h + span_classifier + 2 * h + 2,
    };
    count.total += count.heads;
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub config: String,
    pub cost: StrategyCost,
}

pub fn flops_text_table(rows: &[FlopsRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                r.cost.strategy.to_string(),
                format!("{}+{}", r.cost.encoder_blocks, r.cost.decoder_blocks),
                format!("{:.2}", r.cost.retention),
                r.cost.markers.to_string(),
                r.cost.flops.to_string(),
                format!("{:.1}", r.cost.gflops),
                format!("{:.3}", r.cost.gflops),
            ]
        })
        .collect();
    crate::eval::text_table(
        &["config", "strategy", "blocks", "r", "markers", "flops", "gflops", "gflops_exact"],
        &body,
    )
}

pub fn flops_csv(rows: &[FlopsRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "config",
        "strategy",
        "encoder_blocks",
        "decoder_blocks",
        "retention",
        "markers",
        "flops",
        "gflops",
    ])
    .map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.config.clone(),
            r.cost.strategy.to_string(),
            r.cost.encoder_blocks.to_string(),
            r.cost.decoder_blocks.to_string(),
            r.cost.retention.to_string(),
            r.cost.markers.to_string(),
            r.cost.flops.to_string(),
            format!("{:.6}", r.cost.gflops),
        ])
        .map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::LabelSet;
    use crate::models::Model;
    use proptest::prelude::{prop_assert, proptest};

    fn minilm() -> FlopsParams {
        Preset::Minilm.params(44, 324)
    }

    fn cost(s: Strategy, p: &FlopsParams, e: u64, d: u64, r: f64) -> StrategyCost {
        strategy_gflops(s, p, e, d, r, FlopsOptions::default()).unwrap()
    }

    #[test]
    fn closed_forms() {
        let p = minilm();
        assert_eq!(attn_text_flops(&p), 54_878_208);
        assert_eq!(ffn_text_flops(&p), 103_809_024);
        assert_eq!(attn_marker_flops(&p), 404_103_168);
        assert_eq!(ffn_marker_flops(&p), 764_411_904);
        let one = FlopsParams {
            blocks: 1,
            seq_len: 1,
            markers: 0,
            hidden: 1,
            heads: 1,
            ffn: 1,
        };
        assert_eq!(attn_text_flops(&one), 12);
        assert_eq!(attn_marker_flops(&one), 0);
        assert_eq!(ffn_marker_flops(&one), 0);
        let text_as_markers = FlopsParams { seq_len: 324, ..p };
        assert_eq!(ffn_marker_flops(&p), ffn_text_flops(&text_as_markers));
    }

    #[test]
    fn plmarker_minus_token_is_marker_cost() {
        let p = minilm();
        let t = cost(Strategy::Token, &p, 12, 0, 1.0).flops;
        let m = cost(Strategy::Plmarker, &p, 12, 0, 1.0).flops;
        assert_eq!(m - t, 12 * (attn_marker_flops(&p) + ffn_marker_flops(&p)));
    }

    #[test]
    fn full_retention_matches_spandec() {
        let p = minilm();
        let a = cost(Strategy::Spandec, &p, 11, 1, 1.0);
        let b = cost(Strategy::SfSpandec, &p, 11, 1, 1.0);
        assert_eq!(a.flops, b.flops);
    }

    #[test]
    fn retention_rounds_marker_count() {
        let c = cost(Strategy::SfSpandec, &minilm(), 11, 1, 0.15);
        assert_eq!(c.markers, 49);
    }

    #[test]
    fn invalid_combinations() {
        let p = minilm();
        let o = FlopsOptions::default();
        assert!(strategy_gflops(Strategy::Token, &p, 12, 1, 1.0, o).is_err());
        assert!(strategy_gflops(Strategy::Plmarker, &p, 11, 0, 1.0, o).is_err());
        assert!(strategy_gflops(Strategy::Spandec, &p, 12, 0, 1.0, o).is_err());
        assert!(strategy_gflops(Strategy::Spandec, &p, 11, 1, 0.5, o).is_err());
        assert!(strategy_gflops(Strategy::SfSpandec, &p, 11, 1, 0.0, o).is_err());
        let bad = FlopsParams { heads: 5, ..p };
        assert!(strategy_gflops(Strategy::Token, &bad, 12, 0, 1.0, o).is_err());
    }

    #[test]
    fn overhead_only_adds() {
        let p = minilm();
        let on = FlopsOptions {
            include_overhead: true,
        };
        for s in Strategy::ALL {
            let (e, d) = default_blocks(s, 12);
            let base = cost(s, &p, e, d, 1.0).flops;
            let more = strategy_gflops(s, &p, e, d, 1.0, on).unwrap().flops;
            assert!(more > base);
            assert!((more - base) as f64 / (base as f64) < 0.05);
        }
    }

    #[test]
    fn marker_conventions() {
        assert_eq!(default_markers(44, 8), 324);
        assert_eq!(MarkerConvention::Pairs.tokens(324), 648);
        assert_eq!(MarkerConvention::Tokens.tokens(324), 324);
    }

    #[test]
    fn zero_blocks_is_embeddings_only() {
        let c = param_count(&Preset::Minilm.encoder_config(), 0, 0, 30_522);
        assert_eq!(c.total, c.embeddings);
        assert_eq!(c.embeddings, (30_522 + 512) * 384);
    }

    #[test]
    fn model_count_matches_allocated_parameters() {
        let labels = LabelSet::new(&["A", "B", "C"]).unwrap();
        for s in Strategy::ALL {
            let enc = EncoderConfig::new(3, 16, 4, 24, 50, 20);
            let mut cfg = ModelConfig::new(s, enc, labels.clone());
            cfg.classifier_norm = s != Strategy::Spandec;
            let m = Model::init(cfg.clone(), 0).unwrap();
            assert_eq!(model_param_count(&cfg).total, m.num_parameters(), "{s}");
        }
    }

    #[test]
    fn csv_and_text_render() {
        let rows = vec![FlopsRow {
            config: "minilm".into(),
            cost: cost(Strategy::Token, &minilm(), 12, 0, 1.0),
        }];
        let csv = flops_csv(&rows).unwrap();
        assert!(csv.starts_with("config,strategy,"));
        assert!(csv.contains("minilm,token,12,0,1,0,"));
        assert!(flops_text_table(&rows).contains("1.9"));
    }

    proptest! {
        #[test]
        fn monotone_in_every_size(
            seq in 1u64..64, markers in 1u64..400, heads in 1u64..4, hd in 1u64..32,
            ffn in 1u64..256, enc in 1u64..6, dec in 1u64..4,
        ) {
            let p = FlopsParams { blocks: enc, seq_len: seq, markers, hidden: heads * hd, heads, ffn };
            let o = FlopsOptions::default();
            let f = |s: Strategy, p: &FlopsParams, e: u64, d: u64| strategy_gflops(s, p, e, d, 1.0, o).unwrap().flops;
            for s in Strategy::ALL {
                let (e, d) = if s.uses_decoder() { (enc, dec) } else { (enc, 0) };
                let base = f(s, &p, e, d);
                let longer = FlopsParams { seq_len: seq + 1, ..p };
                let wider = FlopsParams { hidden: (hd + 1) * heads, ..p };
                let bigger_ffn = FlopsParams { ffn: ffn + 1, ..p };
                let more_markers = FlopsParams { markers: markers + 1, ..p };
                prop_assert!(f(s, &longer, e, d) > base);
                prop_assert!(f(s, &wider, e, d) > base);
                prop_assert!(f(s, &bigger_ffn, e, d) > base);
                if s != Strategy::Token {
                    prop_assert!(f(s, &more_markers, e, d) > base);
                }
                if s.uses_decoder() {
                    prop_assert!(f(s, &p, e + 1, d) > base);
                    prop_assert!(f(s, &p, e, d + 1) > base);
                } else {
                    let q = FlopsParams { blocks: enc + 1, ..p };
                    prop_assert!(f(s, &q, enc + 1, 0) > base);
                }
            }
        }
    }
}
