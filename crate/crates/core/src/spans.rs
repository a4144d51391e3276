//! Candidate spans, span-marker queries and the pair-restricted attention
//! mask used to pack many candidates into one decoder pass.
//!
//! Packed layout: for `P` candidates the query rows are
//! `[q_i(0), q_j(0), q_i(1), q_j(1), ...]` and the key rows are those `2P`
//! markers followed by the `S` text states. Marker rows of pair `k` may read
//! rows `2k` and `2k + 1` and every unpadded text row, nothing else.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{AttentionPattern, Graph, ParamId, Var};
use crate::tensor::Tensor;

/// Additive score offset for a disallowed key in the dense form of the mask.
pub const MASKED_SCORE: f64 = -1e9;

/// Inclusive word range `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
}

impl SpanCandidate {
    pub fn new(start: usize, end: usize) -> Self {
        SpanCandidate { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &SpanCandidate) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// All `(i, j)` with `j - i + 1 <= max_span_len`, ordered by `i` then `j`.
pub fn enumerate_spans(seq_len: usize, max_span_len: usize) -> Vec<SpanCandidate> {
    let mut out = Vec::with_capacity(candidate_count(seq_len, max_span_len));
    for i in 0..seq_len {
        for j in i..seq_len.min(i + max_span_len) {
            out.push(SpanCandidate::new(i, j));
        }
    }
    out
}

/// `Σ_{len=1..min(K,L)} (L - len + 1)`.
pub fn candidate_count(seq_len: usize, max_span_len: usize) -> usize {
    (1..=max_span_len.min(seq_len))
        .map(|len| seq_len - len + 1)
        .sum()
}

/// Contiguous pair ranges of at most `chunk` candidates (`None`: one chunk).
pub fn chunk_ranges(num_pairs: usize, chunk: Option<usize>) -> Vec<Range<usize>> {
    let size = chunk.unwrap_or(num_pairs).max(1);
    (0..num_pairs)
        .step_by(size)
        .map(|s| s..(s + size).min(num_pairs))
        .collect()
}

/// The two learnable marker vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerParams {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl MarkerParams {
    /// From a `2 × d` table: row 0 is the start marker, row 1 the end marker.
    pub fn from_table(table: &Tensor) -> Result<Self> {
        if table.rows() != 2 {
            return Err(Error::Shape(format!(
                "marker table must have 2 rows, found {}",
                table.rows()
            )));
        }
        Ok(MarkerParams {
            start: table.row(0).to_vec(),
            end: table.row(1).to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.start.len()
    }
}

/// Which marker keys and text keys each packed query row may read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossMask {
    num_pairs: usize,
    text_valid: Vec<bool>,
}

impl CrossMask {
    pub fn rows(&self) -> usize {
        2 * self.num_pairs
    }

    pub fn cols(&self) -> usize {
        2 * self.num_pairs + self.text_valid.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn seq_len(&self) -> usize {
        self.text_valid.len()
    }

    pub fn allowed(&self, row: usize, col: usize) -> bool {
        let markers = 2 * self.num_pairs;
        if col < markers {
            col / 2 == row / 2
        } else {
            self.text_valid[col - markers]
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.rows())
            .map(|r| (0..self.cols()).map(|c| self.allowed(r, c)).collect())
            .collect()
    }

    /// Score offsets: `0` where allowed, [`MASKED_SCORE`] elsewhere.
    pub fn additive(&self) -> Tensor {
        let mut t = Tensor::zeros(self.rows(), self.cols());
        for r in 0..self.rows() {
            for c in 0..self.cols() {
                if !self.allowed(r, c) {
                    t.set(r, c, MASKED_SCORE);
                }
            }
        }
        t
    }

    pub fn pattern(&self) -> AttentionPattern {
        let markers = 2 * self.num_pairs;
        let text: Vec<usize> = (0..self.text_valid.len())
            .filter(|&t| self.text_valid[t])
            .map(|t| markers + t)
            .collect();
        AttentionPattern::from_rows(
            (0..self.rows()).map(|r| {
                let pair = r / 2;
                [2 * pair, 2 * pair + 1].into_iter().chain(text.iter().copied())
            }),
            self.cols(),
        )
        .expect("indices in range by construction")
    }
}

/// Mask for `candidates` over `seq_len` text rows; `padding` marks valid text
/// positions (`None`: all valid).
pub fn build_cross_mask(
    candidates: &[SpanCandidate],
    seq_len: usize,
    padding: Option<&[bool]>,
) -> Result<CrossMask> {
    let text_valid = match padding {
        Some(m) if m.len() != seq_len => {
            return Err(Error::Shape(format!(
                "padding mask of {} for sequence length {seq_len}",
                m.len()
            )))
        }
        Some(m) => m.to_vec(),
        None => vec![true; seq_len],
    };
    Ok(CrossMask {
        num_pairs: candidates.len(),
        text_valid,
    })
}

/// Joint mask of the levitated-marker encoder over `[text; markers]`: text
/// reads text only, marker rows read their own pair and the text.
pub fn levitated_mask(num_pairs: usize, text_valid: &[bool]) -> Vec<Vec<bool>> {
    let s = text_valid.len();
    let n = s + 2 * num_pairs;
    (0..n)
        .map(|r| {
            (0..n)
                .map(|c| {
                    if c < s {
                        text_valid[c] && (r >= s || text_valid[r])
                    } else {
                        r >= s && (r - s) / 2 == (c - s) / 2
                    }
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedSpanBatch {
    /// `2P × d` marker queries.
    pub queries: Tensor,
    /// Candidate index of every query row.
    pub pair_index: Vec<usize>,
    pub candidates: Vec<SpanCandidate>,
    pub cross_mask: CrossMask,
}

impl PackedSpanBatch {
    pub fn num_pairs(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

fn interleaved_positions(candidates: &[SpanCandidate]) -> Vec<usize> {
    candidates.iter().flat_map(|c| [c.start, c.end]).collect()
}

/// `q_i = m_start + pos(i)` and `q_j = m_end + pos(j)` for every candidate,
/// packed with an all-valid text mask of `seq_len`.
pub fn build_markers(
    candidates: &[SpanCandidate],
    markers: &MarkerParams,
    pos_table: &Tensor,
    seq_len: usize,
) -> Result<PackedSpanBatch> {
    if markers.dim() != pos_table.cols() || markers.end.len() != markers.dim() {
        return Err(Error::Shape(format!(
            "marker width {} vs positional width {}",
            markers.dim(),
            pos_table.cols()
        )));
    }
    let positions = interleaved_positions(candidates);
    if let Some(&p) = positions.iter().find(|&&p| p >= pos_table.rows()) {
        return Err(Error::PositionOutOfRange {
            position: p,
            max_positions: pos_table.rows(),
        });
    }
    let mut queries = pos_table.select_rows(&positions);
    for r in 0..queries.rows() {
        let m = if r % 2 == 0 { &markers.start } else { &markers.end };
        for (q, v) in queries.row_mut(r).iter_mut().zip(m) {
            *q += v;
        }
    }
    Ok(PackedSpanBatch {
        queries,
        pair_index: (0..2 * candidates.len()).map(|r| r / 2).collect(),
        candidates: candidates.to_vec(),
        cross_mask: build_cross_mask(candidates, seq_len, None)?,
    })
}

/// Graph-level marker queries; gradients reach both the marker table and the
/// positional table.
pub fn marker_queries(
    g: &mut Graph,
    marker_table: ParamId,
    position_table: ParamId,
    candidates: &[SpanCandidate],
) -> Result<Var> {
    let positions = interleaved_positions(candidates);
    let max = g.params().get(position_table).rows();
    if let Some(&p) = positions.iter().find(|&&p| p >= max) {
        return Err(Error::PositionOutOfRange {
            position: p,
            max_positions: max,
        });
    }
    let kinds: Vec<usize> = (0..positions.len()).map(|r| r % 2).collect();
    let pos = g.param(position_table);
    let pos = g.gather(pos, &positions)?;
    let table = g.param(marker_table);
    let m = g.gather(table, &kinds)?;
    g.add(pos, m)
}

/// The dense-text, pair-restricted pattern shared by every query chunk.
pub fn pair_pattern(num_pairs: usize, seq_len: usize) -> Arc<AttentionPattern> {
    Arc::new(
        CrossMask {
            num_pairs,
            text_valid: vec![true; seq_len],
        }
        .pattern(),
    )
}
