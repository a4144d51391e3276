//! Affine maps, layer norms and the pre-norm transformer block shared by the
//! encoder, the PL-Marker baseline and the span decoder.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::nnet::graph::{AttentionPattern, Graph, Var};
use crate::nnet::params::{truncated_normal, ParamGroup, ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        let weight = store.insert(
            format!("{name}.weight"),
            group,
            ParamKind::Weight,
            truncated_normal(rng, inputs, outputs, INIT_STD),
        )?;
        let bias = store.insert(
            format!("{name}.bias"),
            group,
            ParamKind::Bias,
            Tensor::zeros(1, outputs),
        )?;
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let h = g.matmul(x, w)?;
        let b = g.param(self.bias);
        g.add_row(h, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize, group: ParamGroup) -> Result<Self> {
        let gamma = store.insert(
            format!("{name}.gamma"),
            group,
            ParamKind::Norm,
            Tensor::filled(1, width, 1.0),
        )?;
        let beta = store.insert(
            format!("{name}.beta"),
            group,
            ParamKind::Norm,
            Tensor::zeros(1, width),
        )?;
        Ok(Norm { gamma, beta })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, gamma, beta)
    }
}

/// Key/value projections of a normalized stream.
#[derive(Debug, Clone, Copy)]
pub struct KeyValues {
    pub keys: Var,
    pub values: Var,
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `x + FFN(LN(x))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub attn_norm: Norm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ffn_norm: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub heads: usize,
}

impl Block {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        hidden: usize,
        ffn: usize,
        heads: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(Block {
            attn_norm: Norm::init(store, &format!("{name}.attn_norm"), hidden, group)?,
            query: Linear::init(store, rng, &format!("{name}.attn.query"), hidden, hidden, group)?,
            key: Linear::init(store, rng, &format!("{name}.attn.key"), hidden, hidden, group)?,
            value: Linear::init(store, rng, &format!("{name}.attn.value"), hidden, hidden, group)?,
            output: Linear::init(store, rng, &format!("{name}.attn.output"), hidden, hidden, group)?,
            ffn_norm: Norm::init(store, &format!("{name}.ffn_norm"), hidden, group)?,
            ffn_in: Linear::init(store, rng, &format!("{name}.ffn.in"), hidden, ffn, group)?,
            ffn_out: Linear::init(store, rng, &format!("{name}.ffn.out"), ffn, hidden, group)?,
            heads,
        })
    }

    /// `LN(x)` and its key/value projections.
    pub fn key_values(&self, g: &mut Graph, x: Var) -> Result<(Var, KeyValues)> {
        let normed = self.attn_norm.forward(g, x)?;
        let keys = self.key.forward(g, normed)?;
        let values = self.value.forward(g, normed)?;
        Ok((normed, KeyValues { keys, values }))
    }

    fn feed_forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.ffn_norm.forward(g, x)?;
        let h = self.ffn_in.forward(g, h)?;
        let h = g.gelu(h);
        let h = self.ffn_out.forward(g, h)?;
        g.add(x, h)
    }

    fn attend_and_mix(
        &self,
        g: &mut Graph,
        x: Var,
        normed: Var,
        kv: KeyValues,
        pattern: Arc<AttentionPattern>,
    ) -> Result<Var> {
        let q = self.query.forward(g, normed)?;
        let a = g.attention(q, kv.keys, kv.values, self.heads, pattern)?;
        let a = self.output.forward(g, a)?;
        let x = g.add(x, a)?;
        self.feed_forward(g, x)
    }

    /// Self-attention over `x` restricted by `pattern` (`n × n`).
    pub fn self_attend(&self, g: &mut Graph, x: Var, pattern: Arc<AttentionPattern>) -> Result<Var> {
        Ok(self.text_step(g, x, pattern)?.0)
    }

    /// Self-attention step that also returns the key/values it computed, so
    /// marker streams can read the same keys without touching the text.
    pub fn text_step(
        &self,
        g: &mut Graph,
        x: Var,
        pattern: Arc<AttentionPattern>,
    ) -> Result<(Var, KeyValues)> {
        let (normed, kv) = self.key_values(g, x)?;
        Ok((self.attend_and_mix(g, x, normed, kv, pattern)?, kv))
    }

    /// Marker stream update: markers read their own projections stacked on
    /// top of `text` key/values, keys laid out as `[markers; text]`.
    pub fn attend_markers(
        &self,
        g: &mut Graph,
        markers: Var,
        text: KeyValues,
        pattern: Arc<AttentionPattern>,
    ) -> Result<Var> {
        let (normed, own) = self.key_values(g, markers)?;
        let keys = g.concat_rows(&[own.keys, text.keys])?;
        let values = g.concat_rows(&[own.values, text.values])?;
        self.attend_and_mix(g, markers, normed, KeyValues { keys, values }, pattern)
    }

    pub fn num_scalars(hidden: usize, ffn: usize) -> usize {
        4 * (hidden * hidden + hidden) + (hidden * ffn + ffn) + (ffn * hidden + hidden) + 4 * hidden
    }
}
