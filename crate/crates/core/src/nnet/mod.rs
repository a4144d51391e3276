//! Minimal trainable transformer encoder and the differentiation machinery
//! the rest of the crate builds on.

pub mod checkpoint;
mod encoder;
pub mod graph;
pub mod layers;
mod params;

pub use encoder::{
    sinusoidal_table, Encoder, EncoderConfig, EncoderParams, HiddenStates, PositionInit, TokenBatch,
};
pub use graph::{softmax_rows, AttentionPattern, Graph, Var};
pub use layers::{Block, KeyValues, Linear, Norm};
pub use params::{truncated_normal, Gradients, ParamGroup, ParamId, ParamInfo, ParamKind, ParamStore};
