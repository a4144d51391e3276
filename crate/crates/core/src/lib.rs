//! Span-based named entity recognition with a lightweight span decoder.
//!
//! The crate implements four strategies over one small trainable transformer
//! encoder:
//!
//! * `token`: BIO token classification.
//! * `plmarker`: levitated marker pairs processed through every encoder block.
//! * `spandec`: marker pairs introduced only in a cross-attention span decoder
//!   on top of a truncated encoder.
//! * `sf_spandec`: `spandec` plus a per-token entity filter that prunes
//!   candidate spans before decoding.
//!
//! Alongside the models sit an analytical FLOPs/parameter cost model
//! ([`flops`]), entity-level evaluation and a throughput harness ([`eval`]).

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod flops;
pub mod heads;
pub mod infer;
pub mod models;
pub mod nnet;
pub mod spans;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
