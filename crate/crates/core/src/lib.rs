//! Desk-scale self-supervised adaptive pre-training (SAPT) for spoken
//! language identification: synthetic corpus generation, a small transformer
//! encoder with exact hand-written gradients, the pretrain -> SAPT ->
//! fine-tune pipeline, a few-shot evaluation protocol, and metric reporting.

// The forward/backward math is written with explicit indices so each line
// matches its derivation; iterator rewrites would obscure the index algebra.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evalreport;
pub mod experiment;
pub mod fewshot;
pub mod math;
pub mod objective;
pub mod pipeline;
pub mod rng;

pub use error::{Result, SaptError};
