//! Few-shot classification of rare classes from an unlabeled base dataset:
//! contrastive pretraining with a momentum key encoder and a queue of
//! negatives, a logistic-regression baseline on frozen embeddings, and
//! pseudo-label self-distillation into a born-again student.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod config;
pub mod data;
pub mod distill;
pub mod error;
pub mod eval;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod rng;

pub use error::{Error, Result};
