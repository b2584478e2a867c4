//! Voucher-abuse detection on order graphs: self-supervised pre-training of a
//! two-layer GCN, followed by few-shot tuning through class context tokens.

mod error;

pub mod eval;
pub mod graph;
pub mod model_io;
pub mod nn;
pub mod pipeline;
pub mod pretrain;
pub mod prompt;
pub mod rng;
pub mod synth;

pub use error::{Error, Result};
pub use graph::OrderGraph;
pub use pretrain::{pretrain, PretrainConfig, PretrainedModel};
pub use prompt::{tune, LabeledSet, PromptMatrix, TuneConfig, TuneMode};
