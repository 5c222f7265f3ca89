//! Few-shot intent detection toolkit.
//!
//! Direct fine-tuning of a masked-LM encoder with a linear head, context
//! augmentation (generated unlabeled utterances consumed through a masked-LM
//! auxiliary loss), sequential born-again self-distillation, and a
//! multi-seed evaluation harness.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod contextgen;
pub mod corpus;
pub mod distillation;
pub mod numeric;
pub mod objectives;
pub mod provenance;
pub mod synthetic;
pub mod trainer;
pub mod evalharness;
pub mod cli;
