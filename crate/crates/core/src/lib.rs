//! Core library for GAR, a generative adversarial reasoner trainer.
//!
//! A reasoner produces step-by-step traces; a discriminator judges whether
//! individual reasoning slices are sound. Both are trained jointly with
//! group-relative policy optimization. This crate holds the pure logic:
//!
//! - [`slicer`]: lossless segmentation of traces into token-budgeted slices
//! - [`judge`]: soundness prompts and verdict parsing for an LLM discriminator
//! - [`rewards`]: the reward calculus for both policies
//! - [`grpo`]: group-relative advantage normalization and policy updates
//! - [`corpus`]: JSONL persistence, label balancing and provenance mixing
//! - [`toyenv`]: a desk-scale arithmetic environment that runs the whole
//!   training loop in seconds, with oracle-checkable slices
//! - [`analytics`]: per-trace entropy profiles and split summaries

pub mod analytics;
pub mod corpus;
pub mod grpo;
pub mod judge;
pub mod rewards;
pub mod slicer;
pub mod toyenv;

pub use judge::{JudgeConfig, Judgment};
pub use rewards::{RewardBreakdown, RewardWeights};
pub use slicer::{Provenance, Slice, SlicerConfig};
