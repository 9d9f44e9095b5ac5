//! Reasoning segmentation trained with group-relative policy optimization.
//!
//! A small autoregressive policy reads a referring query and a scene summary,
//! writes its reasoning inside `<think>` tags and a box-plus-points prompt
//! inside `<answer>` tags. Rule-based rewards score the response, GRPO
//! updates the policy, and a prompt-driven segmenter turns answers into
//! masks for gIoU/cIoU evaluation.

pub mod cli;
pub mod config;
pub mod dataprep;
pub mod geometry;
pub mod eval;
pub mod grpo;
pub mod parser;
pub mod policy;
pub mod rewards;
pub mod segmenter;
pub mod synth;
