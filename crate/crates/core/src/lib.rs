//! Identifier-level input denoising for code classifiers.
//!
//! A deployed classifier is left untouched. Each incoming snippet is checked
//! for a likely misprediction by voting over randomly renamed neighbours;
//! flagged snippets get their most attended identifiers masked and refilled
//! by a model trained only on inputs the classifier gets right, until the
//! prediction changes or the ranking is exhausted.
//!
//! - [`code`]: parsing, tokens, identifier sets, renaming and masking
//! - [`backend`]: classifier and mask-filling contracts, the built-in toy
//!   backend and the line-delimited protocol for external backends
//! - [`detector`]: smoothing and uncertainty based misprediction detection
//! - [`localizer`]: attention-based identifier ranking
//! - [`cleanser`]: the greedy mask-and-refill loop
//! - [`harness`]: corpora, configuration, noise injection, evaluation

pub mod backend;
pub mod cleanser;
pub mod code;
pub mod detector;
pub mod harness;
pub mod localizer;
pub(crate) mod seed;
