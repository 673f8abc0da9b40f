//! Corpus curation and sequence packing for multimodal instruction tuning.
//!
//! The pipeline stages live in their own modules and share the data model in
//! [`corpus`]:
//!
//! - [`similarity`]: source-vs-pool similarity scoring and duplicate removal
//! - [`filter`]: rule-based quality filters
//! - [`select`]: quota rules and K-means cluster-balanced subset selection
//! - [`format`]: answer-format normalization transforms
//! - [`augment`]: prompt-templated augmentation with an offline request/response protocol
//! - [`mix`]: stage composition and category distribution reporting
//! - [`pack`]: token-length estimation and knapsack packing
//! - [`pipeline`]: declarative multi-step runs over files

pub mod augment;
pub mod corpus;
pub mod error;
pub mod filter;
pub mod format;
pub mod mix;
pub mod pack;
pub mod pipeline;
mod numbers;
mod rng;
pub mod select;
pub mod similarity;

pub use corpus::{Category, ConversationTurn, ImageRef, Modality, Role, Sample};
pub use error::{Error, Result};

/// Library version, shared with the C ABI.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
