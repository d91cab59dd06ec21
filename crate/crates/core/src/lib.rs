//! Toolkit for attribution-grounded multi-hop question answering.
//!
//! The pipeline builds attributed reasoning prompts, parses model output into
//! citation/quote chains, curates training data with rule-based filters,
//! generates multi-task fine-tuning examples and scores predictions.

pub mod chains;
pub mod corpus;
pub mod curation;
pub mod eval;
pub mod llmio;
pub mod metrics;
pub mod prompting;
pub mod report;
pub mod review;
pub mod seed;
pub mod taskgen;
pub mod text;

pub use chains::{AttributionChain, ChainError, Quote, ReasoningStep};
pub use corpus::{CorpusFormat, Document, QaInstance};
pub use prompting::PromptMode;
