//! Top-down scale-space traversal.

mod config;
mod engine;
mod select;
mod tree;

pub use config::{SelectionMode, SeqProbMode, TraversalConfig};
pub use engine::{argmax, traverse, Prediction, TraversalOutput, TraverseOptions};
pub use select::{sample_without_replacement, select_locations, top_k, Forced, Sampler, Selector, TopK};
pub use tree::{rank_log_terms, selection_log_prob, sequence_log_prob, Distribution, LocationTree, Node};
