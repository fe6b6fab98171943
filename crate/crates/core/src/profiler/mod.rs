//! Static cost accounting and attention-policy metrics.

mod flops;
mod policy;

pub use flops::{layer_flops, profile_traversal, ConvCost, FlopsReport, LayerRecord};
pub use policy::{policy_metrics, union_area, PolicyMetrics};

use crate::error::Result;
use crate::nn::ModelSpec;

/// Trainable scalar count of a full network.
pub fn count_params(model: &ModelSpec) -> Result<usize> {
    model.param_count()
}
