//! Aggregation of the per-node feature vectors into one vector.

use rand::Rng;

use super::layers::{se_width, Dense, SqueezeExcite};
use super::params::{Graph, ParamStore};
use crate::autodiff::{Activation, Var};
use crate::error::{contract_err, Result};
use crate::profiler::ConvCost;
use crate::tensor::{Real, Tensor};

pub const WEIGHTING_SE_RATIO: Real = 0.25;

/// Learned convex combination: squeeze-and-excitation across the `N` vectors,
/// a shared 1×1 logit projection, softmax.
#[derive(Clone, Debug)]
pub struct FeatureWeighting {
    se: SqueezeExcite,
    pub logit: Dense,
    feature_dim: usize,
}

impl FeatureWeighting {
    /// The logit projection starts at zero so an untrained module averages.
    pub fn new(feature_dim: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let se = SqueezeExcite::new(
            store,
            "weighting.se",
            feature_dim,
            se_width(feature_dim, WEIGHTING_SE_RATIO),
            rng,
        );
        let logit = Dense::new(store, "weighting.logit", feature_dim, 1, Activation::Identity, rng);
        store.data_mut(logit.weight).iter_mut().for_each(|v| *v = 0.0);
        Self { se, logit, feature_dim }
    }

    pub fn param_count(feature_dim: usize) -> usize {
        let r = se_width(feature_dim, WEIGHTING_SE_RATIO);
        2 * feature_dim * r + r + feature_dim + feature_dim + 1
    }

    /// Cost independent of the number of vectors.
    pub fn fixed_costs(feature_dim: usize) -> Vec<ConvCost> {
        let r = se_width(feature_dim, WEIGHTING_SE_RATIO);
        vec![
            ConvCost::new("weighting.se.squeeze", feature_dim, 1, 1, 1, r),
            ConvCost::new("weighting.se.excite", r, 1, 1, 1, feature_dim),
        ]
    }

    /// Cost of scoring one vector.
    pub fn per_vector_cost(feature_dim: usize) -> ConvCost {
        ConvCost::new("weighting.logit", feature_dim, 1, 1, 1, 1)
    }

    pub fn forward(&self, g: &mut Graph, features: &[Var]) -> Result<(Var, Var)> {
        let stacked = stack(g, features, self.feature_dim)?;
        let excited = self.se.forward(g, stacked)?;
        let logits = self.logit.forward(g, excited)?;
        let flat = g.reshape(logits, [features.len()])?;
        let weights = g.softmax(flat)?;
        let agg = weighted_sum(g, weights, stacked)?;
        Ok((weights, agg))
    }
}

fn stack(g: &mut Graph, features: &[Var], feature_dim: usize) -> Result<Var> {
    if features.is_empty() {
        return Err(contract_err!("feature aggregation needs at least one vector"));
    }
    let stacked = g.concat_rows(features)?;
    if g.shape(stacked) != [features.len(), feature_dim] {
        return Err(contract_err!(
            "expected {} vectors of width {}, got {:?}",
            features.len(),
            feature_dim,
            g.shape(stacked)
        ));
    }
    Ok(stacked)
}

fn weighted_sum(g: &mut Graph, weights: Var, stacked: Var) -> Result<Var> {
    let n = g.shape(weights)[0];
    let row = g.reshape(weights, [1, n])?;
    let agg = g.matmul(row, stacked)?;
    let d = g.shape(stacked)[1];
    g.reshape(agg, [d])
}

/// Plain mean with its (constant, uniform) weights.
pub fn mean_aggregate(g: &mut Graph, features: &[Var], feature_dim: usize) -> Result<(Var, Var)> {
    let stacked = stack(g, features, feature_dim)?;
    let n = features.len();
    let weights = g.constant(Tensor::full([n], 1.0 / n as Real));
    let agg = weighted_sum(g, weights, stacked)?;
    Ok((weights, agg))
}
