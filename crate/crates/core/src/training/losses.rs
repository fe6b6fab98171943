//! Surrogate losses whose gradients are the (negated) learning-rule updates.
//!
//! Advantages `R - b` enter as constants; only log-probabilities carry
//! gradient into the location module.

use super::baseline::Baselines;
use crate::autodiff::Var;
use crate::error::{config_err, contract_err, Result};
use crate::nn::Graph;
use crate::tensor::Real;
use crate::traversal::{argmax, TraversalOutput};

#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the policy terms.
    pub lambda_f: Real,
    /// Share of the classification update given to the whole sequence.
    pub lambda_c: Real,
    /// Share of the policy update given to the whole sequence.
    pub lambda_r: Real,
    pub lambda_con: Real,
    /// Similarity threshold of the contrastive term.
    pub alpha: Real,
    /// Monte-Carlo samples per image.
    pub samples: usize,
    /// Count the root as one of the per-location predictions.
    pub include_root: bool,
    /// Levels (1-based index into the mask) whose nodes contribute per-location terms.
    pub level_mask: Option<Vec<bool>>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_f: 0.1,
            lambda_c: 1.0,
            lambda_r: 1.0,
            lambda_con: 0.0,
            alpha: 0.4,
            samples: 1,
            include_root: false,
            level_mask: None,
        }
    }
}

impl LossWeights {
    pub fn per_feature(lambda: Real) -> Self {
        Self { lambda_c: lambda, lambda_r: lambda, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_c", self.lambda_c), ("lambda_r", self.lambda_r)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err!("{name} = {v} outside [0, 1]"));
            }
        }
        if self.lambda_con < 0.0 || !self.lambda_f.is_finite() {
            return Err(config_err!("loss weights must be finite and lambda_con non-negative"));
        }
        if self.samples == 0 {
            return Err(config_err!("need at least one sample per image"));
        }
        Ok(())
    }

    fn level_enabled(&self, level: usize) -> bool {
        match &self.level_mask {
            Some(mask) => mask.get(level - 1).copied().unwrap_or(false),
            None => true,
        }
    }
}

/// Correctness indicators of one traversal.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RewardRecord {
    pub sequence: Real,
    pub locations: Vec<Real>,
}

fn indicator(g: &Graph, logits: Var, label: usize) -> Real {
    if argmax(g.value(logits).data()) == label {
        1.0
    } else {
        0.0
    }
}

/// `-log p(y|l) - λ_f·(R - b)·log p(l)` for one traversal.
pub fn surrogate_base(
    g: &mut Graph,
    out: &TraversalOutput,
    label: usize,
    b: Real,
    w: &LossWeights,
) -> Result<(Var, RewardRecord)> {
    let reward = indicator(g, out.logits, label);
    let ce = g.cross_entropy(out.logits, label)?;
    let policy = g.scale(out.seq_log_prob, -w.lambda_f * (reward - b));
    let loss = g.add(ce, policy)?;
    Ok((loss, RewardRecord { sequence: reward, locations: Vec::new() }))
}

/// Per-feature regularized surrogate for one traversal; needs per-node logits.
pub fn surrogate_per_feature(
    g: &mut Graph,
    out: &TraversalOutput,
    label: usize,
    baselines: &Baselines,
    w: &LossWeights,
) -> Result<(Var, RewardRecord)> {
    let r_s = indicator(g, out.logits, label);
    let ce = g.cross_entropy(out.logits, label)?;
    let seq_ce = g.scale(ce, w.lambda_c);
    let seq_policy = g.scale(out.seq_log_prob, -w.lambda_f * w.lambda_r * (r_s - baselines.sequence.b));
    let mut terms = vec![seq_ce, seq_policy];

    let nodes: Vec<_> = out
        .tree
        .nodes
        .iter()
        .filter(|n| (n.parent.is_some() || w.include_root) && w.level_enabled(n.level))
        .collect();
    if nodes.is_empty() && w.lambda_c < 1.0 {
        return Err(contract_err!("per-location terms requested but no location qualifies"));
    }
    let b_k = baselines.for_locations();
    let inv = if nodes.is_empty() { 0.0 } else { 1.0 / nodes.len() as Real };
    let mut rewards = Vec::with_capacity(nodes.len());
    for node in nodes {
        let logits = node.logits.ok_or_else(|| contract_err!("traversal ran without per-node logits"))?;
        let r_k = indicator(g, logits, label);
        rewards.push(r_k);
        let ce_k = g.cross_entropy(logits, label)?;
        terms.push(g.scale(ce_k, inv * (1.0 - w.lambda_c)));
        terms.push(g.scale(node.log_prob, -inv * w.lambda_f * (1.0 - w.lambda_r) * (r_k - b_k)));
    }
    let loss = g.add_all(&terms)?;
    Ok((loss, RewardRecord { sequence: r_s, locations: rewards }))
}

fn batch_mean(g: &mut Graph, losses: &[Var]) -> Result<Var> {
    if losses.is_empty() {
        return Err(contract_err!("loss over an empty batch"));
    }
    let total = g.add_all(losses)?;
    Ok(g.scale(total, 1.0 / losses.len() as Real))
}

fn check_batch(outputs: &[TraversalOutput], labels: &[usize]) -> Result<()> {
    if outputs.is_empty() {
        return Err(contract_err!("loss over an empty batch"));
    }
    if outputs.len() != labels.len() {
        return Err(contract_err!("{} outputs for {} labels", outputs.len(), labels.len()));
    }
    Ok(())
}

/// Batch surrogate of the REINFORCE rule: the mean over all `N·M` traversals.
pub fn loss_base(
    g: &mut Graph,
    outputs: &[TraversalOutput],
    labels: &[usize],
    b: Real,
    w: &LossWeights,
) -> Result<(Var, Vec<RewardRecord>)> {
    check_batch(outputs, labels)?;
    let mut losses = Vec::with_capacity(outputs.len());
    let mut rewards = Vec::with_capacity(outputs.len());
    for (out, &y) in outputs.iter().zip(labels) {
        let (l, r) = surrogate_base(g, out, y, b, w)?;
        losses.push(l);
        rewards.push(r);
    }
    Ok((batch_mean(g, &losses)?, rewards))
}

/// Batch surrogate of the per-feature regularized rule.
pub fn loss_per_feature(
    g: &mut Graph,
    outputs: &[TraversalOutput],
    labels: &[usize],
    baselines: &Baselines,
    w: &LossWeights,
) -> Result<(Var, Vec<RewardRecord>)> {
    check_batch(outputs, labels)?;
    let mut losses = Vec::with_capacity(outputs.len());
    let mut rewards = Vec::with_capacity(outputs.len());
    for (out, &y) in outputs.iter().zip(labels) {
        let (l, r) = surrogate_per_feature(g, out, y, baselines, w)?;
        losses.push(l);
        rewards.push(r);
    }
    Ok((batch_mean(g, &losses)?, rewards))
}

/// `λ/N² · [Σ_same (1 - cos) + Σ_diff max(cos - α, 0)]` over all ordered pairs.
pub fn loss_contrastive(g: &mut Graph, features: &[Var], labels: &[usize], alpha: Real, lambda: Real) -> Result<Var> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(contract_err!("{} features for {} labels", features.len(), labels.len()));
    }
    let normed = features.iter().map(|&f| g.l2_normalize(f)).collect::<Result<Vec<_>>>()?;
    let mut terms = Vec::with_capacity(features.len() * features.len());
    for i in 0..normed.len() {
        for j in 0..normed.len() {
            let prod = g.mul(normed[i], normed[j])?;
            let cos = g.sum(prod);
            let t = if labels[i] == labels[j] {
                let neg = g.scale(cos, -1.0);
                g.add_scalar(neg, 1.0)
            } else {
                let shifted = g.add_scalar(cos, -alpha);
                g.relu(shifted)
            };
            terms.push(t);
        }
    }
    let total = g.add_all(&terms)?;
    let n = features.len() as Real;
    Ok(g.scale(total, lambda / (n * n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use crate::tensor::Tensor;

    #[test]
    fn contrastive_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = g.constant(Tensor::vector(vec![2.0, 4.0]));
        let l = loss_contrastive(&mut g, &[a, b], &[0, 0], 0.4, 1.0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);

        // cos = 0.3 between classes stays under the threshold.
        let c = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let d = g.constant(Tensor::vector(vec![0.3, (1.0 - 0.09 as Real).sqrt()]));
        let l = loss_contrastive(&mut g, &[c, d], &[0, 1], 0.4, 1.0).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);

        let e = g.constant(Tensor::vector(vec![0.9, (1.0 - 0.81 as Real).sqrt()]));
        let l = loss_contrastive(&mut g, &[c, e], &[0, 1], 0.4, 100.0).unwrap();
        assert!((g.value(l).item() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn contrastive_rejects_zero_vectors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.constant(Tensor::vector(vec![0.0, 0.0]));
        let b = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(loss_contrastive(&mut g, &[a, b], &[0, 1], 0.4, 1.0), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::per_feature(0.3).validate().is_ok());
        assert!(LossWeights::per_feature(1.3).validate().is_err());
        let w = LossWeights { samples: 0, ..LossWeights::default() };
        assert!(w.validate().is_err());
    }
}
