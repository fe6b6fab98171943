//! Enumeration check that the Monte-Carlo policy-gradient estimator is unbiased.

use crate::traversal::{traverse, Forced, SeqProbMode, TraversalConfig, TraverseOptions};
use crate::error::{contract_err, Result};
use crate::nn::{Gradients, Graph, Model};
use crate::tensor::{Real, Tensor};

/// Every ordered selection of `count` distinct cells out of `k`.
pub fn ordered_selections(k: usize, count: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, count: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == count {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !cur.contains(&i) {
                cur.push(i);
                rec(k, count, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(k, count, &mut Vec::new(), &mut out);
    out
}

/// Result of enumerating the whole location space of a toy traversal.
#[derive(Clone, Debug)]
pub struct McReport {
    /// `∂/∂w Σ_l p(l) log p(y|l)`.
    pub exact: Gradients,
    /// `Σ_l p(l) ∇[log p(y|l) + (log p(y|l) - b) log p(l)]`.
    pub estimator: Gradients,
    /// Expected policy part alone, `Σ_l p(l) (log p(y|l) - b) ∇log p(l)`.
    pub policy: Gradients,
    /// Total probability of all sequences.
    pub mass: Real,
    /// `Σ_l p(l) log p(y|l)`.
    pub expected_reward: Real,
}

impl McReport {
    pub fn max_deviation(&self) -> Real {
        self.exact.max_abs_diff(&self.estimator)
    }
}

/// Enumerates all sequences of a single-level traversal with sampling
/// probabilities and compares the exact objective gradient with the
/// expectation of the score-function estimator under baseline `b`.
pub fn mc_enumerate(model: &Model, config: &TraversalConfig, image: &Tensor, label: usize, b: Real) -> Result<McReport> {
    let k = config.grid_n * config.grid_n;
    if config.levels != 2 || k > 4 {
        return Err(contract_err!(
            "enumeration needs one attention level over at most 4 cells, got {} levels and {k} cells",
            config.levels
        ));
    }
    let mut config = config.clone();
    config.seq_prob = SeqProbMode::Exact;
    let count = config.locations[0];

    let mut exact = Gradients::zeros_like(&model.store);
    let mut estimator = Gradients::zeros_like(&model.store);
    let mut policy = Gradients::zeros_like(&model.store);
    let mut mass = 0.0;
    let mut expected_reward = 0.0;
    for seq in ordered_selections(k, count) {
        let mut g = Graph::new(&model.store);
        let mut sel = Forced::new([seq]);
        let out = traverse(model, &config, &mut g, image, &mut sel, TraverseOptions::default())?;
        let ce = g.cross_entropy(out.logits, label)?;
        let log_py = g.scale(ce, -1.0);
        let reward = g.value(log_py).item();
        let p = g.value(out.seq_log_prob).item().exp();
        mass += p;
        expected_reward += p * reward;

        // p(l)·log p(y|l) differentiated directly.
        let prob = g.exp(out.seq_log_prob);
        let f = g.mul(prob, log_py)?;
        g.backward(f)?;
        exact.add_assign(&g.gradients());

        g.zero_grad();
        let score = g.scale(out.seq_log_prob, p * (reward - b));
        g.backward(score)?;
        let policy_part = g.gradients();
        policy.add_assign(&policy_part);

        g.zero_grad();
        let direct = g.scale(log_py, p);
        g.backward(direct)?;
        estimator.add_assign(&g.gradients());
        estimator.add_assign(&policy_part);
    }
    Ok(McReport { exact, estimator, policy, mass, expected_reward })
}

/// Max absolute deviation between the exact gradient and the estimator's
/// enumerated expectation.
pub fn mc_gradient_check(model: &Model, config: &TraversalConfig, image: &Tensor, label: usize, b: Real) -> Result<Real> {
    Ok(mc_enumerate(model, config, image, label, b)?.max_deviation())
}

/// A small model, a 2×2 single-level traversal and a 32 px image for enumeration checks.
pub fn toy_problem(seed: u64, count: usize) -> Result<(Model, TraversalConfig, Tensor)> {
    use crate::geometry::CellMode;
    use crate::traversal::SelectionMode;
    let model = Model::new(crate::nn::ModelSpec::tiny(3), seed)?;
    let config = TraversalConfig {
        levels: 2,
        base_resolution: 16,
        grid_n: 2,
        cell_mode: CellMode::Fraction(0.5),
        locations: vec![count],
        selection: SelectionMode::Sample,
        seq_prob: SeqProbMode::Exact,
    };
    let image = Tensor::from_fn(vec![32, 32, 1], |i| {
        let (y, x) = (i / 32, i % 32);
        (((x * 7 + y * 3 + seed as usize) % 11) as Real / 5.0 - 1.0) * if x < 16 { 1.0 } else { 0.5 }
    });
    Ok((model, config, image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selections_enumerate_permutations() {
        assert_eq!(ordered_selections(4, 2).len(), 12);
        assert_eq!(ordered_selections(3, 3).len(), 6);
        assert_eq!(ordered_selections(4, 0), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn estimator_is_unbiased() {
        for count in 1..=2 {
            let (model, config, image) = toy_problem(3, count).unwrap();
            let r = mc_enumerate(&model, &config, &image, 1, 0.0).unwrap();
            assert!((r.mass - 1.0).abs() < 1e-12);
            assert!(r.max_deviation() < 1e-8, "deviation {}", r.max_deviation());
            assert!(r.exact.global_norm() > 0.0);
        }
    }

    #[test]
    fn rejects_large_grids() {
        let (model, mut config, image) = toy_problem(0, 1).unwrap();
        config.grid_n = 3;
        assert!(matches!(mc_gradient_check(&model, &config, &image, 0, 0.0), Err(crate::Error::Contract(_))));
    }
}
