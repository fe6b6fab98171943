use super::SeqProbMode;
use crate::autodiff::Var;
use crate::geometry::{PositionalTriplet, Rect};
use crate::tensor::Real;

/// Log-probability of each draw of an ordered selection from one Categorical.
///
/// Exact mode divides the `r`-th probability by the mass left after the first
/// `r - 1` draws; simplified mode keeps the raw probability.
pub fn rank_log_terms(probs: &[Real], selected: &[usize], mode: SeqProbMode) -> Vec<Real> {
    let mut left = vec![true; probs.len()];
    selected
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let p = probs[i];
            let term = match mode {
                SeqProbMode::Exact if rank > 0 => {
                    let mass: Real = probs.iter().zip(&left).filter(|(_, &l)| l).map(|(q, _)| q).sum();
                    p.ln() - mass.ln()
                }
                _ => p.ln(),
            };
            left[i] = false;
            term
        })
        .collect()
}

/// Log-probability of an ordered selection from one Categorical.
pub fn selection_log_prob(probs: &[Real], selected: &[usize], mode: SeqProbMode) -> Real {
    rank_log_terms(probs, selected, mode).iter().sum()
}

/// One attended region (or the root).
#[derive(Clone, Debug)]
pub struct Node {
    pub level: usize,
    pub parent: Option<usize>,
    pub triplet: PositionalTriplet,
    /// Region in full-resolution image pixels.
    pub rect: Rect,
    /// Cell index within the parent's grid.
    pub cell: Option<usize>,
    /// Raw probability of the cell in its Categorical (1 for the root).
    pub prob: Real,
    /// Log-probability of reaching this node: its own draw plus its ancestors'.
    pub log_prob: Var,
    pub vector: Var,
    pub encoded: Var,
    pub logits: Option<Var>,
}

/// One application of the location module.
#[derive(Clone, Debug)]
pub struct Distribution {
    pub parent: usize,
    pub probs: Vec<Real>,
    /// Selected cells in selection order.
    pub selected: Vec<usize>,
    /// Node index of each selected cell.
    pub children: Vec<usize>,
    pub logits: Var,
}

#[derive(Clone, Debug, Default)]
pub struct LocationTree {
    /// Nodes level by level; node 0 is the root.
    pub nodes: Vec<Node>,
    pub distributions: Vec<Distribution>,
}

impl LocationTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    /// Attended nodes (root excluded).
    pub fn attended(&self) -> &[Node] {
        &self.nodes[1..]
    }

    pub fn at_level(&self, level: usize) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(move |n| n.level == level)
    }

    /// Sequence log-probability recomputed from the stored probabilities.
    pub fn sequence_log_prob(&self, mode: SeqProbMode) -> Real {
        self.distributions.iter().map(|d| selection_log_prob(&d.probs, &d.selected, mode)).sum()
    }
}

/// Sequence log-probability of a traversal tree.
pub fn sequence_log_prob(tree: &LocationTree, exact: bool) -> Real {
    tree.sequence_log_prob(if exact { SeqProbMode::Exact } else { SeqProbMode::Simplified })
}
