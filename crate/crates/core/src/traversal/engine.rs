use super::select::Selector;
use super::tree::{Distribution, LocationTree, Node};
use super::{SeqProbMode, TraversalConfig};
use crate::autodiff::Var;
use crate::error::{config_err, Result};
use crate::geometry::{crop_resize, grid_cells, resize_bilinear, select_tap, PositionalTriplet, Rect};
use crate::nn::{mean_aggregate, Features, Graph, Model};
use crate::profiler::profile_traversal;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TraverseOptions {
    /// Classify every node's encoded feature on its own as well.
    pub node_logits: bool,
}

/// Everything one traversal produced, as variables of the graph it ran on.
#[derive(Clone, Debug)]
pub struct TraversalOutput {
    pub tree: LocationTree,
    /// Aggregation weights, one per node.
    pub weights: Var,
    pub aggregate: Var,
    pub logits: Var,
    /// `log p(l | x, w)` under the configured sequence-probability mode.
    pub seq_log_prob: Var,
    pub flops: u64,
}

impl TraversalOutput {
    /// `log p(l_k | x, w)` of every attended node.
    pub fn node_log_probs(&self) -> Vec<Var> {
        self.tree.attended().iter().map(|n| n.log_prob).collect()
    }

    /// Per-node classification logits of the attended nodes, when computed.
    pub fn node_logits(&self) -> Vec<Var> {
        self.tree.attended().iter().filter_map(|n| n.logits).collect()
    }

    /// Attended regions in full-resolution pixels.
    pub fn attended_rects(&self) -> Vec<Rect> {
        self.tree.attended().iter().map(|n| n.rect).collect()
    }
}

/// Runs one image through the traversal on graph `g`.
///
/// `image` is the full-resolution `[R, R, C]` input; `R` must equal the
/// extent implied by `config`.
pub fn traverse(
    model: &Model,
    config: &TraversalConfig,
    g: &mut Graph,
    image: &Tensor,
    selector: &mut dyn Selector,
    options: TraverseOptions,
) -> Result<TraversalOutput> {
    config.validate(&model.spec)?;
    let extent = config.image_extent()?;
    let channels = model.spec.backbone.input_channels;
    if image.shape() != [extent, extent, channels] {
        return Err(config_err!(
            "traversal expects a {extent}x{extent}x{channels} image, got {:?}",
            image.shape()
        ));
    }
    let base = config.base_resolution;
    let n = config.grid_n;
    let tap_grid = config.grid(base)?;
    let tap_rf = *model.backbone.tap_rf();

    let root_input = g.constant(resize_bilinear(image, base, base)?);
    let root_features = model.backbone.forward(g, root_input)?;
    let zero = g.constant(Tensor::scalar(0.0));
    let mut tree = LocationTree::default();
    let mut features: Vec<Features> = vec![root_features];
    tree.nodes.push(Node {
        level: 1,
        parent: None,
        triplet: PositionalTriplet::ROOT,
        rect: Rect::square(0, 0, extent),
        cell: None,
        prob: 1.0,
        log_prob: zero,
        vector: root_features.vector,
        encoded: root_features.vector,
        logits: None,
    });
    let mut rank_terms = Vec::new();
    let mut frontier = vec![0usize];
    for level in 2..=config.levels {
        let count = config.locations[level - 2];
        let mut next = Vec::new();
        for &parent in &frontier {
            let pf = features[parent];
            let tap = select_tap(g, pf.tap, &tap_rf, &tap_grid)?;
            let logits = model.location.logits(g, tap, Some(pf.vector))?;
            let probs_var = g.softmax(logits)?;
            let log_probs = g.log_softmax(logits)?;
            let probs = g.value(probs_var).data().to_vec();
            let selected = selector.select(&probs, count)?;

            let parent_node = tree.nodes[parent].clone();
            let cells = grid_cells(&config.grid(parent_node.rect.w)?)?;
            let mut children = Vec::with_capacity(selected.len());
            for (rank, &cell) in selected.iter().enumerate() {
                let mut term = g.pick(log_probs, &[cell])?;
                if config.seq_prob == SeqProbMode::Exact && rank > 0 {
                    let rest: Vec<usize> = (0..probs.len()).filter(|j| !selected[..rank].contains(j)).collect();
                    let rest = g.pick(probs_var, &rest)?;
                    let left = g.sum(rest);
                    let log_left = g.log(left)?;
                    let log_left = g.reshape(log_left, [1])?;
                    term = g.sub(term, log_left)?;
                }
                rank_terms.push(term);
                let log_prob = g.add(term, parent_node.log_prob)?;

                let rect = parent_node.rect.offset_by(cells[cell]);
                let crop = g.constant(crop_resize(image, rect, base)?);
                let f = model.backbone.forward(g, crop)?;
                let triplet = PositionalTriplet::new(
                    parent_node.triplet.x * n + cell % n,
                    parent_node.triplet.y * n + cell / n,
                    level - 1,
                );
                features.push(f);
                children.push(tree.nodes.len());
                next.push(tree.nodes.len());
                tree.nodes.push(Node {
                    level,
                    parent: Some(parent),
                    triplet,
                    rect,
                    cell: Some(cell),
                    prob: probs[cell],
                    log_prob,
                    vector: f.vector,
                    encoded: f.vector,
                    logits: None,
                });
            }
            tree.distributions.push(Distribution { parent, probs, selected, children, logits });
        }
        frontier = next;
    }

    for node in &mut tree.nodes {
        node.encoded = model.positional.apply(g, node.vector, node.triplet)?;
        if options.node_logits {
            node.logits = Some(model.classifier.forward(g, node.encoded)?);
        }
    }
    let encoded: Vec<Var> = tree.nodes.iter().map(|n| n.encoded).collect();
    let (weights, aggregate) = match &model.weighting {
        Some(w) => w.forward(g, &encoded)?,
        None => mean_aggregate(g, &encoded, model.feature_dim())?,
    };
    let logits = model.classifier.forward(g, aggregate)?;
    let seq_log_prob = if rank_terms.is_empty() {
        zero
    } else {
        g.add_all(&rank_terms)?
    };
    let last = config.locations.last().copied().unwrap_or(0);
    let flops = profile_traversal(&model.spec, config, last)?.total;
    Ok(TraversalOutput { tree, weights, aggregate, logits, seq_log_prob, flops })
}

/// Value-only summary of a traversal, for evaluation and visualization.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probs: Vec<Real>,
    pub attended: Vec<Rect>,
    /// Selected cell index per attended node, within its parent's grid.
    pub cells: Vec<usize>,
    /// Level of each attended node.
    pub levels: Vec<usize>,
    pub weights: Vec<Real>,
    pub flops: u64,
}

impl Prediction {
    pub fn from_output(g: &Graph, out: &TraversalOutput) -> Result<Self> {
        let logits = g.value(out.logits).data().to_vec();
        let mut probs = logits.clone();
        crate::autodiff::softmax_in_place(&mut probs);
        Ok(Self {
            class: argmax(&logits),
            probs,
            attended: out.attended_rects(),
            cells: out.tree.attended().iter().filter_map(|n| n.cell).collect(),
            levels: out.tree.attended().iter().map(|n| n.level).collect(),
            weights: g.value(out.weights).data().to_vec(),
            flops: out.flops,
        })
    }
}

impl Prediction {
    /// Cells selected directly under the root.
    pub fn level2_cells(&self) -> Vec<usize> {
        self.cells.iter().zip(&self.levels).filter(|(_, &l)| l == 2).map(|(&c, _)| c).collect()
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
