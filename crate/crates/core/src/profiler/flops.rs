use std::fmt::Write as _;

use crate::error::Result;
use crate::nn::{FeatureWeighting, ModelSpec};
use crate::traversal::TraversalConfig;

/// Multiplications of a dense convolution: `(C_in·k²)·(H_out·W_out·C_out)`.
/// Fully connected layers are the case `k = H_out = W_out = 1`.
pub fn layer_flops(c_in: usize, k: usize, h_out: usize, w_out: usize, c_out: usize) -> u64 {
    (c_in as u64 * (k * k) as u64) * (h_out as u64 * w_out as u64 * c_out as u64)
}

/// Shape of one convolution or linear layer as seen by the cost model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvCost {
    pub name: String,
    pub c_in: usize,
    pub kernel: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub c_out: usize,
    /// Depthwise: every output channel sees one input channel.
    pub depthwise: bool,
}

impl ConvCost {
    pub fn new(name: &str, c_in: usize, kernel: usize, h_out: usize, w_out: usize, c_out: usize) -> Self {
        Self { name: name.to_string(), c_in, kernel, h_out, w_out, c_out, depthwise: false }
    }

    pub fn depthwise(name: &str, kernel: usize, h_out: usize, w_out: usize, channels: usize) -> Self {
        Self {
            name: name.to_string(),
            c_in: channels,
            kernel,
            h_out,
            w_out,
            c_out: channels,
            depthwise: true,
        }
    }

    pub fn flops(&self) -> u64 {
        let c_in = if self.depthwise { 1 } else { self.c_in };
        layer_flops(c_in, self.kernel, self.h_out, self.w_out, self.c_out)
    }

    fn renamed(mut self, prefix: &str) -> Self {
        self.name = format!("{prefix}.{}", self.name);
        self
    }
}

/// One layer applied `applications` times; `flops` covers all applications.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRecord {
    /// Processing level (1-based), or `None` for the aggregation/classification head.
    pub level: Option<usize>,
    pub cost: ConvCost,
    pub applications: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub records: Vec<LayerRecord>,
    /// Multiplications spent on the nodes of each level, root level first.
    pub per_level: Vec<u64>,
    /// Aggregation and classification, run once per image.
    pub head: u64,
    pub total: u64,
    /// Added cost per unit increase of the last level's per-node location count.
    pub delta: u64,
    /// Last-level per-node location count this report was built for.
    pub locations: usize,
}

/// Multiplications of one image's traversal, with `locations` children per
/// node at the last level. Pure function of the specs.
pub fn profile_traversal(model: &ModelSpec, config: &TraversalConfig, locations: usize) -> Result<FlopsReport> {
    let at = |n| costs_for(model, &config.with_final_locations(n));
    let (records, per_level, head) = at(locations)?;
    let total = per_level.iter().sum::<u64>() + head;
    let delta = if config.levels > 1 {
        let (_, l0, h0) = at(0)?;
        let (_, l1, h1) = at(1)?;
        (l1.iter().sum::<u64>() + h1) - (l0.iter().sum::<u64>() + h0)
    } else {
        0
    };
    Ok(FlopsReport { records, per_level, head, total, delta, locations })
}

fn costs_for(model: &ModelSpec, config: &TraversalConfig) -> Result<(Vec<LayerRecord>, Vec<u64>, u64)> {
    let (_, tap_c, _) = model.tap_shape()?;
    let fd = model.backbone.feature_dim;
    let backbone = model.backbone.costs()?;
    let location = model.location.costs(config.grid_n, tap_c, fd);
    let positional = model.positional.cost(fd);

    let counts = config.node_counts();
    let mut records = Vec::new();
    let mut per_level = Vec::with_capacity(counts.len());
    let push = |records: &mut Vec<LayerRecord>, level, cost: ConvCost, n: usize| {
        let flops = cost.flops() * n as u64;
        records.push(LayerRecord { level, cost, applications: n as u64, flops });
        flops
    };
    for (i, &nodes) in counts.iter().enumerate() {
        let level = i + 1;
        let mut sum = 0;
        for c in &backbone {
            sum += push(&mut records, Some(level), c.clone().renamed("backbone"), nodes);
        }
        if level < config.levels {
            for c in &location {
                sum += push(&mut records, Some(level), c.clone(), nodes);
            }
        }
        sum += push(&mut records, Some(level), positional.clone(), nodes);
        if model.weighting {
            sum += push(&mut records, Some(level), FeatureWeighting::per_vector_cost(fd), nodes);
        }
        per_level.push(sum);
    }
    let mut head = 0;
    if model.weighting {
        for c in FeatureWeighting::fixed_costs(fd) {
            head += push(&mut records, None, c, 1);
        }
    }
    head += push(&mut records, None, ConvCost::new("classifier", fd, 1, 1, 1, model.num_classes), 1);
    Ok((records, per_level, head))
}

impl FlopsReport {
    /// Human-readable table, one row per record.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<6} {:<32} {:>6} {:>3} {:>5} {:>5} {:>6} {:>5} {:>16}",
            "level", "layer", "c_in", "k", "h_out", "w_out", "c_out", "times", "flops"
        );
        for r in &self.records {
            let level = r.level.map_or("head".to_string(), |l| l.to_string());
            let c = &r.cost;
            let _ = writeln!(
                s,
                "{:<6} {:<32} {:>6} {:>3} {:>5} {:>5} {:>6} {:>5} {:>16}",
                level, c.name, c.c_in, c.kernel, c.h_out, c.w_out, c.c_out, r.applications, r.flops
            );
        }
        for (i, l) in self.per_level.iter().enumerate() {
            let _ = writeln!(s, "level {} total: {} ({:.3e})", i + 1, l, *l as f64);
        }
        let _ = writeln!(s, "head total: {}", self.head);
        let _ = writeln!(s, "total: {} ({:.3e})", self.total, self.total as f64);
        let _ = writeln!(s, "per-location increment: {} ({:.3e})", self.delta, self.delta as f64);
        s
    }

    /// Machine-readable form: one `key=value` record per layer, then a summary record.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let level = r.level.map_or("head".to_string(), |l| l.to_string());
            let c = &r.cost;
            let _ = writeln!(
                s,
                "level={level} layer={} c_in={} k={} h_out={} w_out={} c_out={} depthwise={} applications={} flops={}",
                c.name, c.c_in, c.kernel, c.h_out, c.w_out, c.c_out, c.depthwise, r.applications, r.flops
            );
        }
        let levels: Vec<String> = self.per_level.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            s,
            "summary locations={} total={} delta={} head={} per_level={}",
            self.locations,
            self.total,
            self.delta,
            self.head,
            levels.join(",")
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formula_examples() {
        assert_eq!(layer_flops(3, 3, 75, 75, 64), 9_720_000);
        assert_eq!(layer_flops(512, 1, 1, 1, 1000), 512_000);
        assert_eq!(layer_flops(1, 1, 1, 1, 1), 1);
        assert_eq!(ConvCost::depthwise("dw", 3, 10, 10, 8).flops(), 9 * 100 * 8);
    }

    #[test]
    fn imagenet_backbone_cost() {
        let total: u64 = ModelSpec::paper_imagenet().backbone.costs().unwrap().iter().map(|c| c.flops()).sum();
        assert_eq!(total, 1_803_329_728);
    }

    #[test]
    fn total_is_sum_of_records() {
        let r = profile_traversal(&ModelSpec::paper_fmow_lite(), &TraversalConfig::fmow(), 1).unwrap();
        assert_eq!(r.total, r.records.iter().map(|x| x.flops).sum::<u64>());
        assert_eq!(r.per_level.len(), 3);
        let text = r.to_records();
        assert_eq!(text.lines().count(), r.records.len() + 1);
    }

    #[test]
    fn single_level_has_no_increment() {
        let mut c = TraversalConfig::synthetic(1);
        c.levels = 1;
        c.locations.clear();
        let r = profile_traversal(&ModelSpec::tiny(4), &c, 0).unwrap();
        assert_eq!(r.delta, 0);
        assert_eq!(r.per_level.len(), 1);
    }
}
