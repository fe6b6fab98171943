use crate::error::{config_err, Result};
use crate::geometry::{CellMode, GridSpec};
use crate::nn::ModelSpec;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionMode {
    /// The most probable cells, in decreasing probability.
    TopK,
    /// Sequential draws without replacement.
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeqProbMode {
    /// Renormalizes each draw by the mass left after earlier draws.
    Exact,
    /// Plain product of the selected probabilities.
    Simplified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraversalConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub grid_n: usize,
    pub cell_mode: CellMode,
    /// Children per attended node for levels `2..=levels`.
    pub locations: Vec<usize>,
    pub selection: SelectionMode,
    pub seq_prob: SeqProbMode,
}

impl TraversalConfig {
    /// 224 px images, 77 px base, 5×5 grid of cells spanning 34.375 %.
    pub fn imagenet(locations: usize) -> Self {
        Self {
            levels: 2,
            base_resolution: 77,
            grid_n: 5,
            cell_mode: CellMode::Fraction(0.34375),
            locations: vec![locations],
            selection: SelectionMode::TopK,
            seq_prob: SeqProbMode::Simplified,
        }
    }

    /// 896 px images, 224 px base, 3×3 grids with 50 % overlap, 2 then 1 location.
    pub fn fmow() -> Self {
        Self {
            levels: 3,
            base_resolution: 224,
            grid_n: 3,
            cell_mode: CellMode::Overlap(0.5),
            locations: vec![2, 1],
            selection: SelectionMode::TopK,
            seq_prob: SeqProbMode::Simplified,
        }
    }

    /// 64 px glyph images, 16 px base, 4×4 grid of disjoint cells.
    pub fn synthetic(locations: usize) -> Self {
        Self {
            levels: 2,
            base_resolution: 16,
            grid_n: 4,
            cell_mode: CellMode::Fraction(0.25),
            locations: vec![locations],
            selection: SelectionMode::TopK,
            seq_prob: SeqProbMode::Simplified,
        }
    }

    fn grid_probe(&self) -> Result<GridSpec> {
        GridSpec::new(self.grid_n, self.cell_mode, self.base_resolution.max(self.grid_n))
    }

    /// Side of the image at `level` (1-based) relative to one grid cell.
    pub fn level_extent(&self, level: usize) -> Result<usize> {
        let sf = self.grid_probe()?.scale_factor();
        Ok((self.base_resolution as Real * sf.powi(level as i32 - 1)).round() as usize)
    }

    /// Side of the full-resolution input image.
    pub fn image_extent(&self) -> Result<usize> {
        self.level_extent(self.levels)
    }

    /// Grid laid over a parent region of `extent` pixels.
    pub fn grid(&self, extent: usize) -> Result<GridSpec> {
        GridSpec::new(self.grid_n, self.cell_mode, extent)
    }

    /// Number of nodes at each level, root first.
    pub fn node_counts(&self) -> Vec<usize> {
        let mut counts = vec![1];
        for &l in &self.locations {
            counts.push(counts.last().unwrap() * l);
        }
        counts
    }

    /// Attended locations over all levels (root excluded).
    pub fn total_locations(&self) -> usize {
        self.node_counts().iter().skip(1).sum()
    }

    /// The same traversal with `n` children per node at the last level.
    pub fn with_final_locations(&self, n: usize) -> Self {
        let mut c = self.clone();
        if let Some(last) = c.locations.last_mut() {
            *last = n;
        }
        c
    }

    /// Checks internal consistency and compatibility with `model`.
    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.levels == 0 {
            return Err(config_err!("traversal needs at least one level"));
        }
        if self.locations.len() != self.levels - 1 {
            return Err(config_err!(
                "{} levels need {} location counts, got {}",
                self.levels,
                self.levels - 1,
                self.locations.len()
            ));
        }
        let k = self.grid_n * self.grid_n;
        if let Some(&bad) = self.locations.iter().find(|&&l| l > k) {
            return Err(config_err!("{bad} locations requested from a {k}-cell grid"));
        }
        if self.base_resolution != model.backbone.base_resolution {
            return Err(config_err!(
                "base resolution {} differs from backbone input {}",
                self.base_resolution,
                model.backbone.base_resolution
            ));
        }
        let (tap_extent, _, _) = model.tap_shape()?;
        if self.levels > 1 && tap_extent < self.grid_n {
            return Err(config_err!(
                "tap map {tap_extent}x{tap_extent} smaller than the {n}x{n} grid",
                n = self.grid_n
            ));
        }
        let mut extent = self.image_extent()?;
        for level in 2..=self.levels {
            let cell = self.grid(extent)?.cell_extent()?;
            if cell < self.base_resolution.min(extent) / 2 {
                return Err(config_err!(
                    "level {level} cells of {cell} px are far below the {} px base resolution",
                    self.base_resolution
                ));
            }
            extent = cell;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_extents() {
        assert_eq!(TraversalConfig::imagenet(3).image_extent().unwrap(), 224);
        let f = TraversalConfig::fmow();
        assert_eq!(f.level_extent(2).unwrap(), 448);
        assert_eq!(f.image_extent().unwrap(), 896);
        assert_eq!(TraversalConfig::synthetic(1).image_extent().unwrap(), 64);
    }

    #[test]
    fn node_counts_follow_locations() {
        let f = TraversalConfig::fmow();
        assert_eq!(f.node_counts(), vec![1, 2, 2]);
        assert_eq!(f.total_locations(), 4);
        assert_eq!(TraversalConfig::imagenet(3).total_locations(), 3);
    }

    #[test]
    fn validation() {
        let model = ModelSpec::tiny(4);
        TraversalConfig::synthetic(1).validate(&model).unwrap();
        let mut bad = TraversalConfig::synthetic(17);
        assert!(bad.validate(&model).is_err());
        bad = TraversalConfig::synthetic(1);
        bad.locations.clear();
        assert!(bad.validate(&model).is_err());
        TraversalConfig::imagenet(3).validate(&ModelSpec::paper_imagenet()).unwrap();
        TraversalConfig::fmow().validate(&ModelSpec::paper_fmow_lite()).unwrap();
    }
}
