use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::geometry::{resize_bilinear, Rect};
use crate::parallel::{derive_seed, map_ordered, Execution};
use crate::tensor::{Real, Tensor};

/// Glyphs narrower than this many pixels after downscaling to the base
/// resolution are treated as unreadable.
pub const READABLE_EXTENT: Real = 4.0;

const GLYPH_STREAM: u64 = 0x6c79_7068;

/// Parameters of the glyph-in-cell task.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub image_extent: usize,
    pub glyph_extent: usize,
    pub num_classes: usize,
    /// Probability that each non-target cell holds a clutter glyph.
    pub clutter_density: Real,
    /// Intensity of clutter glyphs; target glyphs have intensity 1.
    pub clutter_contrast: Real,
    /// Placement grid is `grid_n × grid_n` disjoint cells.
    pub grid_n: usize,
    /// Resolution of the coarse whole-image view, for the readability check.
    pub base_resolution: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            image_extent: 64,
            glyph_extent: 12,
            num_classes: 4,
            clutter_density: 0.5,
            clutter_contrast: 0.35,
            grid_n: 4,
            base_resolution: 16,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn cell_extent(&self) -> usize {
        self.image_extent / self.grid_n.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_n == 0 || !self.image_extent.is_multiple_of(self.grid_n) {
            return Err(config_err!(
                "image extent {} is not divisible into a {}x{} grid",
                self.image_extent,
                self.grid_n,
                self.grid_n
            ));
        }
        if self.glyph_extent < 3 || self.glyph_extent >= self.cell_extent() {
            return Err(config_err!(
                "glyph of {} px must fit strictly inside a {} px cell",
                self.glyph_extent,
                self.cell_extent()
            ));
        }
        if !(2..=u16::MAX as usize).contains(&self.num_classes) {
            return Err(config_err!("need between 2 and 65535 classes, got {}", self.num_classes));
        }
        if !(0.0..=1.0).contains(&self.clutter_density) || !(0.0..=1.0).contains(&self.clutter_contrast) {
            return Err(config_err!("clutter density and contrast must lie in [0, 1]"));
        }
        if self.base_resolution == 0 || self.base_resolution > self.image_extent {
            return Err(config_err!("base resolution {} outside 1..={}", self.base_resolution, self.image_extent));
        }
        if self.image_extent > u16::MAX as usize {
            return Err(config_err!("image extent {} too large", self.image_extent));
        }
        Ok(())
    }

    /// How large a glyph appears in the coarse whole-image view.
    pub fn readability(&self) -> Readability {
        let extent = self.glyph_extent as Real * self.base_resolution as Real / self.image_extent as Real;
        Readability { downscaled_extent: extent, threshold: READABLE_EXTENT, limited: extent < READABLE_EXTENT }
    }
}

/// Whether the coarse view is information-limited by construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Readability {
    pub downscaled_extent: Real,
    pub threshold: Real,
    pub limited: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `[E, E, 1]` with values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    /// Placement cell of the target glyph, row-major.
    pub cell: usize,
    /// Tight bounds of the target glyph's pixels.
    pub bbox: Rect,
}

impl Sample {
    /// The image rescaled to `[-1, 1]` for the network.
    pub fn input(&self) -> Tensor {
        self.image.map(|v| 2.0 * v - 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SynthSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> Vec<Tensor> {
        self.samples.iter().map(Sample::input).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Binary bitmap of `class` on a `side × side` canvas, row-major.
///
/// The first eight classes are geometric shapes; later ones are fixed
/// pseudo-random patterns.
pub fn glyph_bitmap(class: usize, side: usize) -> Vec<bool> {
    let s = side as Real;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[GLYPH_STREAM, class as u64, side as u64]));
    let mut bits = vec![false; side * side];
    for y in 0..side {
        for x in 0..side {
            let u = (x as Real + 0.5) / s - 0.5;
            let v = (y as Real + 0.5) / s - 0.5;
            bits[y * side + x] = match class {
                0 => u.abs() < 0.15 || v.abs() < 0.15,
                1 => (u - v).abs() < 0.15 || (u + v).abs() < 0.15,
                2 => u.abs().max(v.abs()) > 0.3,
                3 => ((v + 0.5) * 4.0).floor() as i32 % 2 == 0,
                4 => ((u + 0.5) * 4.0).floor() as i32 % 2 == 0,
                5 => u * u + v * v < 0.16,
                6 => (((u + 0.5) * 3.0).floor() as i32 + ((v + 0.5) * 3.0).floor() as i32) % 2 == 0,
                7 => v + 0.5 > 2.0 * u.abs(),
                _ => rng.gen_bool(0.5),
            };
        }
    }
    if !bits.iter().any(|&b| b) {
        bits[0] = true;
    }
    bits
}

/// Tight bounds of the set pixels of a bitmap.
fn bitmap_bounds(bits: &[bool], side: usize) -> Rect {
    let (mut x0, mut y0, mut x1, mut y1) = (side, side, 0, 0);
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        let (x, y) = (i % side, i / side);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

fn stamp(image: &mut [Real], extent: usize, bits: &[bool], side: usize, x: usize, y: usize, value: Real) {
    for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
        image[(y + i / side) * extent + x + i % side] = value;
    }
}

/// Renders sample `index` of the dataset described by `spec`.
pub fn generate_sample(spec: &SynthSpec, index: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, index as u64]));
    let e = spec.image_extent;
    let n = spec.grid_n;
    let cell_px = spec.cell_extent();
    let g = spec.glyph_extent;
    let label = rng.gen_range(0..spec.num_classes);
    let cell = rng.gen_range(0..n * n);
    let mut image = vec![0.0; e * e];

    // Values are rounded through f32 so the stored file reproduces them exactly.
    let contrast = spec.clutter_contrast as f32 as Real;
    for other in 0..n * n {
        let roll: Real = rng.gen();
        let class = rng.gen_range(0..spec.num_classes);
        let ox = rng.gen_range(0..=cell_px - g);
        let oy = rng.gen_range(0..=cell_px - g);
        if other != cell && roll < spec.clutter_density {
            let bits = glyph_bitmap(class, g);
            stamp(&mut image, e, &bits, g, (other % n) * cell_px + ox, (other / n) * cell_px + oy, contrast);
        }
    }

    let bits = glyph_bitmap(label, g);
    let ox = (cell % n) * cell_px + rng.gen_range(0..=cell_px - g);
    let oy = (cell / n) * cell_px + rng.gen_range(0..=cell_px - g);
    stamp(&mut image, e, &bits, g, ox, oy, 1.0);
    let b = bitmap_bounds(&bits, g);
    let image = Tensor::new([e, e, 1], image).expect("sized to the extent");
    Sample { image, label, cell, bbox: Rect::new(ox + b.x, oy + b.y, b.w, b.h) }
}

pub fn generate_with(spec: &SynthSpec, count: usize, exec: Execution) -> Result<Dataset> {
    spec.validate()?;
    let indices: Vec<usize> = (0..count).collect();
    let samples = map_ordered(exec, &indices, |_, &i| generate_sample(spec, i));
    Ok(Dataset { spec: spec.clone(), samples })
}

/// Generates `count` samples; sample `i` depends only on `(spec, i)`.
pub fn generate(spec: &SynthSpec, count: usize) -> Result<Dataset> {
    generate_with(spec, count, Execution::default())
}

/// Largest number of target-glyph pixels that stay above half intensity once
/// the whole image is downscaled to the base resolution, over `samples`.
pub fn downscaled_glyph_pixels(spec: &SynthSpec, samples: &[Sample]) -> Result<usize> {
    let mut worst = 0;
    let b = spec.base_resolution;
    let f = b as Real / spec.image_extent as Real;
    for s in samples {
        let small = resize_bilinear(&s.image, b, b)?;
        let x0 = (s.bbox.x as Real * f).floor() as usize;
        let y0 = (s.bbox.y as Real * f).floor() as usize;
        let x1 = ((s.bbox.right() as Real * f).ceil() as usize).min(b);
        let y1 = ((s.bbox.bottom() as Real * f).ceil() as usize).min(b);
        let mut count = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                if small.data()[y * b + x] > 0.5 {
                    count += 1;
                }
            }
        }
        worst = worst.max(count);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiler::policy_metrics;

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec { seed: 9, ..SynthSpec::default() };
        let a = generate(&spec, 20).unwrap();
        let b = generate_with(&spec, 20, Execution::Sequential).unwrap();
        assert_eq!(a, b);
        let c = generate(&SynthSpec { seed: 10, ..spec }, 20).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_clutter_means_blank_background() {
        let spec = SynthSpec { clutter_density: 0.0, ..SynthSpec::default() };
        for s in generate(&spec, 30).unwrap().samples {
            let e = spec.image_extent;
            for (i, &v) in s.image.data().iter().enumerate() {
                if !s.bbox.contains(i % e, i / e) {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn bbox_bounds_glyph_exactly() {
        let spec = SynthSpec { clutter_density: 0.0, ..SynthSpec::default() };
        for s in generate(&spec, 30).unwrap().samples {
            let e = spec.image_extent;
            let lit: Vec<usize> = (0..e * e).filter(|&i| s.image.data()[i] == 1.0).collect();
            let xs = lit.iter().map(|i| i % e);
            let ys = lit.iter().map(|i| i / e);
            assert_eq!(xs.clone().min().unwrap(), s.bbox.x);
            assert_eq!(xs.max().unwrap() + 1, s.bbox.right());
            assert_eq!(ys.clone().min().unwrap(), s.bbox.y);
            assert_eq!(ys.max().unwrap() + 1, s.bbox.bottom());
            let cell = spec.cell_extent();
            assert_eq!(s.bbox.x / cell + spec.grid_n * (s.bbox.y / cell), s.cell);
            let m = policy_metrics(&[s.bbox], s.bbox, e).unwrap();
            assert_eq!((m.precision, m.recall), (1.0, 1.0));
        }
    }

    #[test]
    fn glyphs_are_distinct() {
        let g: Vec<_> = (0..12).map(|c| glyph_bitmap(c, 12)).collect();
        for i in 0..g.len() {
            for j in 0..i {
                assert_ne!(g[i], g[j], "classes {i} and {j}");
            }
        }
    }

    #[test]
    fn oversized_glyph_rejected() {
        let spec = SynthSpec { glyph_extent: 16, ..SynthSpec::default() };
        assert!(matches!(generate(&spec, 1), Err(crate::Error::Config(_))));
    }

    #[test]
    fn coarse_view_is_information_limited() {
        let spec = SynthSpec::default();
        let r = spec.readability();
        assert_eq!(r.downscaled_extent, 3.0);
        assert!(r.limited);
        let data = generate(&spec, 50).unwrap();
        assert!(downscaled_glyph_pixels(&spec, &data.samples).unwrap() < 16);
    }

    #[test]
    fn inputs_are_rescaled() {
        let d = generate(&SynthSpec::default(), 3).unwrap();
        for t in d.inputs() {
            assert!(t.data().iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }
}
