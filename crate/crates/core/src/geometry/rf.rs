use super::{grid_cells, GridSpec};
use crate::autodiff::{conv_output_extent, same_padding, Padding, Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Real;

/// Spatial footprint of one layer (or of a block, through its strided conv).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerGeom {
    pub kernel: usize,
    pub stride: usize,
    pub padding: Padding,
}

impl LayerGeom {
    pub fn new(kernel: usize, stride: usize, padding: Padding) -> Self {
        Self { kernel, stride, padding }
    }
}

/// Receptive field of one output pixel, in input-image pixels.
///
/// `start` is the image coordinate of the first output pixel's field center,
/// using pixel-index coordinates (pixel `i` is centered at `i`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceptiveField {
    pub size: usize,
    pub jump: usize,
    pub start: Real,
    /// Spatial extent of the layer's output map.
    pub extent: usize,
}

impl ReceptiveField {
    pub fn identity(extent: usize) -> Self {
        Self { size: 1, jump: 1, start: 0.0, extent }
    }

    pub fn then(&self, layer: &LayerGeom) -> Result<Self> {
        let extent = conv_output_extent(self.extent, layer.kernel, layer.stride, layer.padding)?;
        let pad = match layer.padding {
            Padding::Valid => 0,
            Padding::Same => same_padding(self.extent, layer.kernel, layer.stride),
        };
        Ok(Self {
            size: self.size + (layer.kernel - 1) * self.jump,
            jump: self.jump * layer.stride,
            start: self.start
                + ((layer.kernel as Real - 1.0) / 2.0 - pad as Real) * self.jump as Real,
            extent,
        })
    }

    /// Image coordinate of the field center of output pixel `i` along one axis.
    pub fn center(&self, i: usize) -> Real {
        self.start + (i * self.jump) as Real
    }
}

/// Receptive field after each layer of a stack applied to an
/// `input_extent`-sided image.
pub fn rf_chain(layers: &[LayerGeom], input_extent: usize) -> Result<Vec<ReceptiveField>> {
    let mut current = ReceptiveField::identity(input_extent);
    layers
        .iter()
        .map(|l| {
            current = current.then(l)?;
            Ok(current)
        })
        .collect()
}

/// Flat `row * w + col` indices of the feature-map pixels whose field centers
/// are nearest the grid-cell centers, one per cell in row-major cell order.
/// Ties go to the lowest `(row, col)`.
pub fn tap_indices(h: usize, w: usize, rf: &ReceptiveField, grid: &GridSpec) -> Result<Vec<usize>> {
    if h < grid.n || w < grid.n {
        return Err(shape_err!(
            "feature map {h}x{w} smaller than {n}x{n} grid",
            n = grid.n
        ));
    }
    if h == grid.n && w == grid.n {
        return Ok((0..h * w).collect());
    }
    let cells = grid_cells(grid)?;
    Ok(cells
        .iter()
        .map(|cell| {
            let (cx, cy) = cell.center();
            let mut best = (Real::INFINITY, 0);
            for r in 0..h {
                for c in 0..w {
                    let dy = rf.center(r) - cy;
                    let dx = rf.center(c) - cx;
                    let d = dx * dx + dy * dy;
                    if d < best.0 {
                        best = (d, r * w + c);
                    }
                }
            }
            best.1
        })
        .collect())
}

/// Downsamples an `[h, w, c]` tap map to the `[n, n, c]` grid layout.
pub fn select_tap(tape: &mut Tape, feature_map: Var, rf: &ReceptiveField, grid: &GridSpec) -> Result<Var> {
    let s = tape.shape(feature_map).to_vec();
    if s.len() != 3 {
        return Err(shape_err!("tap map must be [h, w, c], got {:?}", s));
    }
    let idx = tap_indices(s[0], s[1], rf, grid)?;
    let rows = tape.gather_rows(feature_map, s[2], &idx)?;
    tape.reshape(rows, [grid.n, grid.n, s[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellMode;
    use crate::tensor::Tensor;

    #[test]
    fn single_layers() {
        let rf = rf_chain(&[LayerGeom::new(3, 1, Padding::Valid)], 77).unwrap();
        assert_eq!((rf[0].size, rf[0].extent), (3, 75));
        let rf = rf_chain(&[LayerGeom::new(1, 1, Padding::Same)], 10).unwrap();
        assert_eq!((rf[0].size, rf[0].jump), (1, 1));
    }

    #[test]
    fn stride_two_block_after_conv() {
        let rf = rf_chain(
            &[LayerGeom::new(3, 1, Padding::Valid), LayerGeom::new(3, 2, Padding::Same)],
            77,
        )
        .unwrap();
        assert_eq!(rf[1].size, 5);
        assert_eq!(rf[1].extent, 38);
    }

    #[test]
    fn square_map_matching_grid_is_identity() {
        let grid = GridSpec::new(4, CellMode::Fraction(0.25), 16).unwrap();
        let rf = ReceptiveField::identity(4);
        assert_eq!(tap_indices(4, 4, &rf, &grid).unwrap(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn equidistant_candidates_pick_lowest_index() {
        // Two pixels whose centers sit at 0 and 2, one cell centered at 1.
        let grid = GridSpec::new(1, CellMode::Fraction(1.0), 3).unwrap();
        let rf = ReceptiveField { size: 1, jump: 2, start: 0.0, extent: 2 };
        assert_eq!(tap_indices(2, 2, &rf, &grid).unwrap(), vec![0]);
    }

    #[test]
    fn select_tap_gathers_rows() {
        let mut tape = Tape::new();
        let fm = tape.constant(Tensor::from_fn([3, 3, 2], |i| i as Real));
        let grid = GridSpec::new(1, CellMode::Fraction(1.0), 9).unwrap();
        let rf = ReceptiveField { size: 3, jump: 3, start: 1.0, extent: 3 };
        let out = select_tap(&mut tape, fm, &rf, &grid).unwrap();
        // Cell center (4, 4) is nearest pixel (1, 1).
        assert_eq!(tape.value(out).data(), &[8.0, 9.0]);
        assert_eq!(tape.shape(out), &[1, 1, 2]);
    }
}
