use crate::error::{Error, Result};
use crate::tensor::Real;

/// Axis-aligned pixel rectangle; `x` is the column of the left edge, `y` the
/// row of the top edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn square(x: usize, y: usize, side: usize) -> Self {
        Self { x, y, w: side, h: side }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn contains(&self, px: usize, py: usize) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    /// Center in pixel-index coordinates (pixel `i` is centered at `i`).
    pub fn center(&self) -> (Real, Real) {
        (
            self.x as Real + (self.w as Real - 1.0) / 2.0,
            self.y as Real + (self.h as Real - 1.0) / 2.0,
        )
    }

    /// Translates a rectangle given relative to `self`'s top-left corner into
    /// the frame `self` lives in.
    pub fn offset_by(&self, inner: Rect) -> Rect {
        Rect::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }
}

/// How one grid cell's extent derives from the image extent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CellMode {
    /// Each cell spans this fraction of the image side.
    Fraction(Real),
    /// Adjacent cells overlap by this fraction of the cell side.
    Overlap(Real),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub mode: CellMode,
    pub image_extent: usize,
}

impl GridSpec {
    pub fn new(n: usize, mode: CellMode, image_extent: usize) -> Result<Self> {
        let spec = Self { n, mode, image_extent };
        spec.cell_extent()?;
        Ok(spec)
    }

    pub fn with_extent(&self, image_extent: usize) -> Result<Self> {
        Self::new(self.n, self.mode, image_extent)
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    /// Ratio between the image side and one cell side.
    pub fn scale_factor(&self) -> Real {
        if self.n == 1 {
            return 1.0;
        }
        match self.mode {
            CellMode::Fraction(f) => 1.0 / f,
            CellMode::Overlap(o) => 1.0 + (self.n as Real - 1.0) * (1.0 - o),
        }
    }

    pub fn cell_extent(&self) -> Result<usize> {
        if self.n == 0 {
            return Err(Error::Geometry("grid side must be positive".into()));
        }
        if self.image_extent == 0 {
            return Err(Error::Geometry("image extent must be positive".into()));
        }
        match self.mode {
            CellMode::Fraction(f) if !(f > 0.0 && f <= 1.0) => {
                return Err(Error::Geometry(format!("cell fraction {f} outside (0, 1]")));
            }
            CellMode::Overlap(o) if !(0.0..1.0).contains(&o) => {
                return Err(Error::Geometry(format!("overlap fraction {o} outside [0, 1)")));
            }
            _ => {}
        }
        if self.n == 1 {
            return Ok(self.image_extent);
        }
        let cell = (self.image_extent as Real / self.scale_factor()).round() as usize;
        if cell < 1 || cell > self.image_extent {
            return Err(Error::Geometry(format!(
                "cell extent {cell} px does not fit image extent {} px",
                self.image_extent
            )));
        }
        Ok(cell)
    }

    /// Real-valued distance between adjacent cell origins.
    pub fn stride(&self) -> Result<Real> {
        let cell = self.cell_extent()?;
        if self.n == 1 {
            return Ok(0.0);
        }
        Ok((self.image_extent - cell) as Real / (self.n - 1) as Real)
    }

    /// Start offsets of the cells along one axis (rounded to nearest pixel).
    pub fn starts(&self) -> Result<Vec<usize>> {
        let stride = self.stride()?;
        Ok((0..self.n).map(|i| (i as Real * stride).round() as usize).collect())
    }
}

/// The `n²` candidate rectangles of a grid, row-major.
pub fn grid_cells(spec: &GridSpec) -> Result<Vec<Rect>> {
    let cell = spec.cell_extent()?;
    let starts = spec.starts()?;
    let mut cells = Vec::with_capacity(spec.cell_count());
    for &y in &starts {
        for &x in &starts {
            cells.push(Rect::square(x, y, cell));
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imagenet_grid_has_77px_cells() {
        let spec = GridSpec::new(5, CellMode::Fraction(0.34375), 224).unwrap();
        assert_eq!(spec.cell_extent().unwrap(), 77);
        let cells = grid_cells(&spec).unwrap();
        assert_eq!(cells.len(), 25);
        assert_eq!(cells[0], Rect::square(0, 0, 77));
        assert_eq!(cells[24].right(), 224);
        assert_eq!(cells[24].bottom(), 224);
    }

    #[test]
    fn fmow_grid_tiles_with_half_overlap() {
        let spec = GridSpec::new(3, CellMode::Overlap(0.5), 448).unwrap();
        assert_eq!(spec.cell_extent().unwrap(), 224);
        assert_eq!(spec.stride().unwrap(), 112.0);
        let cells = grid_cells(&spec).unwrap();
        assert_eq!(cells.iter().map(|c| c.x).take(3).collect::<Vec<_>>(), vec![0, 112, 224]);
        assert_eq!(spec.scale_factor(), 2.0);
    }

    #[test]
    fn single_cell_grid_is_whole_image() {
        for mode in [CellMode::Fraction(0.3), CellMode::Overlap(0.5)] {
            let spec = GridSpec::new(1, mode, 50).unwrap();
            assert_eq!(grid_cells(&spec).unwrap(), vec![Rect::square(0, 0, 50)]);
        }
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(matches!(
            GridSpec::new(3, CellMode::Fraction(1.5), 64),
            Err(Error::Geometry(_))
        ));
        assert!(GridSpec::new(4, CellMode::Fraction(0.01), 10).is_err());
        assert!(GridSpec::new(3, CellMode::Overlap(1.0), 64).is_err());
    }

    #[test]
    fn cells_tile_exactly_and_overlap_as_configured() {
        for n in 2..7 {
            for extent in [31, 64, 77, 100, 224, 448] {
                for o in [0.0, 0.25, 0.5] {
                    let spec = GridSpec::new(n, CellMode::Overlap(o), extent).unwrap();
                    let cells = grid_cells(&spec).unwrap();
                    let cell = spec.cell_extent().unwrap();
                    assert_eq!(cells[0].x, 0);
                    let last = cells[n - 1];
                    assert!(last.right().abs_diff(extent) <= 1, "n{n} e{extent} o{o}");
                    // Start rounding moves each overlap by at most one pixel
                    // from the real-valued one; rounding the cell extent itself
                    // shifts the nominal overlap by a further fraction of a pixel.
                    let nominal = cell as Real - spec.stride().unwrap();
                    assert!((nominal - o * cell as Real).abs() <= 1.0, "n{n} e{extent} o{o}");
                    for i in 1..n {
                        let overlap = cells[i - 1].right() as Real - cells[i].x as Real;
                        assert!(
                            (overlap - nominal).abs() <= 1.0 + 1e-9,
                            "n{n} e{extent} o{o}: overlap {overlap}"
                        );
                    }
                }
            }
        }
    }
}
