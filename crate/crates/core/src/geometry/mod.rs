//! Candidate-region grids, cropping, receptive fields and positional encodings.

mod crop;
mod encoding;
mod grid;
mod rf;

pub use crop::{crop_resize, resize_bilinear};
pub(crate) use encoding::encodes_scale;
pub use encoding::{positional_encoding, PositionalTriplet};
pub use grid::{grid_cells, CellMode, GridSpec, Rect};
pub use rf::{rf_chain, select_tap, tap_indices, LayerGeom, ReceptiveField};
