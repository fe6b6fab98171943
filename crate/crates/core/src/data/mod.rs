//! Synthetic glyph-in-cell datasets and their file format.

pub(crate) mod format;
mod synth;

pub use format::{checksum, decode, encode, load, save, MAGIC, VERSION};
pub use synth::{
    downscaled_glyph_pixels, generate, generate_sample, generate_with, glyph_bitmap, Dataset, Readability, Sample,
    SynthSpec, READABLE_EXTENT,
};
