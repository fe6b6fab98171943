use crate::tensor::{Real, Tensor};

/// Grid position `(x, y)` and scale `s = level - 1` of a candidate region,
/// in the virtual whole-image grid of its level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PositionalTriplet {
    pub x: usize,
    pub y: usize,
    pub s: usize,
}

impl PositionalTriplet {
    pub const ROOT: PositionalTriplet = PositionalTriplet { x: 0, y: 0, s: 0 };

    pub fn new(x: usize, y: usize, s: usize) -> Self {
        Self { x, y, s }
    }
}

/// Sinusoidal encoding of a triplet into `len` values.
///
/// Six blocks `sin(x·f)`, `cos(x·f)`, `sin(y·f)`, `cos(y·f)`, `sin(s·f)`,
/// `cos(s·f)` with frequencies `f_t = (1/100)^(t/⌊len/6⌋)`, `t = 0..=⌊len/6⌋`,
/// concatenated and truncated to `len`.
///
/// # Panics
/// If `len < 6`.
pub fn positional_encoding(triplet: PositionalTriplet, len: usize) -> Tensor {
    assert!(len >= 6, "positional encoding needs at least 6 entries, got {len}");
    let steps = len / 6;
    let freqs: Vec<Real> = (0..=steps)
        .map(|t| (0.01 as Real).powf(t as Real / steps as Real))
        .collect();
    let mut out = Vec::with_capacity(6 * freqs.len());
    for p in [triplet.x, triplet.y, triplet.s] {
        let p = p as Real;
        out.extend(freqs.iter().map(|f| (p * f).sin()));
        out.extend(freqs.iter().map(|f| (p * f).cos()));
    }
    out.truncate(len);
    Tensor::vector(out)
}

/// Whether the truncated encoding still carries at least one scale entry.
pub(crate) fn encodes_scale(len: usize) -> bool {
    len >= 6 && len > 4 * (len / 6 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_zero_sines_and_unit_cosines() {
        let e = positional_encoding(PositionalTriplet::ROOT, 36);
        let block = 36 / 6 + 1;
        for (i, &v) in e.data().iter().enumerate() {
            let expected = if (i / block) % 2 == 0 { 0.0 } else { 1.0 };
            assert_eq!(v, expected, "entry {i}");
        }
    }

    #[test]
    fn first_sine_entry_is_sin_x() {
        let e = positional_encoding(PositionalTriplet::new(1, 0, 0), 24);
        assert!((e.data()[0] - 0.841471).abs() < 1e-6);
        assert_eq!(e.len(), 24);
    }

    #[test]
    fn lowest_frequency_is_one_hundredth() {
        let e = positional_encoding(PositionalTriplet::new(3, 0, 0), 60);
        // Block of 11 entries; t = 10 gives frequency 0.01.
        assert!((e.data()[10] - (0.03 as Real).sin()).abs() < 1e-12);
    }

    #[test]
    fn scale_block_survival() {
        assert!(!encodes_scale(6));
        assert!(!encodes_scale(12));
        assert!(encodes_scale(18));
        assert!(encodes_scale(24));
        assert!(encodes_scale(320));
        assert!(encodes_scale(512));
    }
}
