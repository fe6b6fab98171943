use tnet_core::data::{self, generate, generate_sample, SynthSpec};
use tnet_core::geometry::{grid_cells, CellMode, GridSpec};
use tnet_core::{Error, Real};

fn within_three_sigma(counts: &[usize], total: usize) -> bool {
    let p = 1.0 / counts.len() as Real;
    let mean = total as Real * p;
    let sigma = (total as Real * p * (1.0 - p)).sqrt();
    counts.iter().all(|&c| (c as Real - mean).abs() <= 3.0 * sigma)
}

#[test]
fn labels_and_cells_are_uniform() {
    let spec = SynthSpec { seed: 17, ..SynthSpec::default() };
    let n = 10_000;
    let data = generate(&spec, n).unwrap();
    let mut labels = vec![0; spec.num_classes];
    let mut cells = vec![0; spec.grid_n * spec.grid_n];
    for s in &data.samples {
        labels[s.label] += 1;
        cells[s.cell] += 1;
    }
    assert!(within_three_sigma(&labels, n), "{labels:?}");
    assert!(within_three_sigma(&cells, n), "{cells:?}");
}

#[test]
fn target_glyph_lies_in_its_cell() {
    let spec = SynthSpec::default();
    let grid = GridSpec::new(spec.grid_n, CellMode::Fraction(1.0 / spec.grid_n as Real), spec.image_extent).unwrap();
    let cells = grid_cells(&grid).unwrap();
    for i in 0..200 {
        let s = generate_sample(&spec, i);
        let c = cells[s.cell];
        assert!(s.bbox.x >= c.x && s.bbox.right() <= c.right());
        assert!(s.bbox.y >= c.y && s.bbox.bottom() <= c.bottom());
        // The target is the only full-intensity content in the image.
        let full: usize = s.image.data().iter().filter(|&&v| v == 1.0).count();
        let inside = (s.bbox.y..s.bbox.bottom())
            .flat_map(|y| (s.bbox.x..s.bbox.right()).map(move |x| (y, x)))
            .filter(|&(y, x)| s.image.at3(y, x, 0) == 1.0)
            .count();
        assert_eq!(full, inside);
        assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn dataset_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tnsd");
    let data = generate(&SynthSpec { seed: 3, ..SynthSpec::default() }, 20).unwrap();
    let crc = data::save(&data, &path).unwrap();
    assert_eq!(data::load(&path).unwrap(), data);

    let mut bytes = std::fs::read(&path).unwrap();
    assert_eq!(data::checksum(&bytes), crc);
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(data::load(&path), Err(Error::Format { .. })));
    assert!(matches!(data::load(&dir.path().join("missing")), Err(Error::Io(_))));
}

#[test]
fn samples_depend_only_on_seed_and_index() {
    let spec = SynthSpec { seed: 5, ..SynthSpec::default() };
    let data = generate(&spec, 30).unwrap();
    assert_eq!(generate_sample(&spec, 29), data.samples[29]);
    let other = SynthSpec { seed: 6, ..spec.clone() };
    assert_ne!(generate_sample(&other, 29), data.samples[29]);
}
