//! Byte-level check of slice rendering against a frozen fixture.
//!
//! Regenerate with `BRAINFIT_BLESS=1 cargo test --test render_golden` only
//! when the image format is meant to change.

use std::path::Path;

use brainfit::reporting::{render_slice_images, Axis};
use brainfit::synth::synth_grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn seeded_map_matches_golden_bytes() {
    let grid = synth_grid(100, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut map: Vec<f64> = (0..grid.n_voxels()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    map[17] = f64::NAN;
    let images = render_slice_images(&map, &grid, Axis::Z).unwrap();
    let bytes: Vec<u8> = images.concat();

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/render_z.bin");
    if std::env::var_os("BRAINFIT_BLESS").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("fixture present");
    assert_eq!(images.len(), grid.dims()[2]);
    assert!(bytes == golden, "rendered bytes differ from {}", path.display());
}
