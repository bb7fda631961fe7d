//! Detrending and standardizing BOLD series, and building a group mask.
//!
//! cargo run --example preprocess_bold

use brainfit::preprocess::{build_mask, preprocess_run};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> brainfit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n_scans, n_voxels) = (120, 6);
    // slow scanner drift plus noise; the last voxel is dead
    let raw = DMatrix::from_fn(n_scans, n_voxels, |t, v| {
        if v == n_voxels - 1 {
            100.0
        } else {
            500.0 + 0.8 * t as f64 * (v + 1) as f64 + 5.0 * rng.sample::<f64, _>(StandardNormal)
        }
    });
    let (bold, degenerate) = preprocess_run(&raw, 2.0)?;
    for v in 0..n_voxels {
        let c = bold.values.column(v);
        let slope_raw = raw[(n_scans - 1, v)] - raw[(0, v)];
        println!(
            "voxel {v}: raw end-start {slope_raw:8.1}, cleaned mean {:+.1e}, var {:.3}",
            c.mean(),
            c.variance()
        );
    }
    println!("constant voxels zeroed: {degenerate:?}");

    // cells usable in at least half of three subjects
    let usable = vec![
        vec![true, true, false, true, false, false, true, true],
        vec![true, false, false, true, true, false, true, true],
        vec![true, true, false, false, false, false, true, false],
    ];
    let grid = build_mask(&usable, [2, 2, 2], [3.0; 3], 0.5)?;
    println!("group mask keeps {} of {} cells: {:?}", grid.n_voxels(), grid.n_cells(), grid.mask());
    Ok(())
}
