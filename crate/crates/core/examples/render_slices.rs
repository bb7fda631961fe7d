//! Writes a map as one PGM image per axial slice.
//!
//! cargo run --example render_slices [out_dir]

use brainfit::io::VoxelGrid;
use brainfit::reporting::{render_slices, Axis};

fn main() -> brainfit::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("brainfit-slices"));
    // ellipsoid mask on a 24x20x12 grid, value falls off from a hotspot
    let dims = [24, 20, 12];
    let mut mask = Vec::new();
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let x = (i as f64 - 11.5) / 11.0;
                let y = (j as f64 - 9.5) / 9.0;
                let z = (k as f64 - 5.5) / 6.0;
                mask.push(x * x + y * y + z * z <= 1.0);
            }
        }
    }
    let grid = VoxelGrid::new(dims, [3.0; 3], mask)?;
    let map: Vec<f64> = (0..grid.n_voxels())
        .map(|v| {
            let [i, j, k] = grid.voxel_coords(v);
            let d2 = (i as f64 - 7.0).powi(2) + (j as f64 - 12.0).powi(2) + (k as f64 - 6.0).powi(2);
            (-d2 / 20.0).exp()
        })
        .collect();
    let files = render_slices(&map, &grid, Axis::Z, &out)?;
    println!("{} slices written to {}", files.len(), out.display());
    Ok(())
}
