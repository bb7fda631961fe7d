//! Round-trips arrays, maps and event tables through their on-disk formats.
//!
//! cargo run --example arrays

use brainfit::features::EventTable;
use brainfit::io::{self, ArrayContainer, VoxelGrid};
use nalgebra::DMatrix;

fn main() -> brainfit::Result<()> {
    let dir = std::env::temp_dir().join("brainfit-arrays");
    std::fs::create_dir_all(&dir).expect("temp dir");

    let m = DMatrix::from_fn(4, 3, |r, c| (r * 3 + c) as f64);
    io::write_matrix(dir.join("m.npy"), &m)?;
    let back = io::read_matrix(dir.join("m.npy"))?;
    assert_eq!(m, back);
    let arr = ArrayContainer::from_matrix(&m);
    println!("matrix {:?} {:?}, {} bytes on disk", arr.shape(), arr.dtype(), arr.to_bytes().len());

    // a 4x4x4 volume with the inner 2x2x2 cube masked in
    let mask = (0..64)
        .map(|c| {
            let (i, j, k) = (c / 16, (c / 4) % 4, c % 4);
            (1..3).contains(&i) && (1..3).contains(&j) && (1..3).contains(&k)
        })
        .collect();
    let grid = VoxelGrid::new([4, 4, 4], [3.0; 3], mask)?;
    let map: Vec<f64> = (0..grid.n_voxels()).map(|v| v as f64 / 10.0).collect();
    io::write_map(&map, &grid, dir.join("map.npy"))?;
    let (values, g) = io::read_map(dir.join("map.npy"))?;
    assert_eq!(g, grid);
    println!("map of {} voxels, voxel 3 at cell {:?}: {}", values.len(), grid.voxel_coords(3), values[3]);

    let events = EventTable::new(
        vec!["once".into(), "upon".into(), "a".into(), "time".into()],
        vec![0.0, 0.4, 0.7, 0.9],
        vec![0.35, 0.65, 0.85, 1.3],
    )
    .expect("valid events");
    io::write_events(dir.join("events.csv"), &events)?;
    let back = io::read_events(dir.join("events.csv"))?;
    println!("{} events, last token {:?} ends at {} s", back.len(), back.tokens()[3], back.offsets()[3]);
    Ok(())
}
