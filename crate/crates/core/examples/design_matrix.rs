//! From per-token activations of a two-layer model to scan-aligned regressors.
//!
//! cargo run --example design_matrix

use brainfit::features::{build_design, concat_layers, hrf_kernel, EventTable, HrfSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> brainfit::Result<()> {
    let spec = HrfSpec::default();
    let h = hrf_kernel(&spec)?;
    let peak = (0..h.len()).max_by(|&a, &b| h[a].total_cmp(&h[b])).unwrap();
    println!("HRF: {} samples every {} s, peak at {:.1} s", h.len(), spec.dt_s, peak as f64 * spec.dt_s);

    // 300 words at about 3 per second over a 120 s run (60 scans at TR 2 s)
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n_words = 300;
    let mut t = 0.5;
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for _ in 0..n_words {
        let dur = rng.random_range(0.15..0.3);
        on.push(t);
        off.push(t + dur);
        t += dur + rng.random_range(0.02..0.1);
    }
    let tokens = (0..n_words).map(|i| format!("w{i}")).collect();
    let events = EventTable::new(tokens, on, off).expect("valid events");

    // embedding layer is 10x larger than the hidden layer; normalization evens them out
    let emb = DMatrix::from_fn(n_words, 8, |_, _| 10.0 * rng.sample::<f64, _>(StandardNormal));
    let hidden = DMatrix::from_fn(n_words, 4, |_, _| rng.sample::<f64, _>(StandardNormal));
    let act = concat_layers(&[emb, hidden])?;
    let design = build_design(&act, &events, &spec, 2.0, 60)?;

    println!("design: {} scans x {} features", design.n_scans(), design.n_features());
    for (name, cols) in [("embedding", 0..8), ("hidden", 8..12)] {
        let sd: f64 = cols
            .map(|j| design.values.column(j).variance().sqrt())
            .sum::<f64>()
            / if name == "hidden" { 4.0 } else { 8.0 };
        println!("  mean regressor sd, {name} layer: {sd:.3}");
    }
    let col_means: f64 = design.values.column_iter().map(|c| c.mean().abs()).fold(0.0, f64::max);
    println!("  max |column mean|: {col_means:.2e}");
    Ok(())
}
