//! Nested cross-validated ridge on one synthetic subject.
//!
//! cargo run --release --example ridge_nested_cv

use brainfit::encoding::{make_cv_plan, nested_cv_fit, LambdaGrid};
use brainfit::synth::{generate, SynthSpec};

fn main() -> brainfit::Result<()> {
    let spec = SynthSpec {
        n_subjects: 1,
        ..SynthSpec::default()
    };
    let study = generate(&spec)?;
    let grid = LambdaGrid::standard();
    let plan = make_cv_plan(spec.n_runs)?;
    for f in plan.folds.iter().take(3) {
        println!("fold: test run {}, validation run {}, train {:?}", f.test, f.validation, f.train);
    }

    let fit = nested_cv_fit(&study.designs, &study.bold[0], &grid, &plan)?;
    let signal = &study.truth.signal_set;
    let mean = |keep: &dyn Fn(usize) -> bool| {
        let vals: Vec<f64> = (0..spec.n_voxels).filter(|&v| keep(v)).map(|v| fit.rmap.values[v]).collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    println!("mean R_test, signal voxels: {:.3}", mean(&|v| signal.contains(v)));
    println!("mean R_test, other voxels:  {:+.4}", mean(&|v| !signal.contains(v)));
    println!("chosen penalties over folds and voxels:");
    for (lambda, count) in fit.lambda_histogram(&grid) {
        println!("  {lambda:>12.2} {count:>5}");
    }
    Ok(())
}
