//! Reliability-based voxel selection, overlaps and brain scores.
//!
//! cargo run --release --example srm_selection

use brainfit::encoding::{make_cv_plan, nested_cv_fit, LambdaGrid};
use brainfit::synth::{generate, SynthSpec};
use brainfit::voxelsel::{brain_score, overlap_percent, srm_fit, srm_reliability, top_percentile, SrmConfig};
use nalgebra::DMatrix;

fn stack(runs: &[brainfit::preprocess::BoldRun]) -> DMatrix<f64> {
    let rows = runs.iter().map(|r| r.n_scans()).sum();
    let mut out = DMatrix::zeros(rows, runs[0].n_voxels());
    let mut at = 0;
    for r in runs {
        out.rows_mut(at, r.n_scans()).copy_from(&r.values);
        at += r.n_scans();
    }
    out
}

fn main() -> brainfit::Result<()> {
    let spec = SynthSpec::default();
    let study = generate(&spec)?;
    let half = spec.n_runs.div_ceil(2);
    let train: Vec<_> = study.bold.iter().map(|b| stack(&b[..half])).collect();
    let test: Vec<_> = study.bold.iter().map(|b| stack(&b[half..])).collect();

    let model = srm_fit(&train, &SrmConfig::default())?;
    println!(
        "SRM k={}: objective {:.1} -> {:.1} over {} iterations",
        model.k,
        model.objective[0],
        model.objective.last().unwrap(),
        model.objective.len() - 1
    );
    let reliability = srm_reliability(&model, &test)?;
    let srm = top_percentile(&reliability.values, 10.0, "SRM10")?;
    let hit = srm.indices.iter().filter(|&&v| study.truth.signal_set.contains(v)).count();
    println!("SRM10: {} voxels, {hit} of them planted", srm.len());

    // per-subject R maps and their mean
    let grid = LambdaGrid::standard();
    let plan = make_cv_plan(spec.n_runs)?;
    let maps: Vec<Vec<f64>> = study
        .bold
        .iter()
        .map(|runs| Ok(nested_cv_fit(&study.designs, runs, &grid, &plan)?.rmap.values))
        .collect::<brainfit::Result<_>>()?;
    let mean: Vec<f64> = (0..spec.n_voxels)
        .map(|v| maps.iter().map(|m| m[v]).sum::<f64>() / maps.len() as f64)
        .collect();
    let top_mean = top_percentile(&mean, 10.0, "meanR10")?;
    let top_s1 = top_percentile(&maps[0], 10.0, "sub-01")?;
    print!("{}", overlap_percent(&[srm.clone(), top_mean, top_s1])?.to_csv());

    for (s, m) in maps.iter().enumerate() {
        println!("brain score sub-{:02}: {:.4}", s + 1, brain_score(m, &srm)?);
    }
    Ok(())
}
