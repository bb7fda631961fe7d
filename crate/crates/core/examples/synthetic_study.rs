//! The whole analysis on a synthetic study written to disk: designs, fits,
//! group test, reliability selection and scores.
//!
//! cargo run --release --example synthetic_study [out_dir]

use std::path::PathBuf;

use brainfit::encoding::LambdaGrid;
use brainfit::features::HrfSpec;
use brainfit::groupstats::GroupConfig;
use brainfit::io;
use brainfit::pipeline::{build_designs, fit_manifest, group_stage, srm_selection, write_set};
use brainfit::synth::{gen_study, SynthSpec};
use brainfit::voxelsel::{brain_score, SrmConfig};

fn main() -> brainfit::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("brainfit-study"));
    let spec = SynthSpec::default();
    let (manifest_path, truth) = gen_study(&spec, &out.join("synth"))?;
    println!("study written to {}", manifest_path.display());

    let hrf = HrfSpec::default();
    let manifest = io::read_manifest(&manifest_path)?;
    let with_designs = build_designs(&manifest, &hrf, &out.join("design"))?;
    let manifest = io::read_manifest(&with_designs)?;

    let fits = fit_manifest(&manifest, &LambdaGrid::standard(), &hrf, &out.join("fit"))?;
    for f in &fits {
        println!("{}: mean R {:.4}, {} excluded voxels", f.subject, f.mean_r, f.n_excluded);
    }

    let maps: Vec<PathBuf> = fits.iter().map(|f| out.join("fit").join(&f.rmap)).collect();
    let config = GroupConfig {
        fwhm_mm: spec.voxel_size_mm,
        ..GroupConfig::default()
    };
    let (_, group) = group_stage(&maps, None, &config, &out.join("group"))?;
    let recovered = group.survived.iter().filter(|&&v| truth.signal_set.contains(v)).count();
    println!(
        "group: {} survivors, {recovered} of {} planted voxels",
        group.n_survived,
        truth.signal_set.len()
    );

    let (_, set) = srm_selection(&manifest, &SrmConfig::default(), 25.0)?;
    write_set(&set, &manifest.grid()?, &out.join("srm25.json"))?;
    let scores: Vec<f64> = maps
        .iter()
        .map(|p| Ok(brain_score(&io::read_map(p)?.0, &set)?))
        .collect::<brainfit::Result<_>>()?;
    println!("brain scores within {}: {scores:.4?}", set.source);
    Ok(())
}
