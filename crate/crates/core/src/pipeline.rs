//! Manifest-driven stages of the analysis, each reading and writing files.

use std::collections::BTreeMap;
use std::path::{Component, Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::encoding::{make_cv_plan, nested_cv_fit, CvResult, LambdaGrid, RMap};
use crate::features::{build_design, ActivationMatrix, FeatureDesign, HrfSpec};
use crate::groupstats::{group_analysis, GroupConfig, StatMap};
use crate::io::{self, IoError, StudyManifest, VoxelGrid};
use crate::preprocess::{detrend_design, preprocess_run, BoldRun};
use crate::voxelsel::{srm_fit, srm_reliability, top_percentile, SrmConfig, VoxelSet};
use crate::Result;

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| {
        IoError::File {
            path: p.to_path_buf(),
            source: e,
        }
        .into()
    })
}

/// `target` relative to directory `base`; both are made absolute first.
fn relative_path(target: &Path, base: &Path) -> Result<PathBuf> {
    let abs = |p: &Path| {
        std::fs::canonicalize(p).map_err(|e| IoError::File {
            path: p.to_path_buf(),
            source: e,
        })
    };
    let (t, b) = (abs(target)?, abs(base)?);
    let tc: Vec<Component> = t.components().collect();
    let bc: Vec<Component> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(IoError::Json)?;
    Ok(io::write_text(path, &(text + "\n"))?)
}

/// Builds a run's design from its activations and events.
pub fn design_for_run(
    manifest: &StudyManifest,
    activations: &Path,
    events: &Path,
    n_scans: usize,
    hrf: &HrfSpec,
) -> Result<FeatureDesign> {
    let values = io::read_matrix(manifest.resolve(activations))?;
    let events = io::read_events(manifest.resolve(events))?;
    let act = match &manifest.layer_spans {
        Some(spans) => ActivationMatrix::new(values, spans.clone())?,
        None => ActivationMatrix::single_layer(values)?,
    };
    Ok(build_design(&act, &events, hrf, manifest.tr_seconds, n_scans)?)
}

fn n_scans_of(manifest: &StudyManifest, bold: &Path) -> Result<usize> {
    let arr = io::read_array(manifest.resolve(bold))?;
    Ok(arr.shape()[0])
}

/// Writes one design per distinct (activations, events, length) and a copy of
/// the manifest under `out_dir` pointing at them. Returns the new manifest path.
pub fn build_designs(manifest: &StudyManifest, hrf: &HrfSpec, out_dir: &Path) -> Result<PathBuf> {
    create_dir(&out_dir.join("designs"))?;
    let mut built: BTreeMap<(PathBuf, PathBuf, usize), PathBuf> = BTreeMap::new();
    let mut out = manifest.clone();
    for subject in out.subjects.iter_mut() {
        for run in subject.runs.iter_mut() {
            let n_scans = n_scans_of(manifest, &run.bold)?;
            let key = (run.activations.clone(), run.events.clone(), n_scans);
            let rel = match built.get(&key) {
                Some(p) => p.clone(),
                None => {
                    let design = design_for_run(manifest, &run.activations, &run.events, n_scans, hrf)?;
                    let rel = PathBuf::from("designs").join(format!("design{:03}.npy", built.len() + 1));
                    io::write_matrix(out_dir.join(&rel), &design.values)?;
                    built.insert(key, rel.clone());
                    rel
                }
            };
            run.design = Some(rel);
            run.bold = relative_path(&manifest.resolve(&run.bold), out_dir)?;
            run.activations = relative_path(&manifest.resolve(&run.activations), out_dir)?;
            run.events = relative_path(&manifest.resolve(&run.events), out_dir)?;
        }
    }
    out.mask = relative_path(&manifest.resolve(&manifest.mask), out_dir)?;
    out.base_dir = out_dir.to_path_buf();
    let path = out_dir.join("manifest.json");
    io::write_manifest(&path, &out)?;
    log::info!("wrote {} designs", built.len());
    Ok(path)
}

/// Model-ready designs and preprocessed BOLD for one subject.
pub fn load_subject(
    manifest: &StudyManifest,
    subject: usize,
    hrf: &HrfSpec,
) -> Result<(Vec<FeatureDesign>, Vec<BoldRun>)> {
    let entry = &manifest.subjects[subject];
    let mut designs = Vec::with_capacity(entry.runs.len());
    let mut bold = Vec::with_capacity(entry.runs.len());
    for (r, run) in entry.runs.iter().enumerate() {
        let raw = io::read_matrix(manifest.resolve(&run.bold))?;
        let (b, degenerate) = preprocess_run(&raw, manifest.tr_seconds)?;
        if !degenerate.is_empty() {
            log::warn!("{} run {}: {} constant voxels", entry.id, r + 1, degenerate.len());
        }
        let design = match &run.design {
            Some(p) => FeatureDesign {
                values: io::read_matrix(manifest.resolve(p))?,
                tr_seconds: manifest.tr_seconds,
                centered: true,
            },
            None => design_for_run(manifest, &run.activations, &run.events, raw.nrows(), hrf)?,
        };
        designs.push(detrend_design(&design)?);
        bold.push(b);
    }
    Ok((designs, bold))
}

/// Nested cross-validation over all runs of one subject.
pub fn fit_subject(designs: &[FeatureDesign], bold: &[BoldRun], lambdas: &LambdaGrid) -> Result<CvResult> {
    let plan = make_cv_plan(designs.len())?;
    Ok(nested_cv_fit(designs, bold, lambdas, &plan)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SubjectFitSummary {
    pub subject: String,
    pub rmap: PathBuf,
    pub mean_r: f64,
    pub n_excluded: usize,
    pub lambda_histogram: Vec<(f64, usize)>,
}

/// Fits every subject and writes `rmaps/<id>_rmap.npy` under `out_dir`.
pub fn fit_manifest(
    manifest: &StudyManifest,
    lambdas: &LambdaGrid,
    hrf: &HrfSpec,
    out_dir: &Path,
) -> Result<Vec<SubjectFitSummary>> {
    let grid = manifest.grid()?;
    create_dir(&out_dir.join("rmaps"))?;
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for (s, entry) in manifest.subjects.iter().enumerate() {
        let (designs, bold) = load_subject(manifest, s, hrf)?;
        let fit = fit_subject(&designs, &bold, lambdas)?;
        let rel = PathBuf::from("rmaps").join(format!("{}_rmap.npy", entry.id));
        io::write_map(&fit.rmap.values, &grid, out_dir.join(&rel))?;
        let finite: Vec<f64> = fit.rmap.values.iter().copied().filter(|x| x.is_finite()).collect();
        let summary = SubjectFitSummary {
            subject: entry.id.clone(),
            rmap: rel,
            mean_r: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            n_excluded: fit.rmap.excluded.len(),
            lambda_histogram: fit.lambda_histogram(lambdas),
        };
        log::info!("{}: mean R {:.4}", entry.id, summary.mean_r);
        out.push(summary);
    }
    Ok(out)
}

/// Reads per-subject maps that share one grid.
pub fn read_maps(paths: &[PathBuf]) -> Result<(Vec<Vec<f64>>, VoxelGrid)> {
    let mut grid: Option<VoxelGrid> = None;
    let mut maps = Vec::with_capacity(paths.len());
    for p in paths {
        let (values, g) = io::read_map(p)?;
        match &grid {
            Some(g0) if *g0 != g => {
                return Err(crate::Error::Usage(format!("{} is on a different grid", p.display())))
            }
            None => grid = Some(g),
            _ => {}
        }
        maps.push(values);
    }
    let grid = grid.ok_or_else(|| crate::Error::Usage("no maps given".into()))?;
    Ok((maps, grid))
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub n_subjects: usize,
    pub n_voxels: usize,
    pub df: usize,
    pub alpha_voxel: f64,
    pub n_survived: usize,
    pub n_flagged: usize,
    pub survived: Vec<usize>,
}

/// Group test of subject maps (or of `maps − minus` when given); writes
/// t, p, mean and survived maps plus `group.json` under `out_dir`.
pub fn group_stage(
    maps: &[PathBuf],
    minus: Option<&[PathBuf]>,
    config: &GroupConfig,
    out_dir: &Path,
) -> Result<(StatMap, GroupSummary)> {
    let (mut values, grid) = read_maps(maps)?;
    if let Some(b) = minus {
        let (other, g2) = read_maps(b)?;
        if g2 != grid || other.len() != values.len() {
            return Err(crate::Error::Usage("contrast maps do not align".into()));
        }
        for (a, b) in values.iter_mut().zip(&other) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x -= y);
        }
    }
    let stat = group_analysis(&values, &grid, config)?;
    create_dir(out_dir)?;
    io::write_map(&stat.t_values, &grid, out_dir.join("group_t.npy"))?;
    io::write_map(&stat.p_values, &grid, out_dir.join("group_p.npy"))?;
    io::write_map(&stat.mean, &grid, out_dir.join("group_mean.npy"))?;
    let survived: Vec<f64> = stat.survived.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    io::write_map(&survived, &grid, out_dir.join("group_survived.npy"))?;
    let summary = GroupSummary {
        n_subjects: values.len(),
        n_voxels: grid.n_voxels(),
        df: stat.df,
        alpha_voxel: stat.alpha_voxel,
        n_survived: stat.n_survived(),
        n_flagged: stat.flagged.len(),
        survived: stat.survived_indices(),
    };
    write_json(&out_dir.join("group.json"), &summary)?;
    Ok((stat, summary))
}

fn stack_rows(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks[0].ncols();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Shared-response reliability over the mask and its top-`pct` voxel set.
///
/// The model is fit on each subject's first `ceil(n_runs / 2)` preprocessed
/// runs; reliability is measured on the remaining runs.
pub fn srm_selection(
    manifest: &StudyManifest,
    config: &SrmConfig,
    pct: f64,
) -> Result<(RMap, VoxelSet)> {
    let n_runs = manifest.runs_per_subject;
    let n_fit = n_runs.div_ceil(2);
    let mut train = Vec::with_capacity(manifest.subjects.len());
    let mut test = Vec::with_capacity(manifest.subjects.len());
    for entry in &manifest.subjects {
        let runs: Vec<DMatrix<f64>> = entry
            .runs
            .iter()
            .map(|r| {
                let raw = io::read_matrix(manifest.resolve(&r.bold))?;
                Ok(preprocess_run(&raw, manifest.tr_seconds)?.0.values)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&DMatrix<f64>> = runs.iter().collect();
        train.push(stack_rows(&refs[..n_fit]));
        test.push(stack_rows(&refs[n_fit..]));
    }
    let model = srm_fit(&train, config)?;
    let reliability = srm_reliability(&model, &test)?;
    let set = top_percentile(&reliability.values, pct, &format!("SRM{}", pct.round()))?;
    Ok((reliability, set))
}

/// Writes a voxel set as JSON and its indicator map beside it.
pub fn write_set(set: &VoxelSet, grid: &VoxelGrid, path: &Path) -> Result<()> {
    set.write_json(path)?;
    let mut ind = vec![0.0; grid.n_voxels()];
    for &v in &set.indices {
        ind[v] = 1.0;
    }
    io::write_map(&ind, grid, path.with_extension("npy"))?;
    Ok(())
}
