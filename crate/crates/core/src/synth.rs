//! Seeded synthetic studies with planted encoding weights.
//!
//! Every random draw comes from its own ChaCha stream keyed by
//! `(kind, subject, run)`, so runs and subjects can be generated in any
//! order, in parallel, with identical results.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{build_design, ActivationMatrix, EventTable, FeatureDesign, FeatureError, HrfSpec};
use crate::io::{self, ArrayContainer, IoError, RunEntry, StudyManifest, SubjectEntry, VoxelGrid};
use crate::preprocess::{detrend_design, preprocess_run, BoldRun, PreprocessError};
use crate::voxelsel::{SelectionError, VoxelSet};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

type Result<T> = std::result::Result<T, SynthError>;

const STREAM_STIMULUS: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_BETA: u64 = 3;
const STREAM_EFFECT: u64 = 4;

const VOCABULARY: &[&str] = &[
    "the", "a", "of", "and", "to", "in", "he", "she", "was", "it", "prince", "rose", "planet", "said",
    ",", ".",
];

fn stream(seed: u64, kind: u64, subject: usize, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind << 48) | ((subject as u64) << 24) | run as u64);
    rng
}

/// Shape and signal strength of a synthetic study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_subjects: usize,
    pub n_runs: usize,
    pub n_scans_per_run: usize,
    /// Feature count.
    pub d: usize,
    /// In-mask voxel count.
    pub n_voxels: usize,
    pub n_signal_voxels: usize,
    pub noise_sd: f64,
    /// Standard deviation of the planted response in signal voxels.
    pub beta_scale: f64,
    pub n_tokens_per_run: usize,
    pub tr_seconds: f64,
    pub voxel_size_mm: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 42,
            n_subjects: 5,
            n_runs: 9,
            n_scans_per_run: 100,
            d: 20,
            n_voxels: 200,
            n_signal_voxels: 20,
            noise_sd: 1.0,
            beta_scale: 1.0,
            n_tokens_per_run: 150,
            tr_seconds: 2.0,
            voxel_size_mm: 3.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_string()));
        if self.n_runs < 3 {
            return bad("n_runs must be at least 3");
        }
        if self.n_subjects == 0 || self.d == 0 || self.n_voxels == 0 || self.n_tokens_per_run == 0 {
            return bad("counts must be positive");
        }
        if self.n_scans_per_run < 3 {
            return bad("n_scans_per_run must be at least 3");
        }
        if self.n_signal_voxels > self.n_voxels {
            return bad("n_signal_voxels exceeds n_voxels");
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be finite and non-negative");
        }
        if !self.beta_scale.is_finite() {
            return bad("beta_scale must be finite");
        }
        if !(self.tr_seconds > 0.0 && self.voxel_size_mm > 0.0) {
            return bad("tr_seconds and voxel_size_mm must be positive");
        }
        Ok(())
    }

    pub fn run_duration_s(&self) -> f64 {
        self.n_scans_per_run as f64 * self.tr_seconds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Features by voxels; zero outside the signal set.
    pub beta_true: DMatrix<f64>,
    pub signal_set: VoxelSet,
}

/// A generated study held in memory.
#[derive(Debug, Clone)]
pub struct SynthStudy {
    pub spec: SynthSpec,
    pub grid: VoxelGrid,
    /// Per run, shared by all subjects.
    pub events: Vec<EventTable>,
    pub activations: Vec<DMatrix<f64>>,
    /// Per run, detrended like the BOLD.
    pub designs: Vec<FeatureDesign>,
    /// `bold[subject][run]`, preprocessed.
    pub bold: Vec<Vec<BoldRun>>,
    pub truth: GroundTruth,
}

/// Smallest cube holding `n` cells, with the first `n` cells in the mask.
pub fn synth_grid(n_voxels: usize, voxel_size_mm: f64) -> Result<VoxelGrid> {
    let mut side = 1;
    while side * side * side < n_voxels {
        side += 1;
    }
    let mask = (0..side * side * side).map(|c| c < n_voxels).collect();
    Ok(VoxelGrid::new([side; 3], [voxel_size_mm; 3], mask)?)
}

/// The `n` voxels closest to the grid center, ties to the lower index.
fn central_voxels(grid: &VoxelGrid, n: usize, source: &str) -> Result<VoxelSet> {
    let dims = grid.dims();
    let center: Vec<f64> = dims.iter().map(|&d| (d as f64 - 1.0) / 2.0).collect();
    let mut order: Vec<(f64, usize)> = (0..grid.n_voxels())
        .map(|v| {
            let c = grid.voxel_coords(v);
            let d2 = (0..3).map(|a| (c[a] as f64 - center[a]).powi(2)).sum();
            (d2, v)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(VoxelSet::new(
        order[..n].iter().map(|p| p.1).collect(),
        grid.n_voxels(),
        source,
    )?)
}

fn gen_events(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<EventTable> {
    let duration = spec.run_duration_s();
    let n = spec.n_tokens_per_run;
    let mut onsets: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * duration * 0.98).collect();
    onsets.sort_by(f64::total_cmp);
    let tokens: Vec<String> = (0..n)
        .map(|_| VOCABULARY[rng.random_range(0..VOCABULARY.len())].to_string())
        .collect();
    let offsets: Vec<f64> = (0..n)
        .map(|i| {
            let length = rng.random_range(0.15..0.45);
            let next = onsets.get(i + 1).copied().unwrap_or(duration);
            (onsets[i] + f64::min(length, next - onsets[i])).min(duration)
        })
        .collect();
    EventTable::new(tokens, onsets, offsets).map_err(|e| SynthError::Invalid(e.to_string()))
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Mean column variance over all run designs.
fn design_variance(designs: &[FeatureDesign]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for d in designs {
        for col in d.values.column_iter() {
            let n = col.len() as f64;
            let m = col.sum() / n;
            total += col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

/// Random weights scaled so voxel `v`'s response has standard deviation
/// near `scales[v]`.
fn planted_weights(
    spec: &SynthSpec,
    designs: &[FeatureDesign],
    scales: &[f64],
    kind: u64,
) -> DMatrix<f64> {
    let unit = 1.0 / (spec.d as f64 * design_variance(designs)).sqrt();
    let mut rng = stream(spec.seed, kind, 0, 0);
    let z = gaussian(&mut rng, spec.d, spec.n_voxels);
    DMatrix::from_fn(spec.d, spec.n_voxels, |j, v| z[(j, v)] * unit * scales[v])
}

fn simulate_bold(spec: &SynthSpec, designs: &[FeatureDesign], beta: &DMatrix<f64>) -> Result<Vec<Vec<BoldRun>>> {
    (0..spec.n_subjects)
        .into_par_iter()
        .map(|s| {
            (0..spec.n_runs)
                .map(|r| {
                    let mut rng = stream(spec.seed, STREAM_NOISE, s, r);
                    let noise = gaussian(&mut rng, spec.n_scans_per_run, spec.n_voxels);
                    let raw = &designs[r].values * beta + noise * spec.noise_sd;
                    let (run, degenerate) = preprocess_run(&raw, spec.tr_seconds)?;
                    if !degenerate.is_empty() {
                        log::debug!("subject {s} run {r}: {} constant voxels", degenerate.len());
                    }
                    Ok(run)
                })
                .collect()
        })
        .collect()
}

/// Generates a study in memory.
///
/// Stimuli (events and activations) are shared across subjects; noise is
/// independent per subject and run. BOLD is `design · beta_true + noise`,
/// then detrended and standardized per voxel.
pub fn generate(spec: &SynthSpec) -> Result<SynthStudy> {
    spec.validate()?;
    let grid = synth_grid(spec.n_voxels, spec.voxel_size_mm)?;
    let signal_set = central_voxels(&grid, spec.n_signal_voxels, "signal")?;
    let hrf = HrfSpec::default();

    let stimuli: Vec<(EventTable, DMatrix<f64>, FeatureDesign)> = (0..spec.n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(spec.seed, STREAM_STIMULUS, 0, r);
            let events = gen_events(spec, &mut rng)?;
            let act = gaussian(&mut rng, spec.n_tokens_per_run, spec.d);
            let design = build_design(
                &ActivationMatrix::single_layer(act.clone())?,
                &events,
                &hrf,
                spec.tr_seconds,
                spec.n_scans_per_run,
            )?;
            Ok((events, act, detrend_design(&design)?))
        })
        .collect::<Result<_>>()?;
    let mut events = Vec::with_capacity(spec.n_runs);
    let mut activations = Vec::with_capacity(spec.n_runs);
    let mut designs = Vec::with_capacity(spec.n_runs);
    for (e, a, d) in stimuli {
        events.push(e);
        activations.push(a);
        designs.push(d);
    }

    let scales: Vec<f64> = (0..spec.n_voxels)
        .map(|v| if signal_set.contains(v) { spec.beta_scale } else { 0.0 })
        .collect();
    let beta_true = planted_weights(spec, &designs, &scales, STREAM_BETA);
    let bold = simulate_bold(spec, &designs, &beta_true)?;
    Ok(SynthStudy {
        spec: spec.clone(),
        grid,
        events,
        activations,
        designs,
        bold,
        truth: GroundTruth {
            beta_true,
            signal_set,
        },
    })
}

/// Two studies on the same stimuli and noise; study B's weights are A's plus
/// a random response of standard deviation `effect[v]` in every voxel.
pub fn gen_paired_study(spec: &SynthSpec, effect: &[f64]) -> Result<(SynthStudy, SynthStudy)> {
    if effect.len() != spec.n_voxels {
        return Err(SynthError::Invalid(format!(
            "effect map has {} values for {} voxels",
            effect.len(),
            spec.n_voxels
        )));
    }
    let a = generate(spec)?;
    let extra = planted_weights(spec, &a.designs, effect, STREAM_EFFECT);
    let beta_b = &a.truth.beta_true + extra;
    let mut b = a.clone();
    b.bold = simulate_bold(spec, &a.designs, &beta_b)?;
    let idx: Vec<usize> = (0..spec.n_voxels)
        .filter(|&v| a.truth.signal_set.contains(v) || effect[v] != 0.0)
        .collect();
    b.truth = GroundTruth {
        beta_true: beta_b,
        signal_set: VoxelSet::new(idx, spec.n_voxels, "signal")?,
    };
    Ok((a, b))
}

impl SynthStudy {
    pub fn subject_id(s: usize) -> String {
        format!("sub-{:02}", s + 1)
    }

    /// Writes the study under `dir` and returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["stim", "truth"] {
            create_dir(&dir.join(sub))?;
        }
        io::write_array(dir.join("mask.npy"), &self.grid.mask_array())?;
        for r in 0..self.spec.n_runs {
            io::write_matrix(dir.join(stim_path(r, "activations.npy")), &self.activations[r])?;
            io::write_events(dir.join(stim_path(r, "events.csv")), &self.events[r])?;
        }
        let mut subjects = Vec::with_capacity(self.spec.n_subjects);
        for (s, runs) in self.bold.iter().enumerate() {
            let id = Self::subject_id(s);
            create_dir(&dir.join(&id))?;
            let mut entries = Vec::with_capacity(runs.len());
            for (r, run) in runs.iter().enumerate() {
                let bold = PathBuf::from(&id).join(format!("run{:02}_bold.npy", r + 1));
                io::write_matrix(dir.join(&bold), &run.values)?;
                entries.push(RunEntry {
                    bold,
                    activations: stim_path(r, "activations.npy"),
                    events: stim_path(r, "events.csv"),
                    design: None,
                });
            }
            subjects.push(SubjectEntry { id, runs: entries });
        }
        io::write_array(
            dir.join("truth/beta_true.npy"),
            &ArrayContainer::from_matrix(&self.truth.beta_true),
        )?;
        self.truth.signal_set.write_json(dir.join("truth/signal_set.json"))?;
        io::write_text(
            &dir.join("synth_spec.json"),
            &(serde_json::to_string_pretty(&self.spec).expect("spec serializes") + "\n"),
        )?;
        let manifest = StudyManifest {
            subjects,
            runs_per_subject: self.spec.n_runs,
            tr_seconds: self.spec.tr_seconds,
            mask: PathBuf::from("mask.npy"),
            voxel_size_mm: [self.spec.voxel_size_mm; 3],
            layer_spans: None,
            model: Some("synthetic".into()),
            base_dir: dir.to_path_buf(),
        };
        let path = dir.join("manifest.json");
        io::write_manifest(&path, &manifest)?;
        Ok(path)
    }
}

fn stim_path(run: usize, name: &str) -> PathBuf {
    PathBuf::from("stim").join(format!("run{:02}_{name}", run + 1))
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| {
        SynthError::Io(IoError::File {
            path: p.to_path_buf(),
            source: e,
        })
    })
}

/// Generates and writes a study; returns the manifest path and ground truth.
pub fn gen_study(spec: &SynthSpec, dir: &Path) -> Result<(PathBuf, GroundTruth)> {
    let study = generate(spec)?;
    let path = study.write(dir)?;
    Ok((path, study.truth))
}
