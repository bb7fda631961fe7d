//! BOLD cleaning and mask construction.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::features::FeatureDesign;
use crate::io::{IoError, VoxelGrid};

/// Population variance at or below this counts as constant.
pub const MIN_VARIANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("series of length {0} is too short to detrend (need at least 3)")]
    TooShort(usize),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("mask threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("no cell passes the mask threshold")]
    EmptyMask,
    #[error("usability table is malformed: {0}")]
    BadUsability(String),
    #[error("invalid grid: {0}")]
    Grid(String),
}

type Result<T> = std::result::Result<T, PreprocessError>;

/// Removes the least-squares line `a + b*t`, `t = 0..T`.
pub fn linear_detrend(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len();
    if n < 3 {
        return Err(PreprocessError::TooShort(n));
    }
    let t_mean = (n - 1) as f64 / 2.0;
    let y_mean = series.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (t, &y) in series.iter().enumerate() {
        let tc = t as f64 - t_mean;
        sxy += tc * (y - y_mean);
        sxx += tc * tc;
    }
    let slope = sxy / sxx;
    Ok(series
        .iter()
        .enumerate()
        .map(|(t, &y)| y - y_mean - slope * (t as f64 - t_mean))
        .collect())
}

/// Zero mean, unit population variance.
pub fn standardize(series: &[f64]) -> Result<Vec<f64>> {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
    if !(var > MIN_VARIANCE) {
        return Err(PreprocessError::ZeroVariance);
    }
    let sd = var.sqrt();
    Ok(series.iter().map(|y| (y - mean) / sd).collect())
}

/// Scans-by-voxels BOLD for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldRun {
    pub values: DMatrix<f64>,
    pub tr_seconds: f64,
}

impl BoldRun {
    pub fn n_scans(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.values.ncols()
    }
}

/// Detrends then standardizes every voxel of a run.
///
/// Constant voxels are zeroed and listed in the second return value rather
/// than failing the whole run.
pub fn preprocess_run(raw: &DMatrix<f64>, tr_seconds: f64) -> Result<(BoldRun, Vec<usize>)> {
    if raw.nrows() < 3 {
        return Err(PreprocessError::TooShort(raw.nrows()));
    }
    let cols: Vec<Option<Vec<f64>>> = (0..raw.ncols())
        .into_par_iter()
        .map(|v| {
            let series: Vec<f64> = raw.column(v).iter().copied().collect();
            let detrended = linear_detrend(&series)?;
            match standardize(&detrended) {
                Ok(s) => Ok(Some(s)),
                Err(PreprocessError::ZeroVariance) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut values = DMatrix::zeros(raw.nrows(), raw.ncols());
    let mut degenerate = Vec::new();
    for (v, col) in cols.into_iter().enumerate() {
        match col {
            Some(c) => values.column_mut(v).copy_from_slice(&c),
            None => degenerate.push(v),
        }
    }
    Ok((BoldRun { values, tr_seconds }, degenerate))
}

/// Applies the BOLD linear detrend to every design column so regressors and
/// responses share the same temporal filtering.
pub fn detrend_design(design: &FeatureDesign) -> Result<FeatureDesign> {
    let mut values = design.values.clone();
    for mut col in values.column_iter_mut() {
        let series: Vec<f64> = col.iter().copied().collect();
        col.copy_from_slice(&linear_detrend(&series)?);
    }
    Ok(FeatureDesign {
        values,
        tr_seconds: design.tr_seconds,
        centered: true,
    })
}

/// Keeps grid cells usable in at least `threshold` of subjects.
///
/// `usable[s][g]` says whether subject `s` has signal in cell `g`.
pub fn build_mask(
    usable: &[Vec<bool>],
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    threshold: f64,
) -> Result<VoxelGrid> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(PreprocessError::BadThreshold(threshold));
    }
    let n_cells: usize = dims.iter().product();
    if usable.is_empty() || usable.iter().any(|u| u.len() != n_cells) {
        return Err(PreprocessError::BadUsability(format!(
            "expected {} subjects x {n_cells} cells",
            usable.len()
        )));
    }
    let n_subjects = usable.len();
    let mask: Vec<bool> = (0..n_cells)
        .map(|g| {
            let count = usable.iter().filter(|u| u[g]).count();
            // compare counts, not fractions, to avoid rounding at the boundary
            count as f64 >= threshold * n_subjects as f64 - 1e-9
        })
        .collect();
    if !mask.iter().any(|&m| m) {
        return Err(PreprocessError::EmptyMask);
    }
    VoxelGrid::new(dims, voxel_size_mm, mask).map_err(|e: IoError| PreprocessError::Grid(e.to_string()))
}
