//! Group-level inference over per-subject voxel maps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::VoxelGrid;
use crate::special::student_t_sf;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("FWHM must be positive, got {0}")]
    BadFwhm(f64),
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("need at least 3 subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("voxel count must be at least 1")]
    NoVoxels,
    #[error("map has {found} voxels, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("subject lists differ: {0} vs {1}")]
    SubjectMismatch(usize, usize),
}

type Result<T> = std::result::Result<T, StatsError>;

/// Which alternative the p-values test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tail {
    /// Mean greater than zero.
    #[default]
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatMap {
    pub t_values: Vec<f64>,
    pub p_values: Vec<f64>,
    pub df: usize,
    pub tail: Tail,
    /// Per-voxel level the p-values were compared against.
    pub alpha_voxel: f64,
    pub survived: Vec<bool>,
    /// Voxels with zero across-subject spread or a missing subject value.
    pub flagged: Vec<usize>,
    /// Mean across subjects of the (smoothed) maps.
    pub mean: Vec<f64>,
}

impl StatMap {
    pub fn n_voxels(&self) -> usize {
        self.t_values.len()
    }

    pub fn n_survived(&self) -> usize {
        self.survived.iter().filter(|&&s| s).count()
    }

    pub fn survived_indices(&self) -> Vec<usize> {
        self.survived
            .iter()
            .enumerate()
            .filter_map(|(v, &s)| s.then_some(v))
            .collect()
    }

    /// Marks voxels with `p <= alpha_voxel`.
    pub fn threshold(&mut self, alpha_voxel: f64) {
        self.alpha_voxel = alpha_voxel;
        self.survived = self.p_values.iter().map(|&p| p <= alpha_voxel).collect();
    }
}

/// Per-voxel significance level `alpha / V`.
pub fn bonferroni(alpha: f64, n_voxels: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    if n_voxels == 0 {
        return Err(StatsError::NoVoxels);
    }
    Ok(alpha / n_voxels as f64)
}

pub fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

/// Unnormalized Gaussian weights on `-r..=r`, `r = floor(4σ)` in voxels.
fn kernel_1d(sigma_vox: f64) -> Vec<f64> {
    let r = (4.0 * sigma_vox).floor() as i64;
    (-r..=r)
        .map(|x| (-(x as f64).powi(2) / (2.0 * sigma_vox * sigma_vox)).exp())
        .collect()
}

fn convolve_axis(vol: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    if r == 0 {
        return vol.to_vec();
    }
    let strides = [dims[1] * dims[2], dims[2], 1];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let n = dims[axis] as i64;
    let lines: Vec<(usize, Vec<f64>)> = (0..dims[a] * dims[b])
        .into_par_iter()
        .map(|line| {
            let base = (line / dims[b]) * strides[a] + (line % dims[b]) * strides[b];
            let src: Vec<f64> = (0..dims[axis]).map(|p| vol[base + p * strides[axis]]).collect();
            let out = (0..n)
                .map(|p| {
                    let lo = (p - r).max(0);
                    let hi = (p + r).min(n - 1);
                    (lo..=hi)
                        .map(|q| kernel[(q - p + r) as usize] * src[q as usize])
                        .sum()
                })
                .collect();
            (base, out)
        })
        .collect();
    let mut result = vec![0.0; vol.len()];
    for (base, out) in lines {
        for (p, x) in out.into_iter().enumerate() {
            result[base + p * strides[axis]] = x;
        }
    }
    result
}

/// Mask-aware separable Gaussian smoothing of a voxel map.
///
/// Kernel weight falling outside the mask, or on NaN voxels, is dropped and
/// the rest renormalized. NaN voxels stay NaN.
pub fn smooth_gaussian(map: &[f64], grid: &VoxelGrid, fwhm_mm: f64) -> Result<Vec<f64>> {
    if !(fwhm_mm > 0.0 && fwhm_mm.is_finite()) {
        return Err(StatsError::BadFwhm(fwhm_mm));
    }
    if map.len() != grid.n_voxels() {
        return Err(StatsError::LengthMismatch {
            expected: grid.n_voxels(),
            found: map.len(),
        });
    }
    let dims = grid.dims();
    let sigma_mm = fwhm_to_sigma(fwhm_mm);
    let kernels: Vec<Vec<f64>> = grid
        .voxel_size_mm()
        .iter()
        .map(|&s| kernel_1d(sigma_mm / s))
        .collect();

    let mut num = vec![0.0; grid.n_cells()];
    let mut den = vec![0.0; grid.n_cells()];
    for (v, &x) in map.iter().enumerate() {
        if x.is_finite() {
            let c = grid.voxel_cell(v);
            num[c] = x;
            den[c] = 1.0;
        }
    }
    for (axis, k) in kernels.iter().enumerate() {
        num = convolve_axis(&num, dims, axis, k);
        den = convolve_axis(&den, dims, axis, k);
    }
    Ok(map
        .iter()
        .enumerate()
        .map(|(v, &x)| {
            let c = grid.voxel_cell(v);
            if x.is_finite() {
                num[c] / den[c]
            } else {
                f64::NAN
            }
        })
        .collect())
}

fn check_lengths<M: AsRef<[f64]>>(maps: &[M]) -> Result<usize> {
    let n = maps.first().map(|m| m.as_ref().len()).unwrap_or(0);
    for m in maps {
        if m.as_ref().len() != n {
            return Err(StatsError::LengthMismatch {
                expected: n,
                found: m.as_ref().len(),
            });
        }
    }
    Ok(n)
}

/// Voxelwise one-sample t-test of the subject maps against zero.
///
/// Voxels with zero spread or a NaN in some subject get `t = 0`, `p = 1`
/// and are listed in `flagged`. Nothing survives until [`StatMap::threshold`].
pub fn one_sample_ttest<M: AsRef<[f64]> + Sync>(maps: &[M], tail: Tail) -> Result<StatMap> {
    let s = maps.len();
    if s < 3 {
        return Err(StatsError::TooFewSubjects(s));
    }
    let n_vox = check_lengths(maps)?;
    let df = s - 1;
    let per_voxel: Vec<(f64, f64, f64, bool)> = (0..n_vox)
        .into_par_iter()
        .map(|v| {
            let xs: Vec<f64> = maps.iter().map(|m| m.as_ref()[v]).collect();
            let mean = xs.iter().sum::<f64>() / s as f64;
            if !mean.is_finite() {
                return (0.0, 1.0, f64::NAN, true);
            }
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / df as f64;
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + mean.abs())) {
                return (0.0, 1.0, mean, true);
            }
            let t = mean / (sd / (s as f64).sqrt());
            let p = match tail {
                Tail::Greater => student_t_sf(t, df as f64),
                Tail::TwoSided => (2.0 * student_t_sf(t.abs(), df as f64)).min(1.0),
            };
            (t, p.max(f64::MIN_POSITIVE), mean, false)
        })
        .collect();
    Ok(StatMap {
        t_values: per_voxel.iter().map(|x| x.0).collect(),
        p_values: per_voxel.iter().map(|x| x.1).collect(),
        df,
        tail,
        alpha_voxel: 0.0,
        survived: vec![false; n_vox],
        flagged: per_voxel
            .iter()
            .enumerate()
            .filter_map(|(v, x)| x.3.then_some(v))
            .collect(),
        mean: per_voxel.iter().map(|x| x.2).collect(),
    })
}

/// Smoothing width, family-wise alpha and tail for a group analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupConfig {
    pub fwhm_mm: f64,
    pub alpha: f64,
    pub tail: Tail,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            fwhm_mm: 6.0,
            alpha: 0.1,
            tail: Tail::Greater,
        }
    }
}

/// Smooths every subject map, t-tests across subjects and applies
/// Bonferroni over the mask.
pub fn group_analysis<M: AsRef<[f64]> + Sync>(
    maps: &[M],
    grid: &VoxelGrid,
    config: &GroupConfig,
) -> Result<StatMap> {
    let alpha_voxel = bonferroni(config.alpha, grid.n_voxels())?;
    if maps.len() < 3 {
        return Err(StatsError::TooFewSubjects(maps.len()));
    }
    let smoothed: Vec<Vec<f64>> = maps
        .par_iter()
        .map(|m| smooth_gaussian(m.as_ref(), grid, config.fwhm_mm))
        .collect::<Result<_>>()?;
    let mut stat = one_sample_ttest(&smoothed, config.tail)?;
    stat.threshold(alpha_voxel);
    Ok(stat)
}

fn difference_maps<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<Vec<Vec<f64>>> {
    if a.len() != b.len() {
        return Err(StatsError::SubjectMismatch(a.len(), b.len()));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (x, y) = (x.as_ref(), y.as_ref());
            if x.len() != y.len() {
                return Err(StatsError::LengthMismatch {
                    expected: x.len(),
                    found: y.len(),
                });
            }
            Ok(x.iter().zip(y).map(|(p, q)| p - q).collect())
        })
        .collect()
}

/// Group test of the per-subject differences `A − B`.
pub fn contrast_map<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    maps_a: &[A],
    maps_b: &[B],
    grid: &VoxelGrid,
    config: &GroupConfig,
) -> Result<StatMap> {
    group_analysis(&difference_maps(maps_a, maps_b)?, grid, config)
}

/// Group test of `(A_tr − A_un) − (B_tr − B_un)` per subject.
pub fn interaction_map<M: AsRef<[f64]>>(
    a_trained: &[M],
    a_untrained: &[M],
    b_trained: &[M],
    b_untrained: &[M],
    grid: &VoxelGrid,
    config: &GroupConfig,
) -> Result<StatMap> {
    let da = difference_maps(a_trained, a_untrained)?;
    let db = difference_maps(b_trained, b_untrained)?;
    contrast_map(&da, &db, grid, config)
}
