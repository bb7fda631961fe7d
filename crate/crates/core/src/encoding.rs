//! Mass-univariate ridge encoding models with nested cross-validation.
//!
//! For every outer fold one run is held out for testing, a second one for
//! choosing the ridge penalty, and the remaining runs are stacked for
//! training. The penalty is chosen per voxel as the grid value with the
//! highest validation Pearson R; the fold score is the test R at that
//! penalty, and a voxel's R map value is the mean over folds.
//!
//! All penalties and voxels of a fold share one eigendecomposition of the
//! training Gram matrix `XᵀX = Q diag(s) Qᵀ`, so that
//! `β(λ) = Q diag(1 / (s + λ)) Qᵀ Xᵀy` costs a diagonal scaling per penalty.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureDesign;
use crate::preprocess::{BoldRun, MIN_VARIANCE};

/// Voxels handled per parallel work item. Fixed so that results never
/// depend on the number of threads.
const VOXEL_BLOCK: usize = 128;

/// Validation scores this close count as tied.
const R_TIE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("non-finite value in ridge inputs")]
    NonFinite,
    #[error("XᵀX is singular, a positive penalty is required")]
    Singular,
    #[error("eigendecomposition failed")]
    Eigen,
    #[error("penalty must be non-negative, got {0}")]
    BadLambda(f64),
    #[error("invalid penalty grid: {0}")]
    BadGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("cross-validation needs at least 3 runs, got {0}")]
    TooFewRuns(usize),
    #[error("plan covers {plan} runs, data has {data}")]
    PlanMismatch { plan: usize, data: usize },
}

type Result<T> = std::result::Result<T, EncodingError>;

/// Strictly increasing positive ridge penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    values: Vec<f64>,
}

impl LambdaGrid {
    /// Ten penalties log-spaced from 10 to 1e5, endpoints exact.
    pub fn standard() -> Self {
        Self::log_spaced(10.0, 1e5, 10).expect("valid default grid")
    }

    pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && n >= 2) {
            return Err(EncodingError::BadGrid(format!("lo={lo} hi={hi} n={n}")));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let mut values: Vec<f64> = (0..n)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
            .collect();
        values[0] = lo;
        values[n - 1] = hi;
        Self::new(values)
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EncodingError::BadGrid(format!("{values:?}")));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(EncodingError::BadGrid("not strictly increasing".into()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Eigendecomposition of a Gram matrix, reusable across penalties.
#[derive(Debug, Clone)]
pub struct RidgeEigen {
    basis: DMatrix<f64>,
    eigenvalues: DVector<f64>,
}

impl RidgeEigen {
    pub fn from_gram(gram: DMatrix<f64>) -> Result<Self> {
        if gram.iter().any(|v| !v.is_finite()) {
            return Err(EncodingError::NonFinite);
        }
        let eig = nalgebra::linalg::SymmetricEigen::try_new(gram, f64::EPSILON, 0)
            .ok_or(EncodingError::Eigen)?;
        // PSD up to rounding
        let eigenvalues = eig.eigenvalues.map(|s| s.max(0.0));
        Ok(Self {
            basis: eig.eigenvectors,
            eigenvalues,
        })
    }

    pub fn from_design(x: &DMatrix<f64>) -> Result<Self> {
        Self::from_gram(x.tr_mul(x))
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `1 / (s + λ)` for every eigenvalue.
    pub fn shrinkage(&self, lambda: f64) -> Result<DVector<f64>> {
        if !(lambda >= 0.0) {
            return Err(EncodingError::BadLambda(lambda));
        }
        if lambda == 0.0 {
            let max = self.eigenvalues.max();
            if self.eigenvalues.min() <= 1e-12 * max.max(f64::MIN_POSITIVE) {
                return Err(EncodingError::Singular);
            }
        }
        Ok(self.eigenvalues.map(|s| 1.0 / (s + lambda)))
    }

    /// Coefficients `β = Q diag(1/(s+λ)) Qᵀ (XᵀY)`.
    pub fn solve(&self, xty: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
        let mut z = self.basis.tr_mul(xty);
        let shrink = self.shrinkage(lambda)?;
        for (mut row, &f) in z.row_iter_mut().zip(shrink.iter()) {
            row *= f;
        }
        Ok(&self.basis * z)
    }
}

/// Ridge coefficients minimizing `‖y_v − Xβ_v‖² + λ‖β_v‖²` for every column of `Y`.
pub fn ridge_solve(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(EncodingError::Shape(format!(
            "X is {}x{}, Y is {}x{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) || !lambda.is_finite() {
        return Err(EncodingError::NonFinite);
    }
    RidgeEigen::from_design(x)?.solve(&x.tr_mul(y), lambda)
}

fn centered_stats(y: &[f64]) -> (f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    (mean, ss)
}

/// Pearson correlation between observed and predicted time courses.
pub fn pearson_r(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() || y.is_empty() {
        return Err(EncodingError::Shape(format!("{} vs {}", y.len(), yhat.len())));
    }
    let n = y.len() as f64;
    let (my, sy) = centered_stats(y);
    let (mh, sh) = centered_stats(yhat);
    if !(sy / n > MIN_VARIANCE && sh / n > MIN_VARIANCE) {
        return Err(EncodingError::ZeroVariance);
    }
    let cross: f64 = y.iter().zip(yhat).map(|(a, b)| (a - my) * (b - mh)).sum();
    Ok((cross / (sy * sh).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub train: Vec<usize>,
    pub validation: usize,
    pub test: usize,
}

/// Outer folds over runs; every run is the test run exactly once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub n_runs: usize,
    pub folds: Vec<CvFold>,
}

/// Fold `i` tests on run `i`, validates on run `i + 1 (mod n)`, trains on the rest.
pub fn make_cv_plan(n_runs: usize) -> Result<CvPlan> {
    if n_runs < 3 {
        return Err(EncodingError::TooFewRuns(n_runs));
    }
    let folds = (0..n_runs)
        .map(|test| {
            let validation = (test + 1) % n_runs;
            CvFold {
                train: (0..n_runs)
                    .filter(|&r| r != test && r != validation)
                    .collect(),
                validation,
                test,
            }
        })
        .collect();
    Ok(CvPlan { n_runs, folds })
}

/// Per-voxel ridge fit with the penalty chosen on validation data.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    /// Features by voxels.
    pub beta: DMatrix<f64>,
    /// Chosen penalty per voxel; NaN where the validation run was degenerate.
    pub lambda_star: Vec<f64>,
}

/// Cross-validated R map of one subject for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RMap {
    /// Per-voxel mean test R; NaN for excluded voxels.
    pub values: Vec<f64>,
    pub subject: String,
    pub model: String,
    /// Voxels with a zero-variance evaluation series in some fold.
    pub excluded: Vec<usize>,
}

impl RMap {
    pub fn new(values: Vec<f64>) -> Self {
        let excluded = values
            .iter()
            .enumerate()
            .filter_map(|(v, x)| x.is_nan().then_some(v))
            .collect();
        Self {
            values,
            subject: String::new(),
            model: String::new(),
            excluded,
        }
    }

    pub fn with_provenance(mut self, subject: &str, model: &str) -> Self {
        self.subject = subject.to_string();
        self.model = model.to_string();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl AsRef<[f64]> for RMap {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub rmap: RMap,
    /// Test R per fold and voxel (NaN where excluded).
    pub fold_r: Vec<Vec<f64>>,
    /// Chosen penalty per fold and voxel (NaN where excluded).
    pub lambda_star: Vec<Vec<f64>>,
}

impl CvResult {
    /// How often each grid penalty was chosen, over folds and voxels.
    pub fn lambda_histogram(&self, grid: &LambdaGrid) -> Vec<(f64, usize)> {
        grid.values()
            .iter()
            .map(|&l| {
                let n = self
                    .lambda_star
                    .iter()
                    .flatten()
                    .filter(|&&x| x == l)
                    .count();
                (l, n)
            })
            .collect()
    }
}

/// Shared per-fold quantities for scoring one block of voxels.
struct FoldModel<'a> {
    eig: RidgeEigen,
    shrink: Vec<DVector<f64>>,
    train_x: Vec<&'a DMatrix<f64>>,
}

impl<'a> FoldModel<'a> {
    fn new(train_x: Vec<&'a DMatrix<f64>>, grid: &LambdaGrid) -> Result<Self> {
        let d = train_x[0].ncols();
        let mut gram = DMatrix::zeros(d, d);
        for x in &train_x {
            gram += x.tr_mul(x);
        }
        let eig = RidgeEigen::from_gram(gram)?;
        let shrink = grid
            .values()
            .iter()
            .map(|&l| eig.shrinkage(l))
            .collect::<Result<_>>()?;
        Ok(Self {
            eig,
            shrink,
            train_x,
        })
    }

    /// `Qᵀ Xᵀ Y` for a block of voxel columns, accumulated run by run.
    fn projected_xty(&self, train_y: &[&DMatrix<f64>], cols: std::ops::Range<usize>) -> DMatrix<f64> {
        let d = self.eig.basis.nrows();
        let mut xty = DMatrix::zeros(d, cols.len());
        for (x, y) in self.train_x.iter().zip(train_y) {
            xty += x.tr_mul(&y.columns(cols.start, cols.len()));
        }
        self.eig.basis.tr_mul(&xty)
    }
}

fn scaled_rows(z: &DMatrix<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for (mut row, &s) in out.row_iter_mut().zip(f.iter()) {
        row *= s;
    }
    out
}

fn column_r(y: &DMatrix<f64>, yhat: &DMatrix<f64>, v: usize) -> Option<f64> {
    let a: Vec<f64> = y.column(v).iter().copied().collect();
    let b: Vec<f64> = yhat.column(v).iter().copied().collect();
    pearson_r(&a, &b).ok()
}

/// Per voxel of a block: index of the chosen penalty (None when degenerate)
/// and the coefficient vector in the eigenbasis.
fn select_block(
    fold: &FoldModel,
    z: &DMatrix<f64>,
    val_xq: &DMatrix<f64>,
    val_y: &DMatrix<f64>,
) -> (Vec<Option<usize>>, DMatrix<f64>) {
    let b = z.ncols();
    let mut best: Vec<Option<(usize, f64)>> = vec![None; b];
    for (li, shrink) in fold.shrink.iter().enumerate() {
        let pred = val_xq * scaled_rows(z, shrink);
        for (v, slot) in best.iter_mut().enumerate() {
            if let Some(r) = column_r(val_y, &pred, v) {
                // ascending grid: ties go to the larger penalty
                if slot.is_none_or(|(_, br)| r >= br - R_TIE) {
                    *slot = Some((li, r));
                }
            }
        }
    }
    let mut coef = DMatrix::zeros(z.nrows(), b);
    let chosen: Vec<Option<usize>> = best.iter().map(|s| s.map(|(li, _)| li)).collect();
    for (v, c) in chosen.iter().enumerate() {
        if let Some(li) = c {
            let col = z.column(v).component_mul(&fold.shrink[*li]);
            coef.set_column(v, &col);
        }
    }
    (chosen, coef)
}

fn check_runs(designs: &[FeatureDesign], bold: &[BoldRun]) -> Result<()> {
    if designs.len() != bold.len() {
        return Err(EncodingError::Shape(format!(
            "{} designs for {} BOLD runs",
            designs.len(),
            bold.len()
        )));
    }
    let d = designs.first().map(|x| x.n_features()).unwrap_or(0);
    let v = bold.first().map(|b| b.n_voxels()).unwrap_or(0);
    for (r, (x, y)) in designs.iter().zip(bold).enumerate() {
        if x.n_features() != d || y.n_voxels() != v || x.n_scans() != y.n_scans() {
            return Err(EncodingError::Shape(format!(
                "run {r}: design {}x{}, BOLD {}x{}",
                x.n_scans(),
                x.n_features(),
                y.n_scans(),
                y.n_voxels()
            )));
        }
        if x.values.iter().chain(y.values.iter()).any(|a| !a.is_finite()) {
            return Err(EncodingError::NonFinite);
        }
    }
    Ok(())
}

/// Fits on stacked training runs, picks the penalty per voxel on a
/// validation run, and returns coefficients at the chosen penalties.
pub fn fit_validated(
    train: &[(&FeatureDesign, &BoldRun)],
    validation: (&FeatureDesign, &BoldRun),
    grid: &LambdaGrid,
) -> Result<RidgeFit> {
    if train.is_empty() {
        return Err(EncodingError::Shape("no training runs".into()));
    }
    let fold = FoldModel::new(train.iter().map(|(x, _)| &x.values).collect(), grid)?;
    let ys: Vec<&DMatrix<f64>> = train.iter().map(|(_, y)| &y.values).collect();
    let n_vox = validation.1.n_voxels();
    let val_xq = &validation.0.values * &fold.eig.basis;
    let z = fold.projected_xty(&ys, 0..n_vox);
    let (chosen, coef) = select_block(&fold, &z, &val_xq, &validation.1.values);
    Ok(RidgeFit {
        beta: &fold.eig.basis * coef,
        lambda_star: chosen
            .iter()
            .map(|c| c.map_or(f64::NAN, |i| grid.values()[i]))
            .collect(),
    })
}

/// Nested cross-validated R map.
///
/// Voxels whose validation or test series (observed or predicted) has zero
/// variance in any fold are excluded: NaN in the map and listed in
/// `RMap::excluded`.
pub fn nested_cv_fit(
    designs: &[FeatureDesign],
    bold: &[BoldRun],
    grid: &LambdaGrid,
    plan: &CvPlan,
) -> Result<CvResult> {
    check_runs(designs, bold)?;
    if plan.n_runs != designs.len() {
        return Err(EncodingError::PlanMismatch {
            plan: plan.n_runs,
            data: designs.len(),
        });
    }
    let n_vox = bold[0].n_voxels();
    let blocks: Vec<std::ops::Range<usize>> = (0..n_vox)
        .step_by(VOXEL_BLOCK)
        .map(|s| s..(s + VOXEL_BLOCK).min(n_vox))
        .collect();

    let mut fold_r = Vec::with_capacity(plan.folds.len());
    let mut lambda_star = Vec::with_capacity(plan.folds.len());
    for f in &plan.folds {
        let fold = FoldModel::new(f.train.iter().map(|&r| &designs[r].values).collect(), grid)?;
        let train_y: Vec<&DMatrix<f64>> = f.train.iter().map(|&r| &bold[r].values).collect();
        let val_xq = &designs[f.validation].values * &fold.eig.basis;
        let test_xq = &designs[f.test].values * &fold.eig.basis;
        let val_y = &bold[f.validation].values;
        let test_y = &bold[f.test].values;

        let per_block: Vec<(Vec<f64>, Vec<f64>)> = blocks
            .par_iter()
            .map(|cols| {
                let z = fold.projected_xty(&train_y, cols.clone());
                let vy = val_y.columns(cols.start, cols.len()).into_owned();
                let ty = test_y.columns(cols.start, cols.len()).into_owned();
                let (chosen, coef) = select_block(&fold, &z, &val_xq, &vy);
                let pred = &test_xq * &coef;
                let mut r = Vec::with_capacity(cols.len());
                let mut l = Vec::with_capacity(cols.len());
                for (v, c) in chosen.iter().enumerate() {
                    match c.and_then(|li| column_r(&ty, &pred, v).map(|rv| (li, rv))) {
                        Some((li, rv)) => {
                            r.push(rv);
                            l.push(grid.values()[li]);
                        }
                        None => {
                            r.push(f64::NAN);
                            l.push(f64::NAN);
                        }
                    }
                }
                (r, l)
            })
            .collect();
        let (r, l): (Vec<_>, Vec<_>) = per_block.into_iter().unzip();
        fold_r.push(r.concat());
        lambda_star.push(l.concat());
    }

    let n_folds = fold_r.len() as f64;
    let values: Vec<f64> = (0..n_vox)
        .map(|v| {
            let scores: Vec<f64> = fold_r.iter().map(|f| f[v]).collect();
            if scores.iter().any(|s| s.is_nan()) {
                f64::NAN
            } else {
                scores.iter().sum::<f64>() / n_folds
            }
        })
        .collect();
    Ok(CvResult {
        rmap: RMap::new(values),
        fold_r,
        lambda_star,
    })
}
