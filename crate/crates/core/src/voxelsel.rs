//! Voxel selection: shared-response reliability, percentile sets, overlaps
//! and brain scores.

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{pearson_r, RMap};
use crate::io::{self, IoError};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("SVD did not converge")]
    SvdFailed,
    #[error("shared dimension k={k} exceeds min(T, V) = {max}")]
    KTooLarge { k: usize, max: usize },
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in map at voxel {0}")]
    NonFinite(usize),
    #[error("percentile must lie in (0, 100], got {0}")]
    BadPercentile(f64),
    #[error("selection is empty")]
    Empty,
    #[error("sets have unequal sizes {0} and {1}")]
    UnequalSizes(usize, usize),
    #[error("invalid voxel set: {0}")]
    InvalidSet(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

type Result<T> = std::result::Result<T, SelectionError>;

/// Sorted, duplicate-free voxel indices within a map of `n_voxels`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelSet {
    pub indices: Vec<usize>,
    pub n_voxels: usize,
    pub source: String,
}

impl VoxelSet {
    pub fn new(mut indices: Vec<usize>, n_voxels: usize, source: &str) -> Result<Self> {
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(SelectionError::InvalidSet("duplicate index".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n_voxels {
                return Err(SelectionError::InvalidSet(format!(
                    "index {last} out of range for {n_voxels} voxels"
                )));
            }
        }
        Ok(Self {
            indices,
            n_voxels,
            source: source.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.indices.binary_search(&v).is_ok()
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = io::read_text(path)?;
        let set: VoxelSet = serde_json::from_str(&text).map_err(IoError::Json)?;
        Self::new(set.indices, set.n_voxels, &set.source)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("voxel set serializes");
        io::write_text(path.as_ref(), &(text + "\n"))?;
        Ok(())
    }
}

/// Shared response model: `X_iᵀ ≈ W_i S` with orthonormal `W_i`.
#[derive(Debug, Clone)]
pub struct SrmModel {
    pub k: usize,
    /// Per-subject V × k maps.
    pub w: Vec<DMatrix<f64>>,
    /// k × T shared response.
    pub s: DMatrix<f64>,
    /// Objective after initialization and after every iteration.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SrmConfig {
    pub k: usize,
    pub n_iters: usize,
    pub seed: u64,
}

impl Default for SrmConfig {
    fn default() -> Self {
        Self {
            k: 20,
            n_iters: 10,
            seed: 0,
        }
    }
}

fn objective(data: &[DMatrix<f64>], w: &[DMatrix<f64>], s: &DMatrix<f64>) -> f64 {
    data.iter()
        .zip(w)
        .map(|(x, wi)| (x.transpose() - wi * s).norm_squared())
        .sum()
}

/// `U Vᵀ` from the thin SVD of `m`: the orthonormal matrix closest to `m`.
fn procrustes(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = nalgebra::linalg::SVD::try_new(m, true, true, f64::EPSILON, 0)
        .ok_or(SelectionError::SvdFailed)?;
    let u = svd.u.ok_or(SelectionError::SvdFailed)?;
    let vt = svd.v_t.ok_or(SelectionError::SvdFailed)?;
    Ok(u * vt)
}

/// Top-`k` left singular vectors of `a` (rows × cols) by a seeded
/// randomized range finder with two power iterations.
fn top_left_singular(a: &DMatrix<f64>, k: usize, seed: u64) -> Result<DMatrix<f64>> {
    let (rows, cols) = a.shape();
    let l = (k + 10).min(rows).min(cols);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(cols, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = (a * omega).qr().q();
    for _ in 0..2 {
        let z = a.tr_mul(&q).qr().q();
        q = (a * z).qr().q();
    }
    let b = q.tr_mul(a);
    let svd = nalgebra::linalg::SVD::try_new(b, true, false, f64::EPSILON, 0)
        .ok_or(SelectionError::SvdFailed)?;
    let mut u = svd.u.ok_or(SelectionError::SvdFailed)?;
    // nalgebra does not sort singular values
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]).then(i.cmp(&j)));
    u = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    Ok(q * u)
}

/// Fits the shared response model by alternating orthogonal Procrustes
/// updates of the `W_i` and averaging for `S`.
///
/// `data[i]` is subject `i`'s T × V series. `S` starts from the projection
/// of the first subject's data on its top-`k` principal directions.
pub fn srm_fit(data: &[DMatrix<f64>], config: &SrmConfig) -> Result<SrmModel> {
    if data.is_empty() {
        return Err(SelectionError::TooFewSubjects { need: 1, got: 0 });
    }
    let (t, v) = data[0].shape();
    if data.iter().any(|x| x.shape() != (t, v)) {
        return Err(SelectionError::Shape("subjects differ in shape".into()));
    }
    let k = config.k;
    if k == 0 || k > t.min(v) {
        return Err(SelectionError::KTooLarge { k, max: t.min(v) });
    }
    if let Some(p) = data.iter().flat_map(|x| x.iter()).position(|x| !x.is_finite()) {
        return Err(SelectionError::NonFinite(p % v));
    }

    let xt0 = data[0].transpose();
    let u = top_left_singular(&xt0, k, config.seed)?;
    let mut s = u.tr_mul(&xt0);
    let mut w: Vec<DMatrix<f64>> = vec![DMatrix::zeros(v, k); data.len()];
    let mut trace = Vec::with_capacity(config.n_iters + 1);
    for it in 0..=config.n_iters {
        w = data
            .par_iter()
            .map(|x| procrustes(x.tr_mul(&s.transpose())))
            .collect::<Result<_>>()?;
        let mut acc = DMatrix::zeros(k, t);
        for (x, wi) in data.iter().zip(&w) {
            acc += wi.tr_mul(&x.transpose());
        }
        s = acc / data.len() as f64;
        trace.push(objective(data, &w, &s));
        log::debug!("srm iteration {it}: objective {:.6e}", trace[it]);
    }
    Ok(SrmModel {
        k,
        w,
        s,
        objective: trace,
    })
}

/// Per-voxel reliability of held-out data under a fitted model.
///
/// Each subject's held-out series is predicted by mapping through `W_i` the
/// shared response estimated from all other subjects; the voxel's score is
/// the Pearson R averaged over subjects with a defined R. Voxels with no
/// defined R are NaN and listed as excluded.
pub fn srm_reliability(model: &SrmModel, heldout: &[DMatrix<f64>]) -> Result<RMap> {
    let n = heldout.len();
    if n < 2 {
        return Err(SelectionError::TooFewSubjects { need: 2, got: n });
    }
    if n != model.w.len() {
        return Err(SelectionError::Shape(format!(
            "{n} held-out subjects for a {}-subject model",
            model.w.len()
        )));
    }
    let v = model.w[0].nrows();
    let t = heldout[0].nrows();
    if heldout.iter().any(|x| x.shape() != (t, v)) {
        return Err(SelectionError::Shape("held-out subjects differ in shape".into()));
    }
    let projected: Vec<DMatrix<f64>> = heldout
        .iter()
        .zip(&model.w)
        .map(|(x, wi)| wi.tr_mul(&x.transpose()))
        .collect();
    let mut total = DMatrix::zeros(model.k, t);
    for p in &projected {
        total += p;
    }
    let per_subject: Vec<Vec<Option<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let shared = (&total - &projected[i]) / (n - 1) as f64;
            let recon = (&model.w[i] * shared).transpose();
            (0..v)
                .map(|c| {
                    let y: Vec<f64> = heldout[i].column(c).iter().copied().collect();
                    let yhat: Vec<f64> = recon.column(c).iter().copied().collect();
                    pearson_r(&y, &yhat).ok()
                })
                .collect()
        })
        .collect();
    let values = (0..v)
        .map(|c| {
            let rs: Vec<f64> = per_subject.iter().filter_map(|s| s[c]).collect();
            if rs.is_empty() {
                f64::NAN
            } else {
                rs.iter().sum::<f64>() / rs.len() as f64
            }
        })
        .collect();
    Ok(RMap::new(values).with_provenance("group", "srm"))
}

/// The `round(pct/100 · V)` highest-valued voxels, ties to the lower index.
///
/// NaN voxels are never selected; infinities are rejected.
pub fn top_percentile(map: &[f64], pct: f64, source: &str) -> Result<VoxelSet> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(SelectionError::BadPercentile(pct));
    }
    if let Some(v) = map.iter().position(|x| x.is_infinite()) {
        return Err(SelectionError::NonFinite(v));
    }
    let mut order: Vec<usize> = (0..map.len()).filter(|&v| !map[v].is_nan()).collect();
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]).then(a.cmp(&b)));
    let size = ((pct / 100.0 * map.len() as f64).round() as usize).min(order.len());
    if size == 0 {
        return Err(SelectionError::Empty);
    }
    order.truncate(size);
    VoxelSet::new(order, map.len(), source)
}

/// Percent overlaps between equal-size sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTable {
    pub labels: Vec<String>,
    pub set_size: usize,
    /// Symmetric; the diagonal is 100.
    pub pairwise: Vec<Vec<f64>>,
    /// Overlap of all sets together.
    pub all: f64,
}

impl OverlapTable {
    /// Upper-triangular CSV: rows are all labels but the last, columns all
    /// but the first, "." below the diagonal, then an `all` row.
    pub fn to_csv(&self) -> String {
        let n = self.labels.len();
        let mut out = String::from("Model");
        for l in &self.labels[1..] {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for i in 0..n - 1 {
            out.push_str(&self.labels[i]);
            for j in 1..n {
                if j > i {
                    out.push_str(&format!(",{:.2}%", self.pairwise[i][j]));
                } else {
                    out.push_str(",.");
                }
            }
            out.push('\n');
        }
        out.push_str(&format!("all,{:.2}%", self.all));
        for _ in 2..n {
            out.push_str(",.");
        }
        out.push('\n');
        out
    }
}

fn intersection_size(sets: &[&VoxelSet]) -> usize {
    sets[0]
        .indices
        .iter()
        .filter(|v| sets[1..].iter().all(|s| s.contains(**v)))
        .count()
}

/// `|A ∩ B| / n · 100` for every pair plus the same ratio for all sets.
pub fn overlap_percent(sets: &[VoxelSet]) -> Result<OverlapTable> {
    if sets.len() < 2 {
        return Err(SelectionError::TooFewSubjects {
            need: 2,
            got: sets.len(),
        });
    }
    let n = sets[0].len();
    if let Some(s) = sets.iter().find(|s| s.len() != n) {
        return Err(SelectionError::UnequalSizes(n, s.len()));
    }
    if n == 0 {
        return Err(SelectionError::Empty);
    }
    let pct = |k: usize| k as f64 / n as f64 * 100.0;
    let pairwise = (0..sets.len())
        .map(|i| {
            (0..sets.len())
                .map(|j| pct(intersection_size(&[&sets[i], &sets[j]])))
                .collect()
        })
        .collect();
    let all_refs: Vec<&VoxelSet> = sets.iter().collect();
    Ok(OverlapTable {
        labels: sets.iter().map(|s| s.source.clone()).collect(),
        set_size: n,
        pairwise,
        all: pct(intersection_size(&all_refs)),
    })
}

/// Mean of the map over the set.
pub fn brain_score(map: &[f64], set: &VoxelSet) -> Result<f64> {
    if set.is_empty() {
        return Err(SelectionError::Empty);
    }
    if set.n_voxels != map.len() {
        return Err(SelectionError::Shape(format!(
            "set over {} voxels, map has {}",
            set.n_voxels,
            map.len()
        )));
    }
    Ok(set.indices.iter().map(|&v| map[v]).sum::<f64>() / set.len() as f64)
}
