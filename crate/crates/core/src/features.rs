//! From per-token activations and word timings to scan-aligned design matrices.
//!
//! The route for every activation column is:
//!
//! 1. divide each layer block by its mean row L2 norm,
//! 2. place one impulse per token at the fine-grid cell holding its offset
//!    time and convolve with a double-gamma HRF sampled at `dt_s`,
//! 3. decimate to the scan clock and mean-center.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::special::gamma_pdf;

/// Slack added before flooring a time onto the fine grid so that values like
/// `0.6 / 0.2 = 2.9999999999999996` land in the cell they name.
const GRID_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum EventError {
    #[error("event row {row}: negative time")]
    NegativeTime { row: usize },
    #[error("event row {row}: offset precedes onset")]
    BadInterval { row: usize },
    #[error("event row {row}: onset earlier than the previous row")]
    NonMonotonicOnsets { row: usize },
    #[error("event row {row}: offset earlier than the previous row")]
    NonMonotonicOffsets { row: usize },
    #[error("event columns have different lengths")]
    LengthMismatch,
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("layer {layer} has {rows} rows, expected {expected}")]
    MismatchedRows {
        layer: usize,
        rows: usize,
        expected: usize,
    },
    #[error("invalid layer spans: {0}")]
    InvalidSpans(String),
    #[error("layer {0} has zero mean row norm")]
    DegenerateLayer(usize),
    #[error("invalid HRF parameters: {0}")]
    InvalidHrf(String),
    #[error("{got} amplitudes for {expected} tokens")]
    AmplitudeCount { expected: usize, got: usize },
    #[error("token {token} offset {offset_s}s is beyond the run duration {duration_s}s")]
    OffsetBeyondRun {
        token: usize,
        offset_s: f64,
        duration_s: f64,
    },
    #[error("TR {tr_s}s is not an integer multiple of dt {dt_s}s")]
    IncommensurateTr { tr_s: f64, dt_s: f64 },
    #[error("{n_scans} scans at TR {tr_s}s exceed the {duration_s}s series")]
    TooManyScans {
        n_scans: usize,
        tr_s: f64,
        duration_s: f64,
    },
    #[error("activation matrix has {rows} rows, event table has {events} tokens")]
    TokenCount { rows: usize, events: usize },
}

type Result<T> = std::result::Result<T, FeatureError>;

/// Word timings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTable {
    tokens: Vec<String>,
    onsets: Vec<f64>,
    offsets: Vec<f64>,
}

impl EventTable {
    pub fn new(
        tokens: Vec<String>,
        onsets: Vec<f64>,
        offsets: Vec<f64>,
    ) -> std::result::Result<Self, EventError> {
        if tokens.len() != onsets.len() || tokens.len() != offsets.len() {
            return Err(EventError::LengthMismatch);
        }
        for row in 0..tokens.len() {
            let (on, off) = (onsets[row], offsets[row]);
            if !(on >= 0.0 && off >= 0.0) {
                return Err(EventError::NegativeTime { row });
            }
            if off < on {
                return Err(EventError::BadInterval { row });
            }
            if row > 0 && on < onsets[row - 1] {
                return Err(EventError::NonMonotonicOnsets { row });
            }
            if row > 0 && off < offsets[row - 1] {
                return Err(EventError::NonMonotonicOffsets { row });
            }
        }
        Ok(Self {
            tokens,
            onsets,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }
}

/// Token-by-unit activations, with the column span of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: DMatrix<f64>,
    layer_spans: Vec<(usize, usize)>,
}

impl ActivationMatrix {
    /// Spans must be contiguous, non-empty and cover every column in order.
    pub fn new(values: DMatrix<f64>, layer_spans: Vec<(usize, usize)>) -> Result<Self> {
        let mut next = 0;
        for &(start, end) in &layer_spans {
            if start != next || end <= start {
                return Err(FeatureError::InvalidSpans(format!("{layer_spans:?}")));
            }
            next = end;
        }
        if next != values.ncols() || layer_spans.is_empty() {
            return Err(FeatureError::InvalidSpans(format!(
                "{layer_spans:?} do not cover {} columns",
                values.ncols()
            )));
        }
        Ok(Self {
            values,
            layer_spans,
        })
    }

    pub fn single_layer(values: DMatrix<f64>) -> Result<Self> {
        let d = values.ncols();
        Self::new(values, vec![(0, d)])
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn layer_spans(&self) -> &[(usize, usize)] {
        &self.layer_spans
    }

    pub fn n_tokens(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_units(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Stacks per-layer activations side by side, embedding layer first.
pub fn concat_layers(layers: &[DMatrix<f64>]) -> Result<ActivationMatrix> {
    let first = layers
        .first()
        .ok_or_else(|| FeatureError::InvalidSpans("no layers".into()))?;
    let w = first.nrows();
    let mut spans = Vec::with_capacity(layers.len());
    let mut start = 0;
    for (layer, m) in layers.iter().enumerate() {
        if m.nrows() != w {
            return Err(FeatureError::MismatchedRows {
                layer,
                rows: m.nrows(),
                expected: w,
            });
        }
        spans.push((start, start + m.ncols()));
        start += m.ncols();
    }
    let mut values = DMatrix::zeros(w, start);
    for (m, &(s, e)) in layers.iter().zip(&spans) {
        values.columns_mut(s, e - s).copy_from(m);
    }
    ActivationMatrix::new(values, spans)
}

/// Divides each layer block by the mean over tokens of its row L2 norms.
pub fn normalize_layers(a: &ActivationMatrix) -> Result<ActivationMatrix> {
    let mut values = a.values.clone();
    let w = values.nrows().max(1) as f64;
    for (layer, &(s, e)) in a.layer_spans.iter().enumerate() {
        let mut block = values.columns_mut(s, e - s);
        let mean_norm = block.row_iter().map(|r| r.norm()).sum::<f64>() / w;
        if !(mean_norm > 0.0) || !mean_norm.is_finite() {
            return Err(FeatureError::DegenerateLayer(layer));
        }
        block /= mean_norm;
    }
    Ok(ActivationMatrix {
        values,
        layer_spans: a.layer_spans.clone(),
    })
}

/// Double-gamma HRF parameters. Delays and dispersions are in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HrfSpec {
    pub peak_delay_s: f64,
    pub undershoot_delay_s: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub undershoot_ratio: f64,
    pub kernel_length_s: f64,
    pub dt_s: f64,
}

impl Default for HrfSpec {
    fn default() -> Self {
        Self {
            peak_delay_s: 6.0,
            undershoot_delay_s: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            undershoot_ratio: 1.0 / 6.0,
            kernel_length_s: 32.0,
            dt_s: 0.2,
        }
    }
}

impl HrfSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("peak_delay_s", self.peak_delay_s),
            ("undershoot_delay_s", self.undershoot_delay_s),
            ("peak_dispersion", self.peak_dispersion),
            ("undershoot_dispersion", self.undershoot_dispersion),
            ("undershoot_ratio", self.undershoot_ratio),
            ("kernel_length_s", self.kernel_length_s),
            ("dt_s", self.dt_s),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(FeatureError::InvalidHrf(format!("{name} = {v}")));
            }
        }
        integer_ratio(self.kernel_length_s, self.dt_s).ok_or_else(|| {
            FeatureError::InvalidHrf(format!(
                "dt_s {} does not divide kernel_length_s {}",
                self.dt_s, self.kernel_length_s
            ))
        })?;
        Ok(())
    }

    /// Number of kernel samples, `t = 0, dt, ..., kernel_length`.
    pub fn n_samples(&self) -> usize {
        integer_ratio(self.kernel_length_s, self.dt_s).unwrap_or(0) + 1
    }
}

/// `num / den` when it is an integer up to rounding error.
fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() <= 1e-9 * n.max(1.0) && n >= 1.0).then_some(n as usize)
}

/// Double-gamma kernel sampled every `dt_s`, scaled to a unit peak.
pub fn hrf_kernel(spec: &HrfSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let peak_shape = spec.peak_delay_s / spec.peak_dispersion;
    let under_shape = spec.undershoot_delay_s / spec.undershoot_dispersion;
    let mut h: Vec<f64> = (0..spec.n_samples())
        .map(|j| {
            let t = j as f64 * spec.dt_s;
            gamma_pdf(t, peak_shape, spec.peak_dispersion)
                - spec.undershoot_ratio * gamma_pdf(t, under_shape, spec.undershoot_dispersion)
        })
        .collect();
    let peak = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(FeatureError::InvalidHrf("kernel has no positive peak".into()));
    }
    h.iter_mut().for_each(|x| *x /= peak);
    Ok(h)
}

fn fine_len(duration_s: f64, dt_s: f64) -> usize {
    (duration_s / dt_s + GRID_EPS).floor() as usize
}

/// Places one impulse per token at its offset time and convolves with the HRF.
///
/// The output has one sample per `dt_s` cell over `run_duration_s`; kernel
/// tails past the end of the run are dropped.
pub fn convolve_events(
    events: &EventTable,
    amplitudes: &[f64],
    spec: &HrfSpec,
    run_duration_s: f64,
) -> Result<Vec<f64>> {
    let kernel = hrf_kernel(spec)?;
    convolve_with_kernel(events, amplitudes, &kernel, spec.dt_s, run_duration_s)
}

fn impulse_cells(events: &EventTable, dt_s: f64, run_duration_s: f64) -> Result<Vec<usize>> {
    events
        .offsets()
        .iter()
        .enumerate()
        .map(|(token, &offset_s)| {
            if offset_s > run_duration_s + GRID_EPS {
                return Err(FeatureError::OffsetBeyondRun {
                    token,
                    offset_s,
                    duration_s: run_duration_s,
                });
            }
            Ok((offset_s / dt_s + GRID_EPS).floor() as usize)
        })
        .collect()
}

fn convolve_with_kernel(
    events: &EventTable,
    amplitudes: &[f64],
    kernel: &[f64],
    dt_s: f64,
    run_duration_s: f64,
) -> Result<Vec<f64>> {
    if amplitudes.len() != events.len() {
        return Err(FeatureError::AmplitudeCount {
            expected: events.len(),
            got: amplitudes.len(),
        });
    }
    let n = fine_len(run_duration_s, dt_s);
    let cells = impulse_cells(events, dt_s, run_duration_s)?;
    Ok(convolve_cells(&cells, amplitudes, kernel, n))
}

fn convolve_cells(cells: &[usize], amplitudes: &[f64], kernel: &[f64], n: usize) -> Vec<f64> {
    // impulses sharing a cell add up before convolution
    let mut impulses = vec![0.0; n];
    for (&c, &a) in cells.iter().zip(amplitudes) {
        if c < n {
            impulses[c] += a;
        }
    }
    let mut out = vec![0.0; n];
    for (c, &a) in impulses.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, &h) in out[c..].iter_mut().zip(kernel) {
            *o += a * h;
        }
    }
    out
}

/// Picks the fine-grid sample at every scan time `k * tr_s` and mean-centers.
pub fn resample_and_center(
    fine: &[f64],
    dt_s: f64,
    tr_s: f64,
    n_scans: usize,
) -> Result<Vec<f64>> {
    let step = integer_ratio(tr_s, dt_s).ok_or(FeatureError::IncommensurateTr { tr_s, dt_s })?;
    if n_scans * step > fine.len() {
        return Err(FeatureError::TooManyScans {
            n_scans,
            tr_s,
            duration_s: fine.len() as f64 * dt_s,
        });
    }
    let mut col: Vec<f64> = (0..n_scans).map(|k| fine[k * step]).collect();
    let mean = col.iter().sum::<f64>() / n_scans.max(1) as f64;
    col.iter_mut().for_each(|x| *x -= mean);
    Ok(col)
}

/// Scans-by-units regressors for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDesign {
    pub values: DMatrix<f64>,
    pub tr_seconds: f64,
    pub centered: bool,
}

impl FeatureDesign {
    pub fn n_scans(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }
}

/// Full design route: layer normalization, then per-column convolution and
/// resampling.
pub fn build_design(
    a: &ActivationMatrix,
    events: &EventTable,
    spec: &HrfSpec,
    tr_s: f64,
    n_scans: usize,
) -> Result<FeatureDesign> {
    let normalized = normalize_layers(a)?;
    design_from_normalized(normalized.values(), events, spec, tr_s, n_scans)
}

/// Convolution and resampling of already-normalized activations.
///
/// Columns are processed independently, so the result does not depend on
/// how they are scheduled.
pub fn design_from_normalized(
    values: &DMatrix<f64>,
    events: &EventTable,
    spec: &HrfSpec,
    tr_s: f64,
    n_scans: usize,
) -> Result<FeatureDesign> {
    if values.nrows() != events.len() {
        return Err(FeatureError::TokenCount {
            rows: values.nrows(),
            events: events.len(),
        });
    }
    let kernel = hrf_kernel(spec)?;
    let duration = n_scans as f64 * tr_s;
    let n_fine = fine_len(duration, spec.dt_s);
    let cells = impulse_cells(events, spec.dt_s, duration)?;
    let columns: Vec<Vec<f64>> = (0..values.ncols())
        .into_par_iter()
        .map(|j| {
            let amps: Vec<f64> = values.column(j).iter().copied().collect();
            let fine = convolve_cells(&cells, &amps, &kernel, n_fine);
            resample_and_center(&fine, spec.dt_s, tr_s, n_scans)
        })
        .collect::<Result<_>>()?;
    let mut design = DMatrix::zeros(n_scans, values.ncols());
    for (j, col) in columns.iter().enumerate() {
        design.column_mut(j).copy_from_slice(col);
    }
    Ok(FeatureDesign {
        values: design,
        tr_seconds: tr_s,
        centered: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(offsets: &[f64]) -> EventTable {
        EventTable::new(
            offsets.iter().map(|_| "w".to_string()).collect(),
            offsets.to_vec(),
            offsets.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn concat_two_layers() {
        let a = DMatrix::from_fn(3, 2, |i, j| (i * 2 + j) as f64);
        let b = DMatrix::from_fn(3, 2, |i, j| -((i * 2 + j) as f64));
        let m = concat_layers(&[a.clone(), b]).unwrap();
        assert_eq!(m.values().shape(), (3, 4));
        assert_eq!(m.layer_spans(), &[(0, 2), (2, 4)]);
        let single = concat_layers(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.values(), &a);
    }

    #[test]
    fn concat_embedding_plus_four_layers() {
        // embedding + 4 hidden layers of 768 units
        let layers: Vec<_> = (0..5).map(|_| DMatrix::zeros(2, 768)).collect();
        let m = concat_layers(&layers).unwrap();
        assert_eq!(m.n_units(), 5 * 768);
        assert_eq!(m.layer_spans()[4], (4 * 768, 5 * 768));
    }

    #[test]
    fn concat_rejects_mismatched_rows() {
        let r = concat_layers(&[DMatrix::zeros(3, 1), DMatrix::zeros(2, 1)]);
        assert!(matches!(r, Err(FeatureError::MismatchedRows { layer: 1, .. })));
    }

    #[test]
    fn normalize_examples() {
        let one = ActivationMatrix::single_layer(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        let n = normalize_layers(&one).unwrap();
        assert!((n.values().row(0).norm() - 1.0).abs() < 1e-15);

        // norms 1 and 3, mean 2
        let two =
            ActivationMatrix::single_layer(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]))
                .unwrap();
        let n = normalize_layers(&two).unwrap();
        assert!((n.values().row(0).norm() - 0.5).abs() < 1e-15);
        assert!((n.values().row(1).norm() - 1.5).abs() < 1e-15);

        let again = normalize_layers(&n).unwrap();
        assert!((again.values() - n.values()).abs().max() < 1e-12);

        let zero = ActivationMatrix::single_layer(DMatrix::zeros(2, 2)).unwrap();
        assert_eq!(normalize_layers(&zero), Err(FeatureError::DegenerateLayer(0)));
    }

    #[test]
    fn normalize_is_per_block_scale_equivariant() {
        let base = DMatrix::from_fn(4, 5, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.7);
        let a = ActivationMatrix::new(base.clone(), vec![(0, 2), (2, 5)]).unwrap();
        let mut scaled = base.clone();
        scaled.columns_mut(2, 3).scale_mut(37.5);
        let b = ActivationMatrix::new(scaled, vec![(0, 2), (2, 5)]).unwrap();
        let (na, nb) = (normalize_layers(&a).unwrap(), normalize_layers(&b).unwrap());
        assert!((na.values() - nb.values()).abs().max() < 1e-12);
        for &(s, e) in na.layer_spans() {
            let block = na.values().columns(s, e - s);
            let mean: f64 = block.row_iter().map(|r| r.norm()).sum::<f64>() / 4.0;
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hrf_shape() {
        let spec = HrfSpec::default();
        let h = hrf_kernel(&spec).unwrap();
        assert_eq!(h.len(), 161);
        assert_eq!(h[0], 0.0);
        let (argmax, &max) = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(max, 1.0);
        let t_peak = argmax as f64 * spec.dt_s;
        assert!((4.8..=5.2).contains(&t_peak), "peak at {t_peak}");
        let undershoot = (50..=125).any(|j| h[j] < 0.0);
        assert!(undershoot);
    }

    #[test]
    fn hrf_rejects_bad_spec() {
        let spec = HrfSpec {
            dt_s: 0.3,
            kernel_length_s: 32.0,
            ..HrfSpec::default()
        };
        assert!(matches!(hrf_kernel(&spec), Err(FeatureError::InvalidHrf(_))));
        let spec = HrfSpec {
            peak_dispersion: 0.0,
            ..HrfSpec::default()
        };
        assert!(hrf_kernel(&spec).is_err());
    }

    #[test]
    fn impulse_at_zero_reproduces_kernel() {
        let spec = HrfSpec::default();
        let h = hrf_kernel(&spec).unwrap();
        let out = convolve_events(&events(&[0.0]), &[1.0], &spec, 40.0).unwrap();
        assert_eq!(out.len(), 200);
        assert_eq!(&out[..h.len()], &h[..]);
        assert!(out[h.len()..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_amplitudes_give_zero_series() {
        let spec = HrfSpec::default();
        let out = convolve_events(&events(&[1.0, 2.5]), &[0.0, 0.0], &spec, 20.0).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn overlapping_impulses_match_naive_convolution() {
        let spec = HrfSpec::default();
        let h = hrf_kernel(&spec).unwrap();
        let ev = events(&[0.6, 1.0, 1.05, 7.3]);
        let amps = [0.5, -1.25, 2.0, 0.75];
        let duration = 30.0;
        let out = convolve_events(&ev, &amps, &spec, duration).unwrap();
        // naive oracle: full impulse train, O(n*k) convolution
        let n = 150;
        let mut train = vec![0.0; n];
        for (t, a) in [(3usize, 0.5), (5, -1.25), (5, 2.0), (36, 0.75)] {
            train[t] += a;
        }
        let mut oracle = vec![0.0; n];
        for (i, o) in oracle.iter_mut().enumerate() {
            for (j, &x) in train.iter().enumerate().take(i + 1) {
                if i - j < h.len() {
                    *o += x * h[i - j];
                }
            }
        }
        assert_eq!(out.len(), n);
        for (a, b) in out.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_beyond_run_is_rejected() {
        let spec = HrfSpec::default();
        let r = convolve_events(&events(&[12.0]), &[1.0], &spec, 10.0);
        assert!(matches!(r, Err(FeatureError::OffsetBeyondRun { token: 0, .. })));
    }

    #[test]
    fn resample_examples() {
        let c = resample_and_center(&[3.0; 50], 0.2, 2.0, 5).unwrap();
        assert!(c.iter().all(|&x| x.abs() < 1e-15));

        let ramp: Vec<f64> = (0..50).map(|j| j as f64 * 0.2).collect();
        let c = resample_and_center(&ramp, 0.2, 2.0, 5).unwrap();
        let mean: f64 = c.iter().sum::<f64>() / 5.0;
        assert!(mean.abs() < 1e-12);
        // affine in k with slope TR
        for k in 1..5 {
            assert!((c[k] - c[k - 1] - 2.0).abs() < 1e-12);
        }

        assert!(matches!(
            resample_and_center(&ramp, 0.2, 2.0, 6),
            Err(FeatureError::TooManyScans { .. })
        ));
        assert!(matches!(
            resample_and_center(&ramp, 0.2, 0.5, 2),
            Err(FeatureError::IncommensurateTr { .. })
        ));
    }

    #[test]
    fn decimation_picks_every_step_th_sample() {
        let spec = HrfSpec::default();
        let h = hrf_kernel(&spec).unwrap();
        let out = convolve_events(&events(&[0.0]), &[1.0], &spec, 40.0).unwrap();
        let col = resample_and_center(&out, spec.dt_s, 2.0, 20).unwrap();
        let picked: Vec<f64> = (0..20).map(|k| if k * 10 < h.len() { h[k * 10] } else { 0.0 }).collect();
        let mean = picked.iter().sum::<f64>() / 20.0;
        for (a, b) in col.iter().zip(&picked) {
            assert!((a - (b - mean)).abs() < 1e-14);
        }
    }

    #[test]
    fn design_single_token_is_scaled_kernel() {
        let spec = HrfSpec::default();
        let a = ActivationMatrix::single_layer(DMatrix::from_element(1, 1, 3.0)).unwrap();
        let d = build_design(&a, &events(&[0.0]), &spec, 2.0, 20).unwrap();
        // normalized amplitude is 1, so the column is the centered decimated kernel
        let h = hrf_kernel(&spec).unwrap();
        let fine = convolve_events(&events(&[0.0]), &[1.0], &spec, 40.0).unwrap();
        let expect = resample_and_center(&fine, 0.2, 2.0, 20).unwrap();
        assert!(h.len() > 150);
        for (a, b) in d.values.column(0).iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn design_column_permutation_commutes() {
        let spec = HrfSpec::default();
        let vals = DMatrix::from_fn(3, 3, |i, j| (i as f64 + 1.0) * (j as f64 - 0.5));
        let ev = events(&[1.0, 4.4, 9.0]);
        let a = ActivationMatrix::single_layer(vals.clone()).unwrap();
        let mut perm = vals.clone();
        perm.swap_columns(0, 2);
        let b = ActivationMatrix::single_layer(perm).unwrap();
        let da = build_design(&a, &ev, &spec, 2.0, 10).unwrap();
        let db = build_design(&b, &ev, &spec, 2.0, 10).unwrap();
        assert_eq!(da.values.column(0), db.values.column(2));
        assert_eq!(da.values.column(1), db.values.column(1));
    }

    #[test]
    fn design_matches_composition_of_sub_operations() {
        let spec = HrfSpec::default();
        let vals = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 1.5, -1.0, 0.25]);
        let ev = EventTable::new(
            vec!["a".into(), ",".into(), "b".into()],
            vec![0.2, 1.1, 3.0],
            vec![0.5, 1.3, 3.4],
        )
        .unwrap();
        let a = ActivationMatrix::single_layer(vals).unwrap();
        let d = build_design(&a, &ev, &spec, 2.0, 12).unwrap();
        let n = normalize_layers(&a).unwrap();
        for j in 0..2 {
            let amps: Vec<f64> = n.values().column(j).iter().copied().collect();
            let fine = convolve_events(&ev, &amps, &spec, 24.0).unwrap();
            let col = resample_and_center(&fine, 0.2, 2.0, 12).unwrap();
            for (x, y) in d.values.column(j).iter().zip(&col) {
                assert!((x - y).abs() < 1e-14);
            }
            let sum: f64 = d.values.column(j).iter().sum();
            assert!(sum.abs() < 1e-9 * 12.0);
        }
    }
}
