//! # brainfit
//!
//! Fit brain data with language-model activations.
//!
//! The crate covers the whole route from per-token activation matrices and
//! word timings to voxelwise encoding-model R maps, group statistics,
//! voxel-set overlaps and brain-score / perplexity reports:
//!
//! - [`io`]: `.npy` array containers, event tables, study manifests, voxel grids
//! - [`features`]: layer normalization, HRF convolution, scan-aligned designs
//! - [`preprocess`]: BOLD detrending, standardization and mask construction
//! - [`encoding`]: mass-univariate ridge with nested cross-validation
//! - [`groupstats`]: smoothing, one-sample t-tests, Bonferroni, contrasts
//! - [`voxelsel`]: shared-response voxel selection, percentiles, overlaps, brain scores
//! - [`reporting`]: brain score vs perplexity analysis and slice rendering
//! - [`synth`]: seeded synthetic studies with planted ground truth
//! - [`pipeline`] and [`cli`]: manifest-driven orchestration behind the `brainfit` binary
//!
//! Each capability has a runnable program under `examples/`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod encoding;
pub mod error;
pub mod features;
pub mod groupstats;
pub mod io;
pub mod pipeline;
pub mod preprocess;
pub mod reporting;
pub mod special;
pub mod synth;
pub mod voxelsel;

pub use error::{Error, Result};
