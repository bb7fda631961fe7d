//! The `brainfit` command line: one subcommand per pipeline stage.
//!
//! Every subcommand prints a JSON summary on stdout (except `overlap`, which
//! prints its table as CSV) and writes its artifacts under `--out`. Logs go to
//! stderr. Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::encoding::LambdaGrid;
use crate::features::HrfSpec;
use crate::groupstats::{GroupConfig, Tail};
use crate::io::{self, IoError};
use crate::pipeline::{self, write_json};
use crate::reporting::{self, Axis, GroupKey};
use crate::synth::{self, SynthSpec};
use crate::voxelsel::{self, SrmConfig, VoxelSet};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "brainfit", version, about = "Voxelwise encoding models over synthetic or real studies")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic study with planted ground truth.
    Synth(SynthArgs),
    /// Build scan-aligned design matrices for every run of a manifest.
    BuildDesign(BuildDesignArgs),
    /// Nested cross-validated ridge fit per subject; writes R maps.
    Fit(FitArgs),
    /// Smooth, t-test and Bonferroni-threshold subject maps.
    Group(GroupArgs),
    /// Select a voxel set from a map percentile or from shared-response reliability.
    Select(SelectArgs),
    /// Pairwise and all-way overlap of equal-size voxel sets (CSV on stdout).
    Overlap(OverlapArgs),
    /// Mean of each map over a voxel set.
    Score(ScoreArgs),
    /// Brain score versus perplexity report over a model table.
    Report(ReportArgs),
    /// Render a map as one grayscale image per slice.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON synthetic-study spec; missing fields take their defaults.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Replaces the seed given in `--spec`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HrfArgs {
    #[arg(long, default_value_t = 6.0)]
    pub hrf_peak_delay: f64,
    #[arg(long, default_value_t = 16.0)]
    pub hrf_undershoot_delay: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hrf_peak_dispersion: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hrf_undershoot_dispersion: f64,
    #[arg(long, default_value_t = 1.0 / 6.0)]
    pub hrf_undershoot_ratio: f64,
    #[arg(long, default_value_t = 32.0)]
    pub hrf_length: f64,
    /// Sampling step of the kernel and of the event convolution, seconds.
    #[arg(long, default_value_t = 0.2)]
    pub hrf_dt: f64,
}

impl HrfArgs {
    fn spec(&self) -> Result<HrfSpec> {
        let spec = HrfSpec {
            peak_delay_s: self.hrf_peak_delay,
            undershoot_delay_s: self.hrf_undershoot_delay,
            peak_dispersion: self.hrf_peak_dispersion,
            undershoot_dispersion: self.hrf_undershoot_dispersion,
            undershoot_ratio: self.hrf_undershoot_ratio,
            kernel_length_s: self.hrf_length,
            dt_s: self.hrf_dt,
        };
        spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Args)]
pub struct BuildDesignArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hrf: HrfArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub lambda_min: f64,
    #[arg(long, default_value_t = 1e5)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 10)]
    pub n_lambdas: usize,
    /// Explicit penalty list; replaces the log-spaced grid.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[command(flatten)]
    pub hrf: HrfArgs,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    /// One R map per subject.
    #[arg(long, num_args = 1.., required = true)]
    pub maps: Vec<PathBuf>,
    /// Paired maps subtracted subject by subject before the test.
    #[arg(long, num_args = 1..)]
    pub minus: Option<Vec<PathBuf>>,
    #[arg(long, default_value_t = 6.0)]
    pub fwhm: f64,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long)]
    pub two_sided: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Map to threshold at its top `--pct` percent.
    #[arg(long, conflicts_with = "manifest")]
    pub map: Option<PathBuf>,
    /// Study to fit the shared response model on.
    #[arg(long, requires = "srm")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub srm: bool,
    #[arg(long, default_value_t = 25.0)]
    pub pct: f64,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub srm_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Label stored in the set and used as its overlap column header.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long, num_args = 2.., required = true)]
    pub sets: Vec<PathBuf>,
    /// Column labels; default to each set's stored label.
    #[arg(long, num_args = 2..)]
    pub labels: Option<Vec<String>>,
    /// Also write `overlap.csv` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub maps: Vec<PathBuf>,
    #[arg(long)]
    pub set: PathBuf,
    /// Also write `score.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Model table CSV; the bundled table when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, default_value = "z")]
    pub axis: String,
    #[arg(long)]
    pub out: PathBuf,
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| {
        IoError::File {
            path: p.to_path_buf(),
            source: e,
        }
        .into()
    })
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(IoError::Json)?);
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| IoError::File {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str::<SynthSpec>(&text).map_err(IoError::Json)?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let (manifest, truth) = synth::gen_study(&spec, &a.out)?;
    print_json(&json!({
        "manifest": manifest,
        "seed": spec.seed,
        "n_subjects": spec.n_subjects,
        "n_runs": spec.n_runs,
        "n_voxels": spec.n_voxels,
        "signal_voxels": truth.signal_set.indices,
    }))
}

fn cmd_build_design(a: &BuildDesignArgs) -> Result<()> {
    let hrf = a.hrf.spec()?;
    let manifest = io::read_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let path = pipeline::build_designs(&manifest, &hrf, &a.out)?;
    print_json(&json!({ "manifest": path }))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let hrf = a.hrf.spec()?;
    let grid = match &a.lambdas {
        Some(v) => LambdaGrid::new(v.clone()),
        None => LambdaGrid::log_spaced(a.lambda_min, a.lambda_max, a.n_lambdas),
    }
    .map_err(|e| Error::Usage(e.to_string()))?;
    let manifest = io::read_manifest(&a.manifest)?;
    create_dir(&a.out)?;
    let subjects = pipeline::fit_manifest(&manifest, &grid, &hrf, &a.out)?;
    let summary = json!({
        "lambdas": grid.values(),
        "subjects": subjects,
    });
    write_json(&a.out.join("fit.json"), &summary)?;
    print_json(&summary)
}

fn cmd_group(a: &GroupArgs) -> Result<()> {
    if !(a.fwhm.is_finite() && a.fwhm > 0.0) {
        return Err(Error::Usage(format!("--fwhm must be positive, got {}", a.fwhm)));
    }
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(Error::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    if let Some(m) = &a.minus {
        if m.len() != a.maps.len() {
            return Err(Error::Usage("--minus needs one map per --maps entry".into()));
        }
    }
    let config = GroupConfig {
        fwhm_mm: a.fwhm,
        alpha: a.alpha,
        tail: if a.two_sided { Tail::TwoSided } else { Tail::Greater },
    };
    let (_, summary) = pipeline::group_stage(&a.maps, a.minus.as_deref(), &config, &a.out)?;
    log::info!("{} of {} voxels survive", summary.n_survived, summary.n_voxels);
    print_json(&summary)
}

fn check_pct(pct: f64) -> Result<()> {
    if pct > 0.0 && pct <= 100.0 {
        Ok(())
    } else {
        Err(Error::Usage(format!("--pct must lie in (0, 100], got {pct}")))
    }
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    check_pct(a.pct)?;
    create_dir(&a.out)?;
    let (set, grid) = match (&a.map, &a.manifest) {
        (Some(map), None) => {
            let (values, grid) = io::read_map(map)?;
            let label = a.label.clone().unwrap_or_else(|| format!("top{}", a.pct));
            (voxelsel::top_percentile(&values, a.pct, &label)?, grid)
        }
        (None, Some(m)) => {
            if a.k == 0 {
                return Err(Error::Usage("--k must be positive".into()));
            }
            let manifest = io::read_manifest(m)?;
            let grid = manifest.grid()?;
            let config = SrmConfig {
                k: a.k,
                n_iters: a.srm_iters,
                seed: a.seed,
            };
            let (reliability, mut set) = pipeline::srm_selection(&manifest, &config, a.pct)?;
            if let Some(l) = &a.label {
                set.source = l.clone();
            }
            io::write_map(&reliability.values, &grid, a.out.join("reliability.npy"))?;
            (set, grid)
        }
        _ => return Err(Error::Usage("give either --map or --manifest with --srm".into())),
    };
    let path = a.out.join("set.json");
    pipeline::write_set(&set, &grid, &path)?;
    print_json(&json!({
        "set": path,
        "label": set.source,
        "n_selected": set.len(),
        "n_voxels": set.n_voxels,
    }))
}

fn cmd_overlap(a: &OverlapArgs) -> Result<()> {
    let mut sets = a
        .sets
        .iter()
        .map(VoxelSet::read_json)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(labels) = &a.labels {
        if labels.len() != sets.len() {
            return Err(Error::Usage("--labels needs one label per set".into()));
        }
        for (s, l) in sets.iter_mut().zip(labels) {
            s.source = l.clone();
        }
    }
    let csv = voxelsel::overlap_percent(&sets)?.to_csv();
    if let Some(out) = &a.out {
        create_dir(out)?;
        io::write_text(&out.join("overlap.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_score(a: &ScoreArgs) -> Result<()> {
    let set = VoxelSet::read_json(&a.set)?;
    let mut scores = Vec::with_capacity(a.maps.len());
    for p in &a.maps {
        let (values, _) = io::read_map(p)?;
        scores.push(voxelsel::brain_score(&values, &set)?);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let summary = json!({
        "set": set.source,
        "n_selected": set.len(),
        "maps": a.maps,
        "scores": scores,
        "mean": mean,
    });
    if let Some(out) = &a.out {
        create_dir(out)?;
        write_json(&out.join("score.json"), &summary)?;
    }
    print_json(&summary)
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    let records = match &a.table {
        Some(p) => reporting::load_model_table(p)?,
        None => reporting::bundled_model_table(),
    };
    let report = reporting::monotonicity_report(&records, &[GroupKey::ModelClass, GroupKey::NLayers])?;
    create_dir(&a.out)?;
    io::write_text(&a.out.join("report.json"), &(report.to_json() + "\n"))?;
    io::write_text(&a.out.join("counterexamples.csv"), &report.counterexamples_csv())?;
    println!("{}", report.to_json());
    Ok(())
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let axis: Axis = a.axis.parse().map_err(Error::Usage)?;
    let (values, grid) = io::read_map(&a.map)?;
    let files = reporting::render_slices(&values, &grid, axis, &a.out)?;
    print_json(&json!({ "n_slices": files.len(), "files": files }))
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::BuildDesign(a) => cmd_build_design(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Group(a) => cmd_group(a),
        Command::Select(a) => cmd_select(a),
        Command::Overlap(a) => cmd_overlap(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
        Command::Render(a) => cmd_render(a),
    }
}

/// Runs a parsed command inside a pool of `cli.threads` workers.
pub fn execute(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Usage(e.to_string()))?;
    pool.install(|| dispatch(cli))
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
