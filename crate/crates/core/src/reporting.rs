//! Perplexity versus brain-score analysis and slice rendering.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::pearson_r;
use crate::io::{self, IoError, VoxelGrid};

/// The bundled model table (19 trained language models).
pub const MODEL_TABLE_CSV: &str = include_str!("../data/model_table.csv");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("model table is empty")]
    Empty,
    #[error("model table line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("need at least 3 values, got {0}")]
    TooShort(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("all values are tied")]
    AllTied,
    #[error("map has {found} voxels, grid has {expected}")]
    MapGrid { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] IoError),
}

type Result<T> = std::result::Result<T, ReportError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelClass {
    #[serde(rename = "GloVe")]
    GloVe,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GPT-2")]
    Gpt2,
    #[serde(rename = "BERT")]
    Bert,
}

impl fmt::Display for ModelClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelClass::GloVe => "GloVe",
            ModelClass::Lstm => "LSTM",
            ModelClass::Gpt2 => "GPT-2",
            ModelClass::Bert => "BERT",
        })
    }
}

impl FromStr for ModelClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "GloVe" => Ok(ModelClass::GloVe),
            "LSTM" => Ok(ModelClass::Lstm),
            "GPT-2" => Ok(ModelClass::Gpt2),
            "BERT" => Ok(ModelClass::Bert),
            other => Err(format!("unknown model class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub model_class: ModelClass,
    pub n_layers: u32,
    pub training_dataset: String,
    /// As written in the table, e.g. `4.8G`.
    pub dataset_size: String,
    pub dataset_bytes: u64,
    pub perplexity: f64,
    pub brain_score: f64,
}

impl ModelRecord {
    /// Short label such as `LSTM L-1 Full`.
    pub fn label(&self) -> String {
        format!("{} L-{} {}", self.model_class, self.n_layers, self.training_dataset)
    }
}

/// Decimal byte count from a size like `425M` or `2.2G`.
pub fn parse_size(s: &str) -> Option<u64> {
    let s = s.trim();
    let (num, mult) = match s.chars().last()? {
        'K' => (&s[..s.len() - 1], 1e3),
        'M' => (&s[..s.len() - 1], 1e6),
        'G' => (&s[..s.len() - 1], 1e9),
        'T' => (&s[..s.len() - 1], 1e12),
        _ => (s, 1.0),
    };
    let x: f64 = num.parse().ok()?;
    (x >= 0.0 && x.is_finite()).then(|| (x * mult).round() as u64)
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    model_class: String,
    n_layers: u32,
    training_dataset: String,
    dataset_size: String,
    perplexity: f64,
    brain_score: f64,
}

/// Parses the six-column model table; lines starting with `#` are skipped.
pub fn parse_model_table(text: &str) -> Result<Vec<ModelRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.deserialize::<RawRecord>() {
        let row = row.map_err(|e| ReportError::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = out.len() as u64 + 1;
        let bad = |message: String| ReportError::Row { line, message };
        let model_class = row.model_class.parse().map_err(bad)?;
        let dataset_bytes = parse_size(&row.dataset_size)
            .ok_or_else(|| bad(format!("bad dataset size {:?}", row.dataset_size)))?;
        if !(row.perplexity > 1.0 && row.perplexity.is_finite()) {
            return Err(bad(format!("perplexity {} must exceed 1", row.perplexity)));
        }
        if !(-1.0..=1.0).contains(&row.brain_score) {
            return Err(bad(format!("brain score {} outside [-1, 1]", row.brain_score)));
        }
        out.push(ModelRecord {
            model_class,
            n_layers: row.n_layers,
            training_dataset: row.training_dataset,
            dataset_size: row.dataset_size,
            dataset_bytes,
            perplexity: row.perplexity,
            brain_score: row.brain_score,
        });
    }
    if out.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(out)
}

pub fn load_model_table(path: impl AsRef<Path>) -> Result<Vec<ModelRecord>> {
    parse_model_table(&io::read_text(path.as_ref())?)
}

pub fn bundled_model_table() -> Vec<ModelRecord> {
    parse_model_table(MODEL_TABLE_CSV).expect("bundled table parses")
}

/// 1-based ranks, tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(ReportError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(ReportError::TooShort(x.len()));
    }
    pearson_r(&average_ranks(x), &average_ranks(y)).map_err(|_| ReportError::AllTied)
}

/// Grouping used for per-group rank correlations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    ModelClass,
    NLayers,
}

impl GroupKey {
    fn value(&self, r: &ModelRecord) -> String {
        match self {
            GroupKey::ModelClass => r.model_class.to_string(),
            GroupKey::NLayers => r.n_layers.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub label: String,
    pub perplexity: f64,
    pub brain_score: f64,
}

impl From<&ModelRecord> for RecordSummary {
    fn from(r: &ModelRecord) -> Self {
        Self {
            label: r.label(),
            perplexity: r.perplexity,
            brain_score: r.brain_score,
        }
    }
}

/// A cross-class pair where lower perplexity goes with a lower brain score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub lower_perplexity: RecordSummary,
    pub higher_perplexity: RecordSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub n_records: usize,
    /// Spearman rho of perplexity against brain score over all records.
    pub global_rho: Option<f64>,
    /// Per grouping, per group value; `None` below 3 records or when tied.
    pub group_rho: BTreeMap<GroupKey, BTreeMap<String, Option<f64>>>,
    pub best_perplexity: RecordSummary,
    pub best_brain_score: RecordSummary,
    pub counterexamples: Vec<Counterexample>,
}

impl MonotonicityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One line per counterexample pair.
    pub fn counterexamples_csv(&self) -> String {
        let mut out = String::from(
            "lower_perplexity_model,perplexity,brain_score,other_model,other_perplexity,other_brain_score\n",
        );
        for c in &self.counterexamples {
            let (a, b) = (&c.lower_perplexity, &c.higher_perplexity);
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.label, a.perplexity, a.brain_score, b.label, b.perplexity, b.brain_score
            ));
        }
        out
    }
}

fn rho_of(records: &[&ModelRecord]) -> Option<f64> {
    let x: Vec<f64> = records.iter().map(|r| r.perplexity).collect();
    let y: Vec<f64> = records.iter().map(|r| r.brain_score).collect();
    spearman_rho(&x, &y).ok()
}

/// Rank correlations and counterexamples to "lower perplexity, higher score".
pub fn monotonicity_report(records: &[ModelRecord], group_keys: &[GroupKey]) -> Result<MonotonicityReport> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let all: Vec<&ModelRecord> = records.iter().collect();
    let mut group_rho = BTreeMap::new();
    for key in group_keys {
        let mut groups: BTreeMap<String, Vec<&ModelRecord>> = BTreeMap::new();
        for r in records {
            groups.entry(key.value(r)).or_default().push(r);
        }
        group_rho.insert(
            *key,
            groups.into_iter().map(|(g, rs)| (g, rho_of(&rs))).collect(),
        );
    }
    // first occurrence wins on ties
    let best_perplexity = records
        .iter()
        .reduce(|a, b| if b.perplexity < a.perplexity { b } else { a })
        .expect("nonempty");
    let best_brain_score = records
        .iter()
        .reduce(|a, b| if b.brain_score > a.brain_score { b } else { a })
        .expect("nonempty");
    let mut counterexamples = Vec::new();
    for a in records {
        for b in records {
            if a.model_class != b.model_class
                && a.perplexity < b.perplexity
                && a.brain_score < b.brain_score
            {
                counterexamples.push(Counterexample {
                    lower_perplexity: a.into(),
                    higher_perplexity: b.into(),
                });
            }
        }
    }
    Ok(MonotonicityReport {
        n_records: records.len(),
        global_rho: rho_of(&all),
        group_rho,
        best_perplexity: best_perplexity.into(),
        best_brain_score: best_brain_score.into(),
        counterexamples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    fn name(self) -> char {
        ['x', 'y', 'z'][self.index()]
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            other => Err(format!("axis must be x, y or z, got {other:?}")),
        }
    }
}

/// Binary graymaps (P5) for every slice along `axis`.
///
/// In-mask finite values are min-max scaled to 0..=255 over the whole map;
/// a constant map renders as 128. Cells outside the mask and NaN voxels are 0.
/// The two remaining axes map to rows and columns in increasing order.
pub fn render_slice_images(map: &[f64], grid: &VoxelGrid, axis: Axis) -> Result<Vec<Vec<u8>>> {
    if map.len() != grid.n_voxels() {
        return Err(ReportError::MapGrid {
            expected: grid.n_voxels(),
            found: map.len(),
        });
    }
    let finite = map.iter().copied().filter(|x| x.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let scale = |x: f64| -> u8 {
        if !x.is_finite() {
            0
        } else if !(hi > lo) {
            128
        } else {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        }
    };
    let volume = grid.to_volume(map, f64::NAN);
    let dims = grid.dims();
    let a = axis.index();
    let (r_ax, c_ax) = match a {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    Ok((0..dims[a])
        .map(|s| {
            let (h, w) = (dims[r_ax], dims[c_ax]);
            let mut img = format!("P5\n{w} {h}\n255\n").into_bytes();
            for r in 0..h {
                for c in 0..w {
                    let mut ijk = [0; 3];
                    ijk[a] = s;
                    ijk[r_ax] = r;
                    ijk[c_ax] = c;
                    let cell = grid.cell_index(ijk);
                    img.push(if grid.mask()[cell] { scale(volume[cell]) } else { 0 });
                }
            }
            img
        })
        .collect())
}

/// Writes `slice_<axis>_<idx>.pgm` files and returns their paths.
pub fn render_slices(map: &[f64], grid: &VoxelGrid, axis: Axis, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let images = render_slice_images(map, grid, axis)?;
    std::fs::create_dir_all(out_dir).map_err(|e| IoError::File {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    images
        .iter()
        .enumerate()
        .map(|(s, img)| {
            let p = out_dir.join(format!("slice_{}_{s:03}.pgm", axis.name()));
            std::fs::write(&p, img).map_err(|e| IoError::File {
                path: p.clone(),
                source: e,
            })?;
            Ok(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_rows_parse() {
        let t = parse_model_table(
            "model_class,n_layers,training_dataset,dataset_size,perplexity,brain_score\n\
             LSTM,1,Wikipedia,425M,167.25,0.0828\n\
             BERT,4,Full,4.8G,9.00,0.1057\n",
        )
        .unwrap();
        assert_eq!(t[0].model_class, ModelClass::Lstm);
        assert_eq!(t[0].dataset_bytes, 425_000_000);
        assert_eq!(t[0].perplexity, 167.25);
        assert_eq!(t[1].label(), "BERT L-4 Full");
        assert_eq!(t[1].dataset_bytes, 4_800_000_000);
        assert!(matches!(parse_model_table(""), Err(ReportError::Empty)));
        assert!(matches!(
            parse_model_table("model_class,n_layers,training_dataset,dataset_size,perplexity,brain_score\nRNN,1,a,1M,2,0.1\n"),
            Err(ReportError::Row { .. })
        ));
    }

    #[test]
    fn bundled_table_has_19_rows() {
        let t = bundled_model_table();
        assert_eq!(t.len(), 19);
        assert_eq!(t.iter().filter(|r| r.model_class == ModelClass::Lstm).count(), 13);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman_rho(&x, &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman_rho(&x, &[5.0, 3.0, 1.0, 0.0, -9.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(spearman_rho(&x, &[1.0; 5]), Err(ReportError::AllTied)));
        assert!(matches!(spearman_rho(&x[..2], &x[..2]), Err(ReportError::TooShort(2))));
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_with_ties_matches_pearson_of_midranks() {
        let x = [1.0, 2.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 2.0, 5.0];
        // midranks written out by hand
        let rx = [1.0, 2.5, 2.5, 4.0, 5.0];
        let ry = [1.0, 4.0, 2.5, 2.5, 5.0];
        let expect = pearson_r(&rx, &ry).unwrap();
        assert!((spearman_rho(&x, &y).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn report_flags_lstm_gpt2_pair() {
        let rep = monotonicity_report(&bundled_model_table(), &[GroupKey::ModelClass, GroupKey::NLayers]).unwrap();
        assert!(rep.counterexamples.iter().any(|c| {
            c.lower_perplexity.label == "GPT-2 L-1 Full" && c.higher_perplexity.label == "LSTM L-1 Full"
        }));
        assert_eq!(rep.best_perplexity.label, "BERT L-4 Full");
        assert_eq!(rep.best_brain_score.label, "BERT L-4 Full");
        assert_eq!(rep.group_rho[&GroupKey::ModelClass].len(), 3);
    }

    #[test]
    fn single_class_global_equals_class_rho() {
        let lstm: Vec<ModelRecord> = bundled_model_table()
            .into_iter()
            .filter(|r| r.model_class == ModelClass::Lstm)
            .collect();
        let rep = monotonicity_report(&lstm, &[GroupKey::ModelClass]).unwrap();
        assert_eq!(rep.global_rho, rep.group_rho[&GroupKey::ModelClass]["LSTM"]);
        assert!(rep.counterexamples.is_empty());
    }

    #[test]
    fn monotone_table_has_no_counterexamples() {
        let classes = [ModelClass::Lstm, ModelClass::Gpt2, ModelClass::Bert];
        let recs: Vec<ModelRecord> = (0..9)
            .map(|i| ModelRecord {
                model_class: classes[i % 3],
                n_layers: 1,
                training_dataset: format!("d{i}"),
                dataset_size: "1M".into(),
                dataset_bytes: 1_000_000,
                perplexity: 100.0 - i as f64,
                brain_score: 0.01 * i as f64,
            })
            .collect();
        let rep = monotonicity_report(&recs, &[]).unwrap();
        assert!(rep.counterexamples.is_empty());
        assert_eq!(rep.global_rho, Some(-1.0));
    }

    #[test]
    fn report_is_reproducible() {
        let t = bundled_model_table();
        let keys = [GroupKey::ModelClass, GroupKey::NLayers];
        assert_eq!(
            monotonicity_report(&t, &keys).unwrap().to_json(),
            monotonicity_report(&t, &keys).unwrap().to_json()
        );
    }

    #[test]
    fn constant_map_renders_mid_gray() {
        let g = VoxelGrid::full([2, 3, 4], [3.0; 3]).unwrap();
        let imgs = render_slice_images(&[0.5; 24], &g, Axis::Z).unwrap();
        assert_eq!(imgs.len(), 4);
        for img in imgs {
            assert!(img.starts_with(b"P5\n3 2\n255\n"));
            assert!(img[11..].iter().all(|&b| b == 128));
        }
    }

    #[test]
    fn bright_voxel_lands_on_its_pixel() {
        let g = VoxelGrid::full([3, 4, 5], [3.0; 3]).unwrap();
        let mut map = vec![0.0; 60];
        map[g.cell_index([1, 2, 3])] = 1.0;
        let header = b"P5\n4 3\n255\n".len();
        let imgs = render_slice_images(&map, &g, Axis::Z).unwrap();
        for (k, img) in imgs.iter().enumerate() {
            let px = &img[header..];
            for (p, &b) in px.iter().enumerate() {
                let bright = k == 3 && p == 4 + 2;
                assert_eq!(b, if bright { 255 } else { 0 });
            }
        }
        let xs = render_slice_images(&map, &g, Axis::X).unwrap();
        let hx = b"P5\n5 4\n255\n".len();
        assert_eq!(xs[1][hx + 2 * 5 + 3], 255);
    }

    #[test]
    fn out_of_mask_is_black() {
        let g = VoxelGrid::new([1, 2, 2], [3.0; 3], vec![true, false, true, true]).unwrap();
        let img = &render_slice_images(&[0.0, 1.0, 2.0], &g, Axis::X).unwrap()[0];
        assert_eq!(&img[b"P5\n2 2\n255\n".len()..], &[0, 0, 128, 255]);
    }

    proptest! {
        #[test]
        fn spearman_invariant_to_monotone_maps(
            x in prop::collection::vec(-100f64..100.0, 3..30),
            seed in 0u64..1000,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * 0.3 + (i as f64 + seed as f64).sin() * 40.0).collect();
            let Ok(r) = spearman_rho(&x, &y) else { return Ok(()); };
            let fx: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            let fy: Vec<f64> = y.iter().map(|v| (v / 50.0).exp()).collect();
            prop_assert!((spearman_rho(&fx, &fy).unwrap() - r).abs() < 1e-12);
        }
    }
}
