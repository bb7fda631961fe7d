//! On-disk formats.
//!
//! - Arrays: the `.npy` container, version 1.0, little-endian `f4`/`f8`/`i4`,
//!   one to three dimensions. Files are written with the same header layout
//!   numpy uses, so `np.load` reads them and canonical files round-trip
//!   byte for byte.
//! - Event tables: UTF-8 CSV with a `token,onset_s,offset_s` header.
//! - Study manifests: JSON, paths relative to the manifest's directory.
//! - Voxel maps: a 1-D `.npy` of in-mask values plus a `<stem>.grid.json`
//!   sidecar and a `<stem>.mask` int32 volume (NPY format).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EventError, EventTable};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, not an array container")]
    BadMagic,
    #[error("unsupported container version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed array header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype {0:?}")]
    UnsupportedDtype(String),
    #[error("unsupported rank {0}, expected 1 to 3 dimensions")]
    UnsupportedRank(usize),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("shape {shape:?} does not match {len} values")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("expected a {expected}-D array, got shape {shape:?}")]
    WrongRank { expected: usize, shape: Vec<usize> },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("missing field: {0}")]
    MissingField(String),
    #[error("referenced path does not exist: {0}")]
    DanglingPath(PathBuf),
    #[error("manifest declares {0} runs per subject, nested cross-validation needs at least 3")]
    TooFewRuns(usize),
    #[error("subject {subject} lists {found} runs, manifest declares {expected}")]
    RunCountMismatch {
        subject: String,
        expected: usize,
        found: usize,
    },
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
}

type Result<T> = std::result::Result<T, IoError>;

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Array container
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    I32,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::I32 => "<i4",
        }
    }

    fn item_size(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 | Dtype::I32 => 4,
        }
    }

    /// Returns the dtype and whether the payload is big-endian.
    fn parse(descr: &str) -> Result<(Dtype, bool)> {
        let (order, kind) = descr.split_at(descr.len().min(1));
        let big = match order {
            "<" | "|" | "=" => false,
            ">" => true,
            _ => return Err(IoError::UnsupportedDtype(descr.to_string())),
        };
        let dtype = match kind {
            "f4" => Dtype::F32,
            "f8" => Dtype::F64,
            "i4" => Dtype::I32,
            _ => return Err(IoError::UnsupportedDtype(descr.to_string())),
        };
        Ok((dtype, big))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    I32(Vec<i32>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
            ArrayData::I32(_) => Dtype::I32,
        }
    }
}

/// An n-dimensional array (n = 1..=3) stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayContainer {
    shape: Vec<usize>,
    data: ArrayData,
}

impl ArrayContainer {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(IoError::UnsupportedRank(shape.len()));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(IoError::ShapeMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, ArrayData::F64(data))
    }

    pub fn from_vec(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: ArrayData::F64(values.to_vec()),
        }
    }

    /// Row-major copy of a matrix.
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let (r, c) = m.shape();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(m.row(i).iter());
        }
        Self {
            shape: vec![r, c],
            data: ArrayData::F64(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::I32(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Interprets a 2-D array as a matrix; a 1-D array becomes a single column.
    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let (r, c) = match self.shape.as_slice() {
            [n] => (*n, 1),
            [r, c] => (*r, *c),
            _ => {
                return Err(IoError::WrongRank {
                    expected: 2,
                    shape: self.shape.clone(),
                })
            }
        };
        Ok(DMatrix::from_row_slice(r, c, &self.to_f64_vec()))
    }

    fn header(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let mut dict = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
            self.dtype().descr(),
            shape
        );
        let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
        let pad = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
        dict.extend(std::iter::repeat_n(' ', pad));
        dict.push('\n');
        dict.into_bytes()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = self.header();
        let mut out = Vec::with_capacity(10 + header.len() + self.data.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(&header);
        match &self.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
            ArrayData::I32(v) => v.iter().for_each(|x| out.extend(x.to_le_bytes())),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..6] != MAGIC {
            return Err(IoError::BadMagic);
        }
        if bytes.len() < 10 {
            return Err(IoError::Truncated {
                expected: 10,
                found: bytes.len(),
            });
        }
        let (major, minor) = (bytes[6], bytes[7]);
        if (major, minor) != (1, 0) {
            return Err(IoError::UnsupportedVersion(major, minor));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let start = 10 + header_len;
        if bytes.len() < start {
            return Err(IoError::Truncated {
                expected: start,
                found: bytes.len(),
            });
        }
        let header = std::str::from_utf8(&bytes[10..start])
            .map_err(|_| IoError::MalformedHeader("header is not ASCII".into()))?;
        let parsed = parse_header(header)?;
        let (dtype, big_endian) = Dtype::parse(&parsed.descr)?;
        if parsed.shape.is_empty() || parsed.shape.len() > 3 {
            return Err(IoError::UnsupportedRank(parsed.shape.len()));
        }
        let count: usize = parsed.shape.iter().product();
        let expected = count * dtype.item_size();
        let payload = &bytes[start..];
        if payload.len() < expected {
            return Err(IoError::Truncated {
                expected: start + expected,
                found: bytes.len(),
            });
        }
        let payload = &payload[..expected];
        let data = decode(payload, dtype, big_endian);
        let mut array = Self {
            shape: parsed.shape,
            data,
        };
        if parsed.fortran_order {
            array = array.fortran_to_row_major();
        }
        Ok(array)
    }

    fn fortran_to_row_major(self) -> Self {
        let shape = self.shape.clone();
        let n = shape.len();
        // column-major strides
        let mut f_strides = vec![1usize; n];
        for i in 1..n {
            f_strides[i] = f_strides[i - 1] * shape[i - 1];
        }
        let count: usize = shape.iter().product();
        let mut index = vec![0usize; n];
        let mut order = Vec::with_capacity(count);
        for _ in 0..count {
            order.push(index.iter().zip(&f_strides).map(|(i, s)| i * s).sum::<usize>());
            // advance row-major multi-index
            for axis in (0..n).rev() {
                index[axis] += 1;
                if index[axis] < shape[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
        fn gather<T: Copy>(v: &[T], order: &[usize]) -> Vec<T> {
            order.iter().map(|&i| v[i]).collect()
        }
        let data = match &self.data {
            ArrayData::F32(v) => ArrayData::F32(gather(v, &order)),
            ArrayData::F64(v) => ArrayData::F64(gather(v, &order)),
            ArrayData::I32(v) => ArrayData::I32(gather(v, &order)),
        };
        Self { shape, data }
    }
}

fn decode(payload: &[u8], dtype: Dtype, big_endian: bool) -> ArrayData {
    match dtype {
        Dtype::F64 => ArrayData::F64(
            payload
                .chunks_exact(8)
                .map(|c| {
                    let b: [u8; 8] = c.try_into().unwrap();
                    if big_endian {
                        f64::from_be_bytes(b)
                    } else {
                        f64::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        Dtype::F32 => ArrayData::F32(
            payload
                .chunks_exact(4)
                .map(|c| {
                    let b: [u8; 4] = c.try_into().unwrap();
                    if big_endian {
                        f32::from_be_bytes(b)
                    } else {
                        f32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
        Dtype::I32 => ArrayData::I32(
            payload
                .chunks_exact(4)
                .map(|c| {
                    let b: [u8; 4] = c.try_into().unwrap();
                    if big_endian {
                        i32::from_be_bytes(b)
                    } else {
                        i32::from_le_bytes(b)
                    }
                })
                .collect(),
        ),
    }
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the python-literal dict of a `.npy` header.
fn parse_header(text: &str) -> Result<Header> {
    let bad = |msg: &str| IoError::MalformedHeader(format!("{msg} in {text:?}"));
    let body = text
        .trim()
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .ok_or_else(|| bad("missing braces"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| bad("expected ':'"))?
            .trim_start();
        let after = match key {
            "descr" => {
                let (v, a) = take_quoted(after).ok_or_else(|| bad("bad descr"))?;
                descr = Some(v.to_string());
                a
            }
            "fortran_order" => {
                if let Some(a) = after.strip_prefix("True") {
                    fortran = Some(true);
                    a
                } else if let Some(a) = after.strip_prefix("False") {
                    fortran = Some(false);
                    a
                } else {
                    return Err(bad("bad fortran_order"));
                }
            }
            "shape" => {
                let inner = after.strip_prefix('(').ok_or_else(|| bad("bad shape"))?;
                let close = inner.find(')').ok_or_else(|| bad("bad shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
                    .collect::<Result<Vec<_>>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(bad(&format!("unknown key {other}"))),
        };
        rest = after.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    Ok(Header {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let quote = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(quote)?;
    Some((&inner[..end], &inner[end + 1..]))
}

pub fn read_array(path: impl AsRef<Path>) -> Result<ArrayContainer> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(file_err(path))?;
    ArrayContainer::from_bytes(&bytes)
}

pub fn write_array(path: impl AsRef<Path>, array: &ArrayContainer) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&array.to_bytes()))
        .map_err(file_err(path))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_array(path)?.to_matrix()
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    write_array(path, &ArrayContainer::from_matrix(m))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            fs::create_dir_all(parent).map_err(file_err(parent))
        }
        _ => Ok(()),
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(file_err(path))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_err(path))
}

// ---------------------------------------------------------------------------
// Event tables
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    token: String,
    onset_s: f64,
    offset_s: f64,
}

pub fn parse_events(reader: impl Read) -> Result<EventTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut tokens = Vec::new();
    let mut onsets = Vec::new();
    let mut offsets = Vec::new();
    for row in rdr.deserialize::<EventRow>() {
        let row = row?;
        tokens.push(row.token);
        onsets.push(row.onset_s);
        offsets.push(row.offset_s);
    }
    Ok(EventTable::new(tokens, onsets, offsets)?)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventTable> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(file_err(path))?;
    parse_events(std::io::BufReader::new(file))
}

pub fn write_events(path: impl AsRef<Path>, events: &EventTable) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut wtr = csv::Writer::from_path(path)?;
    for i in 0..events.len() {
        wtr.serialize(EventRow {
            token: events.tokens()[i].clone(),
            onset_s: events.onsets()[i],
            offset_s: events.offsets()[i],
        })?;
    }
    wtr.flush().map_err(file_err(path))
}

// ---------------------------------------------------------------------------
// Study manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub bold: PathBuf,
    pub activations: PathBuf,
    pub events: PathBuf,
    /// Prebuilt design matrix, filled in by `build-design`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    pub runs: Vec<RunEntry>,
}

/// A study on disk: subjects, their runs, the scan clock and the brain mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub subjects: Vec<SubjectEntry>,
    pub runs_per_subject: usize,
    pub tr_seconds: f64,
    /// int32 volume, nonzero cells are in the mask.
    pub mask: PathBuf,
    pub voxel_size_mm: [f64; 3],
    /// Column spans of the layers in every activation array; one span over
    /// all columns when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_spans: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl StudyManifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn subject_ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs_per_subject < 3 {
            return Err(IoError::TooFewRuns(self.runs_per_subject));
        }
        for s in &self.subjects {
            if s.runs.len() != self.runs_per_subject {
                return Err(IoError::RunCountMismatch {
                    subject: s.id.clone(),
                    expected: self.runs_per_subject,
                    found: s.runs.len(),
                });
            }
        }
        for p in self.referenced_paths() {
            let full = self.resolve(p);
            if !full.exists() {
                return Err(IoError::DanglingPath(full));
            }
        }
        Ok(())
    }

    fn referenced_paths(&self) -> Vec<&Path> {
        let mut out = vec![self.mask.as_path()];
        for s in &self.subjects {
            for r in &s.runs {
                out.extend([r.bold.as_path(), r.activations.as_path(), r.events.as_path()]);
                if let Some(d) = &r.design {
                    out.push(d.as_path());
                }
            }
        }
        out
    }

    pub fn grid(&self) -> Result<VoxelGrid> {
        read_mask(&self.resolve(&self.mask), self.voxel_size_mm)
    }
}

pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<StudyManifest> {
    let mut manifest: StudyManifest = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if msg.starts_with("missing field") {
            IoError::MissingField(msg)
        } else {
            IoError::Json(e)
        }
    })?;
    manifest.base_dir = base_dir.to_path_buf();
    manifest.validate()?;
    Ok(manifest)
}

/// Reads and validates a manifest; every referenced path must exist.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<StudyManifest> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base)
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &StudyManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    write_text(path.as_ref(), &(text + "\n"))
}

// ---------------------------------------------------------------------------
// Voxel grid and maps
// ---------------------------------------------------------------------------

/// A 3-D grid with a brain mask. In-mask cells are numbered in row-major
/// cell order; that number is the flat voxel index used by every map.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    mask: Vec<bool>,
    voxel_cells: Vec<usize>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], voxel_size_mm: [f64; 3], mask: Vec<bool>) -> Result<Self> {
        if mask.len() != dims.iter().product::<usize>() {
            return Err(IoError::InvalidGrid(format!(
                "mask has {} cells, dims {:?}",
                mask.len(),
                dims
            )));
        }
        if voxel_size_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(IoError::InvalidGrid(format!(
                "voxel sizes must be positive, got {voxel_size_mm:?}"
            )));
        }
        let voxel_cells = mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect();
        Ok(Self {
            dims,
            voxel_size_mm,
            mask,
            voxel_cells,
        })
    }

    pub fn full(dims: [usize; 3], voxel_size_mm: [f64; 3]) -> Result<Self> {
        Self::new(dims, voxel_size_mm, vec![true; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size_mm(&self) -> [f64; 3] {
        self.voxel_size_mm
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_cells(&self) -> usize {
        self.mask.len()
    }

    /// Number of in-mask voxels.
    pub fn n_voxels(&self) -> usize {
        self.voxel_cells.len()
    }

    pub fn cell_index(&self, [i, j, k]: [usize; 3]) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let k = cell % self.dims[2];
        let j = (cell / self.dims[2]) % self.dims[1];
        let i = cell / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    /// Grid cell of flat voxel `v`.
    pub fn voxel_cell(&self, v: usize) -> usize {
        self.voxel_cells[v]
    }

    pub fn voxel_coords(&self, v: usize) -> [usize; 3] {
        self.cell_coords(self.voxel_cells[v])
    }

    /// Scatters in-mask values onto the full grid, filling the rest.
    pub fn to_volume(&self, values: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.n_cells()];
        for (v, &cell) in self.voxel_cells.iter().enumerate() {
            out[cell] = values[v];
        }
        out
    }

    /// Gathers in-mask values from a full-grid volume.
    pub fn from_volume(&self, volume: &[f64]) -> Vec<f64> {
        self.voxel_cells.iter().map(|&c| volume[c]).collect()
    }

    pub fn mask_array(&self) -> ArrayContainer {
        ArrayContainer {
            shape: self.dims.to_vec(),
            data: ArrayData::I32(self.mask.iter().map(|&m| m as i32).collect()),
        }
    }
}

pub fn read_mask(path: &Path, voxel_size_mm: [f64; 3]) -> Result<VoxelGrid> {
    let array = read_array(path)?;
    let dims: [usize; 3] = array.shape().try_into().map_err(|_| IoError::WrongRank {
        expected: 3,
        shape: array.shape().to_vec(),
    })?;
    let mask = array.to_f64_vec().iter().map(|&x| x != 0.0).collect();
    VoxelGrid::new(dims, voxel_size_mm, mask)
}

#[derive(Debug, Serialize, Deserialize)]
struct GridDescriptor {
    dims: [usize; 3],
    voxel_size_mm: [f64; 3],
    n_voxels: usize,
    mask: PathBuf,
}

fn sidecar_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    (
        path.with_file_name(format!("{stem}.grid.json")),
        path.with_file_name(format!("{stem}.mask")),
    )
}

/// Writes in-mask voxel values with the grid descriptor sidecar.
pub fn write_map(values: &[f64], grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if values.len() != grid.n_voxels() {
        return Err(IoError::ShapeMismatch {
            shape: vec![grid.n_voxels()],
            len: values.len(),
        });
    }
    let (json_path, mask_path) = sidecar_paths(path);
    write_array(path, &ArrayContainer::from_vec(values))?;
    write_array(&mask_path, &grid.mask_array())?;
    let desc = GridDescriptor {
        dims: grid.dims,
        voxel_size_mm: grid.voxel_size_mm,
        n_voxels: grid.n_voxels(),
        mask: PathBuf::from(mask_path.file_name().unwrap()),
    };
    write_text(&json_path, &(serde_json::to_string_pretty(&desc)? + "\n"))
}

/// Reads a map written by [`write_map`].
pub fn read_map(path: impl AsRef<Path>) -> Result<(Vec<f64>, VoxelGrid)> {
    let path = path.as_ref();
    let (json_path, _) = sidecar_paths(path);
    if !json_path.exists() {
        return Err(IoError::DanglingPath(json_path));
    }
    let desc: GridDescriptor = serde_json::from_str(&read_text(&json_path)?)?;
    let mask_path = json_path.parent().unwrap_or(Path::new("")).join(&desc.mask);
    let grid = read_mask(&mask_path, desc.voxel_size_mm)?;
    if grid.dims != desc.dims || grid.n_voxels() != desc.n_voxels {
        return Err(IoError::InvalidGrid(format!(
            "descriptor {} disagrees with mask volume",
            json_path.display()
        )));
    }
    let values = read_array(path)?.to_f64_vec();
    if values.len() != grid.n_voxels() {
        return Err(IoError::ShapeMismatch {
            shape: vec![grid.n_voxels()],
            len: values.len(),
        });
    }
    Ok((values, grid))
}
