//! Dataset ingestion, synthetic generators, noise injection and splits.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{arg, Error, Result};
use crate::rng::{self, TAG_AWGN, TAG_SYNTHETIC};

const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Labeled point data: `features` is N x D, one sample per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub features: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub name: String,
}

impl LabeledDataset {
    pub fn new(features: DMatrix<f64>, labels: Vec<usize>, name: impl Into<String>) -> Result<Self> {
        if features.nrows() == 0 {
            return arg("dataset must contain at least one sample");
        }
        if features.ncols() == 0 {
            return arg("dataset must have at least one feature");
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return arg("features contain non-finite values");
        }
        Ok(Self {
            features,
            labels,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Distinct class ids, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return arg("cannot build an empty subset");
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.len()) {
            return arg(format!("row index {bad} out of range for {} samples", self.len()));
        }
        let features = self.features.select_rows(idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.name.clone())
    }

    /// The first `n` rows (or all, if fewer).
    pub fn head(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Decoded content of an IDX file.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// N x (rows*cols), pixels scaled to [0, 1].
    Images(DMatrix<f64>),
    Labels(Vec<usize>),
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn truncated(expected: usize, got: usize) -> Error {
    Error::Io(io::Error::new(
        io::ErrorKind::UnexpectedEof,
        format!("IDX payload truncated: expected {expected} bytes, found {got}"),
    ))
}

/// Decode an unsigned-byte IDX file (big-endian header, MNIST layout).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.len() < 8 {
        return Err(Error::Format(format!("IDX header too short ({} bytes)", bytes.len())));
    }
    match be_u32(bytes, 0) {
        IDX_LABELS_MAGIC => {
            let n = be_u32(bytes, 4) as usize;
            let payload = &bytes[8..];
            if payload.len() < n {
                return Err(truncated(n, payload.len()));
            }
            Ok(IdxData::Labels(payload[..n].iter().map(|&b| b as usize).collect()))
        }
        IDX_IMAGES_MAGIC => {
            if bytes.len() < 16 {
                return Err(Error::Format("IDX image header too short".into()));
            }
            let n = be_u32(bytes, 4) as usize;
            let rows = be_u32(bytes, 8) as usize;
            let cols = be_u32(bytes, 12) as usize;
            if rows == 0 || cols == 0 {
                return Err(Error::Format(format!("IDX image dimensions {rows}x{cols}")));
            }
            let size = n
                .checked_mul(rows * cols)
                .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
            let payload = &bytes[16..];
            if payload.len() < size {
                return Err(truncated(size, payload.len()));
            }
            let pixels: Vec<f64> = payload[..size].iter().map(|&b| b as f64 / 255.0).collect();
            Ok(IdxData::Images(DMatrix::from_row_slice(n, rows * cols, &pixels)))
        }
        other => Err(Error::Format(format!("unrecognised IDX magic number 0x{other:08X}"))),
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    parse_idx(&fs::read(path)?)
}

/// Load an image file and its label file into one dataset.
pub fn load_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    name: impl Into<String>,
) -> Result<LabeledDataset> {
    let features = match load_idx(images)? {
        IdxData::Images(m) => m,
        IdxData::Labels(_) => return Err(Error::Format("expected an IDX image file".into())),
    };
    let labels = match load_idx(labels)? {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => return Err(Error::Format("expected an IDX label file".into())),
    };
    LabeledDataset::new(features, labels, name)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let n = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&pixels[..n * rows * cols]);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parse rectangular numeric CSV text; `label_column` is removed from the
/// features and read as an integer class id. Lines starting with `#` are
/// ignored.
pub fn parse_csv(text: &str, label_column: usize, has_header: bool) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width = None;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(e.to_string()))?;
        let w = *width.get_or_insert(record.len());
        if label_column >= w {
            return arg(format!("label column {label_column} out of range for {w} columns"));
        }
        if record.len() != w {
            return Err(Error::Format(format!(
                "ragged row {}: {} fields, expected {w}",
                line + 1,
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::Format(format!("non-numeric cell {cell:?} in row {}", line + 1)))?;
            if c == label_column {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Format(format!("label {cell:?} is not a class id")));
                }
                labels.push(v as usize);
            } else {
                values.push(v);
            }
        }
    }
    let w = width.ok_or_else(|| Error::Format("CSV contains no rows".into()))?;
    if w < 2 {
        return Err(Error::Format("CSV needs a label column and at least one feature".into()));
    }
    let features = DMatrix::from_row_slice(labels.len(), w - 1, &values);
    LabeledDataset::new(features, labels, "csv")
}

pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut ds = parse_csv(&text, label_column, has_header)?;
    ds.name = path.display().to_string();
    Ok(ds)
}

/// Features followed by the label as the last column, no header.
/// Values use the shortest round-tripping decimal form.
pub fn to_csv_string(ds: &LabeledDataset) -> String {
    let mut out = String::new();
    for i in 0..ds.len() {
        for v in ds.features.row(i).iter() {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{}\n", ds.labels[i]));
    }
    out
}

/// Linearly map values from `[lo, hi]` onto `[0, 1]`.
pub fn rescale_to_unit(features: &DMatrix<f64>, lo: f64, hi: f64) -> Result<DMatrix<f64>> {
    if !(hi > lo) {
        return arg(format!("empty range [{lo}, {hi}]"));
    }
    Ok(features.map(|v| (v - lo) / (hi - lo)))
}

/// Offset between the two class means of the toy generator.
pub const TOY_CLASS_OFFSET: f64 = 4.0;

/// Two isotropic unit-variance Gaussian blobs centred at (0,0) and (4,0);
/// the first `n_per_class` rows are class 0.
pub fn synthetic_two_class_2d(seed: u64, n_per_class: usize) -> Result<LabeledDataset> {
    if n_per_class == 0 {
        return arg("n_per_class must be at least 1");
    }
    let mut rng = rng::stream(seed, &[TAG_SYNTHETIC]);
    let n = 2 * n_per_class;
    let mut values = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2 {
        let cx = class as f64 * TOY_CLASS_OFFSET;
        for _ in 0..n_per_class {
            let zx: f64 = rng.sample(StandardNormal);
            let zy: f64 = rng.sample(StandardNormal);
            values.push(cx + zx);
            values.push(zy);
            labels.push(class);
        }
    }
    LabeledDataset::new(DMatrix::from_row_slice(n, 2, &values), labels, "toy2d")
}

/// Add white Gaussian noise with variance `mean(x^2) / snr` to every entry.
/// `snr = inf` leaves the input untouched. With `clip` the output is clamped
/// to [0, 1].
pub fn add_awgn(features: &DMatrix<f64>, snr: f64, seed: u64, clip: bool) -> Result<DMatrix<f64>> {
    if snr.is_nan() || snr <= 0.0 {
        return arg(format!("snr must be positive, got {snr}"));
    }
    if snr.is_infinite() {
        return Ok(features.clone());
    }
    let count = features.len().max(1) as f64;
    let power = features.iter().map(|v| v * v).sum::<f64>() / count;
    let sd = (power / snr).sqrt();
    let mut rng = rng::stream(seed, &[TAG_AWGN]);
    let mut out = features.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            let z: f64 = rng.sample(StandardNormal);
            let v = out[(i, j)] + sd * z;
            out[(i, j)] = if clip { v.clamp(0.0, 1.0) } else { v };
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitStrategy {
    Sequential,
    PerClassSequential,
    KFold { k: usize, fold: usize },
}

/// Split sizes. For `PerClassSequential` the counts are per class. For
/// `KFold` the dataset is cut into `k` contiguous folds; `test_count` is
/// ignored, the last `val_count` of the remaining rows become validation and
/// `train_count` (0 = all) caps the training rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    pub strategy: SplitStrategy,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Row indices of each part; every part preserves dataset order.
pub fn split(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    let n = labels.len();
    match spec.strategy {
        SplitStrategy::Sequential => {
            let total = spec.train_count + spec.val_count + spec.test_count;
            if total > n {
                return arg(format!("split needs {total} samples, dataset has {n}"));
            }
            let a = spec.train_count;
            let b = a + spec.val_count;
            Ok(SplitIndices {
                train: (0..a).collect(),
                val: (a..b).collect(),
                test: (b..total).collect(),
            })
        }
        SplitStrategy::PerClassSequential => {
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, &c) in labels.iter().enumerate() {
                by_class.entry(c).or_default().push(i);
            }
            let per = spec.train_count + spec.val_count + spec.test_count;
            let mut out = SplitIndices::default();
            for (class, rows) in &by_class {
                if rows.len() < per {
                    return arg(format!(
                        "class {class} has {} samples, split needs {per}",
                        rows.len()
                    ));
                }
                let a = spec.train_count;
                let b = a + spec.val_count;
                out.train.extend_from_slice(&rows[..a]);
                out.val.extend_from_slice(&rows[a..b]);
                out.test.extend_from_slice(&rows[b..per]);
            }
            out.train.sort_unstable();
            out.val.sort_unstable();
            out.test.sort_unstable();
            Ok(out)
        }
        SplitStrategy::KFold { k, fold } => {
            if k < 2 {
                return arg(format!("k-fold needs k >= 2, got {k}"));
            }
            if fold >= k {
                return arg(format!("fold index {fold} out of range for k = {k}"));
            }
            if n < k {
                return arg(format!("{n} samples cannot fill {k} folds"));
            }
            let base = n / k;
            let extra = n % k;
            let start = fold * base + fold.min(extra);
            let len = base + usize::from(fold < extra);
            let test: Vec<usize> = (start..start + len).collect();
            let rest: Vec<usize> = (0..start).chain(start + len..n).collect();
            if spec.val_count >= rest.len() {
                return arg(format!(
                    "validation count {} leaves no training rows",
                    spec.val_count
                ));
            }
            let cut = rest.len() - spec.val_count;
            let mut train = rest[..cut].to_vec();
            if spec.train_count > 0 {
                train.truncate(spec.train_count);
            }
            Ok(SplitIndices {
                train,
                val: rest[cut..].to_vec(),
                test,
            })
        }
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
