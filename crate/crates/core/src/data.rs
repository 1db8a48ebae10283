//! Dataset loading, synthetic data and label/pool splits.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{Matrix, RngStream};

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::InvalidSample("dataset has no rows".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::InvalidDimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidSample("non-finite feature value".into()));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        Ok(Self { features, labels, num_classes, name: name.into() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.features.select_rows(indices), labels, self.num_classes, self.name.clone())
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path.display().to_string(), format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, src: &str) -> Result<usize> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
        .ok_or_else(|| Error::format(src, "truncated IDX header"))
}

fn check_magic(bytes: &[u8], want: u32, src: &str) -> Result<()> {
    let got = be_u32(bytes, 0, src)? as u32;
    if got != want {
        return Err(Error::format(src, format!("IDX magic {got:#010x}, expected {want:#010x}")));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, count: usize, src: &str) -> Result<()> {
    if bytes.len() != header + count {
        return Err(Error::format(
            src,
            format!("IDX header declares {count} payload bytes, file holds {}", bytes.len().saturating_sub(header)),
        ));
    }
    Ok(())
}

/// IDX image file: big-endian magic `0x00000803`, count, rows, cols, then
/// one byte per pixel. Pixels are scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], src: &str) -> Result<Matrix> {
    check_magic(bytes, IDX_IMAGES, src)?;
    let n = be_u32(bytes, 4, src)?;
    let rows = be_u32(bytes, 8, src)?;
    let cols = be_u32(bytes, 12, src)?;
    let d = rows.checked_mul(cols).ok_or_else(|| Error::format(src, "image size overflow"))?;
    let total = n.checked_mul(d).ok_or_else(|| Error::format(src, "payload size overflow"))?;
    check_payload(bytes, 16, total, src)?;
    Matrix::new(n, d, bytes[16..].iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// IDX label file: big-endian magic `0x00000801`, count, one byte per label.
pub fn parse_idx_labels(bytes: &[u8], src: &str) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS, src)?;
    let n = be_u32(bytes, 4, src)?;
    check_payload(bytes, 8, n, src)?;
    Ok(bytes[8..].iter().map(|&b| usize::from(b)).collect())
}

/// Gzip-compressed files are detected by their magic and inflated first.
pub fn load_idx_images(path: &Path) -> Result<Matrix> {
    parse_idx_images(&read_maybe_gz(path)?, &path.display().to_string())
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    parse_idx_labels(&read_maybe_gz(path)?, &path.display().to_string())
}

/// Images and labels as one dataset; `K` is one more than the largest label.
pub fn load_idx_dataset(images: &Path, labels: &Path, name: &str) -> Result<Dataset> {
    let x = load_idx_images(images)?;
    let y = load_idx_labels(labels)?;
    if x.rows() != y.len() {
        return Err(Error::format(
            labels.display().to_string(),
            format!("{} labels for {} images", y.len(), x.rows()),
        ));
    }
    let k = y.iter().max().map_or(0, |m| m + 1);
    Dataset::new(x, y, k, name)
}

/// Numeric CSV with a header row. Every column except `label_column` is a
/// feature; label strings are numbered by first appearance.
pub fn load_csv_tabular(path: &Path, label_column: &str) -> Result<Dataset> {
    let src = path.display().to_string();
    let fmt = |reason: String| Error::format(src.as_str(), reason);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => fmt(format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| fmt(e.to_string()))?.clone();
    let label_at = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| fmt(format!("no column named {label_column:?}")))?;
    let d = header.len() - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut names: HashMap<String, usize> = HashMap::new();
    for (line, record) in reader.records().enumerate() {
        // csv reports ragged rows as errors by default
        let record = record.map_err(|e| fmt(e.to_string()))?;
        for (j, field) in record.iter().enumerate() {
            if j == label_at {
                let next = names.len();
                labels.push(*names.entry(field.to_string()).or_insert(next));
            } else {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| fmt(format!("row {}: non-numeric value {field:?}", line + 2)))?;
                if !v.is_finite() {
                    return Err(fmt(format!("row {}: non-finite value {field:?}", line + 2)));
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(fmt("no data rows".into()));
    }
    let name = path.file_stem().map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(Matrix::new(labels.len(), d, data)?, labels, names.len(), name)
}

/// Inverse of [`load_csv_tabular`]: columns `x0..x{d-1}` then `label_column`
/// holding the class index. Floats use the shortest round-trip form.
pub fn write_csv_tabular(dataset: &Dataset, path: &Path, label_column: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    let csv_err = |e: csv::Error| Error::format(path.display().to_string(), e.to_string());
    let mut header: Vec<String> = (0..dataset.dim()).map(|j| format!("x{j}")).collect();
    header.push(label_column.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (row, y) in dataset.features.iter_rows().zip(&dataset.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `K` isotropic Gaussian clusters, `per_class_n` points each, rows grouped
/// by class. Centres are standard normal draws times `center_scale`.
pub fn gen_gaussian_blobs(
    num_classes: usize,
    per_class_n: usize,
    dim: usize,
    spread: f64,
    center_scale: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class_n == 0 || dim == 0 {
        return Err(Error::InvalidConfig("blob classes, per-class count and dim must be at least 1".into()));
    }
    if !(spread >= 0.0 && spread.is_finite() && center_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid blob spread {spread} or scale {center_scale}")));
    }
    let root = RngStream::new(seed);
    let mut centers = root.split("centers");
    let mut noise = root.split("points");
    let mut data = Vec::with_capacity(num_classes * per_class_n * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class_n);
    for k in 0..num_classes {
        let c: Vec<f64> = (0..dim).map(|_| center_scale * centers.standard_normal()).collect();
        for _ in 0..per_class_n {
            data.extend(c.iter().map(|&m| m + spread * noise.standard_normal()));
            labels.push(k);
        }
    }
    Dataset::new(Matrix::new(labels.len(), dim, data)?, labels, num_classes, format!("blobs{num_classes}x{dim}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub initial_labelled: usize,
    pub seed: u64,
}

/// Both index lists are sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InitialSplit {
    pub labelled: Vec<usize>,
    pub unlabelled: Vec<usize>,
}

/// Uniform draw of `M₀` of `n` indices to label; the rest form the pool.
pub fn make_initial_split(n: usize, spec: SplitSpec) -> Result<InitialSplit> {
    if spec.initial_labelled == 0 || spec.initial_labelled > n {
        return Err(Error::InvalidSplit(format!(
            "initial labelled count {} must be in 1..={n}",
            spec.initial_labelled
        )));
    }
    let mut labelled = RngStream::new(spec.seed).sample_indices(n, spec.initial_labelled);
    labelled.sort_unstable();
    let mut taken = vec![false; n];
    labelled.iter().for_each(|&i| taken[i] = true);
    let unlabelled = (0..n).filter(|&i| !taken[i]).collect();
    Ok(InitialSplit { labelled, unlabelled })
}

/// Sorted uniform subsample of `k` of `n` indices.
pub fn subsample_indices(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k > n {
        return Err(Error::InvalidSplit(format!("cannot subsample {k} of {n} rows")));
    }
    let mut idx = RngStream::new(seed).sample_indices(n, k);
    idx.sort_unstable();
    Ok(idx)
}
