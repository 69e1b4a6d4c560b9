//! Whitespace-delimited matrix files, per-column standardization, sliding
//! windows and train/validation/test splitting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::{WindowBatch, WindowOrigin};
use crate::error::{FddError, Result};
use crate::tensor::Tensor2;

/// Per-column affine standardization `(x − μ) / σ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(FddError::dim("scaler mean and std lengths differ"));
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(FddError::Config("scaler std entries must be positive".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn columns(&self) -> usize {
        self.mean.len()
    }

    /// Fits on a stream of rows. Population std; columns with zero spread
    /// get σ = 1.
    pub fn fit_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, columns: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.is_empty() {
            return Err(FddError::Input("cannot fit a scaler on zero rows".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != columns) {
            return Err(FddError::dim(format!("row has {} columns, expected {columns}", r.len())));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; columns];
        let mut std = vec![1.0; columns];
        for c in 0..columns {
            let first = rows[0][c];
            if rows.iter().all(|r| r[c] == first) {
                // Constant column: exact zeros after standardization.
                mean[c] = first;
                continue;
            }
            let m = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - m) * (r[c] - m)).sum::<f64>() / n;
            mean[c] = m;
            if var.sqrt() > 0.0 && var.is_finite() {
                std[c] = var.sqrt();
            }
        }
        Ok(Self { mean, std })
    }

    pub fn fit(data: &Tensor2) -> Result<Self> {
        Self::fit_rows((0..data.rows()).map(|r| data.row(r)), data.cols())
    }

    pub fn apply_value(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.std[col]
    }

    pub fn invert_value(&self, col: usize, v: f64) -> f64 {
        v * self.std[col] + self.mean[col]
    }

    pub fn apply(&self, data: &Tensor2) -> Result<Tensor2> {
        if data.cols() != self.columns() {
            return Err(FddError::dim(format!(
                "data has {} columns, scaler has {}",
                data.cols(),
                self.columns()
            )));
        }
        let mut out = data.clone();
        let d = self.columns();
        for (k, v) in out.as_mut_slice().iter_mut().enumerate() {
            *v = self.apply_value(k % d, *v);
        }
        Ok(out)
    }

    pub fn apply_batch(&self, batch: &WindowBatch) -> Result<WindowBatch> {
        if batch.features() != self.columns() {
            return Err(FddError::dim("window features do not match scaler"));
        }
        let mut out = batch.clone();
        out.map_values(|c, v| self.apply_value(c, v));
        Ok(out)
    }

    /// Two comma-separated lines, `mean` then `std`.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        format!("mean,{}\nstd,{}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        for line in s.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split(',');
            let key = parts.next().unwrap_or_default();
            let vals = parts
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| FddError::Input(format!("bad scaler value: {e}")))?;
            match key {
                "mean" => mean = Some(vals),
                "std" => std = Some(vals),
                other => return Err(FddError::Input(format!("unknown scaler row {other:?}"))),
            }
        }
        match (mean, std) {
            (Some(m), Some(s)) => Self::new(m, s),
            _ => Err(FddError::Input("scaler text needs mean and std rows".into())),
        }
    }
}

/// Fit-or-apply standardization.
pub fn standardize(data: &Tensor2, scaler: Option<&Scaler>) -> Result<(Tensor2, Scaler)> {
    let scaler = match scaler {
        Some(s) => s.clone(),
        None => Scaler::fit(data)?,
    };
    let out = scaler.apply(data)?;
    Ok((out, scaler))
}

/// Result of [`load_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedMatrix {
    pub data: Tensor2,
    /// True when the file was stored `expected_cols × N` and got transposed.
    pub transposed: bool,
}

/// Parses a whitespace-delimited numeric matrix.
///
/// When `expected_cols` is given and the file has that many rows but a
/// different column count, the matrix is transposed.
pub fn load_matrix(path: &Path, expected_cols: Option<usize>) -> Result<LoadedMatrix> {
    let text = fs::read_to_string(path)?;
    parse_matrix(&text, path, expected_cols)
}

pub fn parse_matrix(text: &str, path: &Path, expected_cols: Option<usize>) -> Result<LoadedMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(toks.len());
        for t in toks {
            let v: f64 = t.parse().map_err(|_| FddError::Format {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: format!("non-numeric token {t:?}"),
            })?;
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(FddError::Format {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    msg: format!("row has {} values, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    let data = Tensor2::from_rows(&rows)?;
    match expected_cols {
        Some(c) if data.cols() != c && data.rows() == c => Ok(LoadedMatrix {
            data: data.transpose(),
            transposed: true,
        }),
        Some(c) if data.cols() != c => Err(FddError::Format {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("matrix is {}x{}, expected {c} columns", data.rows(), data.cols()),
        }),
        _ => Ok(LoadedMatrix { data, transposed: false }),
    }
}

/// Writes one row per line, values space-separated at full precision.
pub fn format_matrix(data: &Tensor2) -> String {
    let mut s = String::with_capacity(data.rows() * data.cols() * 20);
    for r in 0..data.rows() {
        for (k, v) in data.row(r).iter().enumerate() {
            if k > 0 {
                s.push(' ');
            }
            // `{:e}` is shortest round-trip in scientific form.
            write!(s, "{v:e}").expect("string write");
        }
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: &Path, data: &Tensor2) -> Result<()> {
    fs::write(path, format_matrix(data))?;
    Ok(())
}

/// One integer label per line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(ln, l)| {
            l.trim().parse().map_err(|_| FddError::Format {
                path: path.to_path_buf(),
                line: ln + 1,
                msg: format!("bad label {l:?}"),
            })
        })
        .collect()
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        writeln!(s, "{l}").expect("string write");
    }
    fs::write(path, s)?;
    Ok(())
}

/// Stride-1 sliding windows; window `i` covers samples `[i, i+H)` and takes
/// the label of sample `i+H−1`.
pub fn make_windows(series: &Tensor2, labels: &[usize], horizon: usize) -> Result<WindowBatch> {
    make_windows_strided(series, labels, horizon, 1, 0)
}

/// Like [`make_windows`] with a window stride and a source id recorded in
/// each window's origin.
pub fn make_windows_strided(
    series: &Tensor2,
    labels: &[usize],
    horizon: usize,
    stride: usize,
    source: u32,
) -> Result<WindowBatch> {
    if labels.len() != series.rows() {
        return Err(FddError::dim(format!(
            "{} labels for {} samples",
            labels.len(),
            series.rows()
        )));
    }
    if horizon == 0 || stride == 0 {
        return Err(FddError::Config("horizon and stride must be positive".into()));
    }
    let len = series.rows();
    if len < horizon {
        return Err(FddError::InsufficientData { len, horizon });
    }
    let d = series.cols();
    let count = (len - horizon) / stride + 1;
    let mut data = Vec::with_capacity(count * horizon * d);
    let mut out_labels = Vec::with_capacity(count);
    let mut origins = Vec::with_capacity(count);
    for k in 0..count {
        let start = k * stride;
        data.extend_from_slice(&series.as_slice()[start * d..(start + horizon) * d]);
        out_labels.push(labels[start + horizon - 1]);
        origins.push(WindowOrigin { source, start });
    }
    WindowBatch::new(horizon, d, data, out_labels, origins)
}

/// Partition fractions for [`split`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    /// Time-ordered blocks per class (with overlap exclusion) instead of a
    /// seeded shuffle.
    pub contiguous: bool,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train, self.validation, self.test];
        if f.iter().any(|&x| !(x >= 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(FddError::Config(format!("split fractions must be nonnegative and sum to 1: {f:?}")));
        }
        Ok(())
    }
}

/// Index sets of a split, plus the windows dropped to prevent overlap leakage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub excluded: Vec<usize>,
}

fn block_sizes(n: usize, spec: &SplitSpec) -> (usize, usize) {
    let n_train = (n as f64 * spec.train).round() as usize;
    let n_val = ((n as f64 * spec.validation).round() as usize).min(n - n_train.min(n));
    (n_train.min(n), n_val)
}

fn overlaps(a: &WindowOrigin, b: &WindowOrigin, horizon: usize) -> bool {
    a.source == b.source && a.start < b.start + horizon && b.start < a.start + horizon
}

/// Computes split membership without copying windows.
pub fn split_indices(batch: &WindowBatch, spec: &SplitSpec, seed: u64) -> Result<SplitIndices> {
    spec.validate()?;
    let mut out = SplitIndices::default();
    if spec.contiguous {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in batch.labels().iter().enumerate() {
            by_class.entry(l).or_default().push(i);
        }
        let h = batch.horizon();
        for idx in by_class.values_mut() {
            idx.sort_by_key(|&i| batch.origins()[i]);
            let (n_train, n_val) = block_sizes(idx.len(), spec);
            let train = &idx[..n_train];
            let val = &idx[n_train..n_train + n_val];
            let test = &idx[n_train + n_val..];
            let o = batch.origins();
            // Later partitions win; earlier windows sharing samples are dropped.
            for &i in train {
                if val.iter().chain(test).any(|&j| overlaps(&o[i], &o[j], h)) {
                    out.excluded.push(i);
                } else {
                    out.train.push(i);
                }
            }
            for &i in val {
                if test.iter().any(|&j| overlaps(&o[i], &o[j], h)) {
                    out.excluded.push(i);
                } else {
                    out.validation.push(i);
                }
            }
            out.test.extend_from_slice(test);
        }
        out.train.sort_unstable();
        out.validation.sort_unstable();
        out.test.sort_unstable();
        out.excluded.sort_unstable();
    } else {
        let mut idx: Vec<usize> = (0..batch.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (n_train, n_val) = block_sizes(idx.len(), spec);
        out.train = idx[..n_train].to_vec();
        out.validation = idx[n_train..n_train + n_val].to_vec();
        out.test = idx[n_train + n_val..].to_vec();
    }
    for (name, frac, part) in [
        ("train", spec.train, &out.train),
        ("validation", spec.validation, &out.validation),
        ("test", spec.test, &out.test),
    ] {
        if frac > 0.0 && part.is_empty() {
            return Err(FddError::EmptySplit(name));
        }
    }
    Ok(out)
}

/// Splits a batch into `(train, validation, test)`.
pub fn split(batch: &WindowBatch, spec: &SplitSpec, seed: u64) -> Result<(WindowBatch, WindowBatch, WindowBatch)> {
    let idx = split_indices(batch, spec, seed)?;
    Ok((batch.subset(&idx.train), batch.subset(&idx.validation), batch.subset(&idx.test)))
}
