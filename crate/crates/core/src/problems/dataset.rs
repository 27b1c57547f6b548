//! Labelled sample collections: dense or CSR-sparse features plus integer labels.
//!
//! Text formats:
//! - libsvm: `label idx:val idx:val ...`, whitespace separated, 1-based
//!   feature indices, `#` starts a comment.
//! - CSV: dense features, the last column is an integer label; an optional
//!   header row is skipped on request.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{QnboError, Result};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum Features<T> {
    Dense {
        cols: usize,
        data: Vec<T>,
    },
    /// Compressed sparse rows with sorted, unique column indices.
    Sparse {
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
    },
}

/// Borrowed view of one sample's features.
#[derive(Debug, Clone, Copy)]
pub enum Row<'a, T> {
    Dense(&'a [T]),
    Sparse {
        indices: &'a [usize],
        values: &'a [T],
    },
}

impl<T: Scalar> Row<'_, T> {
    /// `aᵀw` where `w` has at least as many entries as the feature count.
    #[inline]
    pub fn dot(&self, w: &[T]) -> T {
        match *self {
            Row::Dense(a) => a.iter().zip(w).map(|(&ai, &wi)| ai * wi).sum(),
            Row::Sparse { indices, values } => {
                indices.iter().zip(values).map(|(&j, &v)| v * w[j]).sum()
            }
        }
    }

    /// `out += alpha · a`
    #[inline]
    pub fn axpy(&self, alpha: T, out: &mut [T]) {
        match *self {
            Row::Dense(a) => {
                for (o, &ai) in out.iter_mut().zip(a) {
                    *o += alpha * ai;
                }
            }
            Row::Sparse { indices, values } => {
                for (&j, &v) in indices.iter().zip(values) {
                    out[j] += alpha * v;
                }
            }
        }
    }

    pub fn to_dense(&self, cols: usize) -> Vec<T> {
        let mut v = vec![T::zero(); cols];
        self.axpy(T::one(), &mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub name: String,
    features: Features<T>,
    labels: Vec<i64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn dense(
        name: impl Into<String>,
        cols: usize,
        data: Vec<T>,
        labels: Vec<i64>,
    ) -> Result<Self> {
        let rows = labels.len();
        if data.len() != rows * cols {
            return Err(QnboError::DimensionMismatch {
                what: "dense dataset values",
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self {
            name: name.into(),
            features: Features::Dense { cols, data },
            labels,
        })
    }

    pub fn sparse(
        name: impl Into<String>,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
        labels: Vec<i64>,
    ) -> Result<Self> {
        if indptr.len() != labels.len() + 1 || indptr[0] != 0 {
            return Err(QnboError::InvalidArgument(
                "malformed CSR row pointer".into(),
            ));
        }
        if *indptr.last().unwrap() != indices.len() || indices.len() != values.len() {
            return Err(QnboError::InvalidArgument(
                "CSR index/value length mismatch".into(),
            ));
        }
        for w in indptr.windows(2) {
            if w[0] > w[1] {
                return Err(QnboError::InvalidArgument(
                    "CSR row pointer decreases".into(),
                ));
            }
            let row = &indices[w[0]..w[1]];
            if row.windows(2).any(|p| p[0] >= p[1]) || row.iter().any(|&j| j >= cols) {
                return Err(QnboError::InvalidArgument(
                    "sparse indices must be sorted, unique and in bounds".into(),
                ));
            }
        }
        Ok(Self {
            name: name.into(),
            features: Features::Sparse {
                cols,
                indptr,
                indices,
                values,
            },
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        match &self.features {
            Features::Dense { cols, .. } | Features::Sparse { cols, .. } => *cols,
        }
    }

    pub fn features(&self) -> &Features<T> {
        &self.features
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> Row<'_, T> {
        match &self.features {
            Features::Dense { cols, data } => Row::Dense(&data[i * cols..(i + 1) * cols]),
            Features::Sparse {
                indptr,
                indices,
                values,
                ..
            } => {
                let r = indptr[i]..indptr[i + 1];
                Row::Sparse {
                    indices: &indices[r.clone()],
                    values: &values[r],
                }
            }
        }
    }

    /// Number of classes assuming labels `0..C`.
    pub fn n_classes(&self) -> usize {
        self.labels
            .iter()
            .map(|&l| l.max(0) as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let features = match &self.features {
            Features::Dense { cols, data } => Features::Dense {
                cols: *cols,
                data: idx
                    .iter()
                    .flat_map(|&i| data[i * cols..(i + 1) * cols].iter().copied())
                    .collect(),
            },
            Features::Sparse {
                cols,
                indptr,
                indices,
                values,
            } => {
                let mut p = vec![0];
                let mut ind = Vec::new();
                let mut val = Vec::new();
                for &i in idx {
                    ind.extend_from_slice(&indices[indptr[i]..indptr[i + 1]]);
                    val.extend_from_slice(&values[indptr[i]..indptr[i + 1]]);
                    p.push(ind.len());
                }
                Features::Sparse {
                    cols: *cols,
                    indptr: p,
                    indices: ind,
                    values: val,
                }
            }
        };
        Self {
            name: self.name.clone(),
            features,
            labels,
        }
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> (Self, Self) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    /// Maps labels `{0, 1}` to `{−1, +1}`; `±1` labels pass through.
    pub fn to_signed_binary(&self) -> Result<Self> {
        let labels = self
            .labels
            .iter()
            .map(|&l| match l {
                0 | -1 => Ok(-1),
                1 => Ok(1),
                other => Err(QnboError::InvalidArgument(format!(
                    "label {other} is not binary"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    pub fn with_labels(&self, labels: Vec<i64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(QnboError::DimensionMismatch {
                what: "replacement labels",
                expected: self.len(),
                got: labels.len(),
            });
        }
        Ok(Self {
            labels,
            ..self.clone()
        })
    }

    pub fn write_libsvm<W: Write>(&self, mut out: W) -> Result<()> {
        let cols = self.n_features();
        for i in 0..self.len() {
            let l = self.labels[i];
            if l > 0 {
                write!(out, "+{l}")?;
            } else {
                write!(out, "{l}")?;
            }
            match self.row(i) {
                Row::Sparse { indices, values } => {
                    for (&j, &v) in indices.iter().zip(values) {
                        write!(out, " {}:{}", j + 1, v.to_f64_lossy())?;
                    }
                }
                Row::Dense(a) => {
                    for (j, &v) in a.iter().enumerate().take(cols) {
                        if v != T::zero() {
                            write!(out, " {}:{}", j + 1, v.to_f64_lossy())?;
                        }
                    }
                }
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// One dense row per sample, label last, no header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let cols = self.n_features();
        for i in 0..self.len() {
            for v in self.row(i).to_dense(cols) {
                write!(out, "{},", v.to_f64_lossy())?;
            }
            writeln!(out, "{}", self.labels[i])?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> QnboError {
    QnboError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("invalid label '{tok}'")))?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(parse_err(line, format!("label '{tok}' is not an integer")));
    }
    Ok(v as i64)
}

pub fn parse_libsvm<T: Scalar, R: Read>(reader: R, name: &str) -> Result<Dataset<T>> {
    let mut indptr = vec![0usize];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut cols = 0usize;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let label = parse_label(toks.next().expect("non-empty line"), lineno)?;
        let mut row: Vec<(usize, T)> = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(lineno, format!("expected index:value, got '{tok}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid feature index '{idx}'")))?;
            if idx == 0 {
                return Err(parse_err(lineno, "feature indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid feature value '{val}'")))?;
            if !val.is_finite() {
                return Err(parse_err(lineno, "non-finite feature value"));
            }
            row.push((idx - 1, T::lit(val)));
        }
        row.sort_by_key(|&(j, _)| j);
        if let Some(w) = row.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(parse_err(
                lineno,
                format!("duplicate feature index {}", w[0].0 + 1),
            ));
        }
        for (j, v) in row {
            cols = cols.max(j + 1);
            indices.push(j);
            values.push(v);
        }
        indptr.push(indices.len());
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(0, "empty dataset"));
    }
    Dataset::sparse(name, cols, indptr, indices, values, labels)
}

pub fn parse_csv<T: Scalar, R: Read>(
    reader: R,
    name: &str,
    has_header: bool,
) -> Result<Dataset<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut cols: Option<usize> = None;
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if has_header && lineno == 1 {
            continue;
        }
        let content = line.trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(parse_err(lineno, "need at least one feature and a label"));
        }
        let n = fields.len() - 1;
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(parse_err(
                    lineno,
                    format!("expected {c} features, found {n}"),
                ))
            }
            _ => {}
        }
        for f in &fields[..n] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("invalid value '{f}'")))?;
            data.push(T::lit(v));
        }
        labels.push(parse_label(fields[n], lineno)?);
    }
    let Some(cols) = cols else {
        return Err(parse_err(0, "empty dataset"));
    };
    Dataset::dense(name, cols, data, labels)
}

fn file_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn load_libsvm<T: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    let path = path.as_ref();
    parse_libsvm(fs::File::open(path)?, &file_name(path))
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, has_header: bool) -> Result<Dataset<T>> {
    let path = path.as_ref();
    parse_csv(fs::File::open(path)?, &file_name(path), has_header)
}

/// Gaussian-cluster generator. Class centres are drawn from
/// `N(0, separation²·I)` and samples from `N(centre, I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
    pub seed: u64,
}

/// Centre spread used by [`make_synthetic_classification`]; with 20 features
/// and 10 classes the clusters are linearly separable to well above 95%.
pub const DEFAULT_SEPARATION: f64 = 1.0;

impl SyntheticSpec {
    pub fn generate<T: Scalar>(&self) -> Result<Dataset<T>> {
        if self.n_samples == 0 || self.n_features == 0 || self.n_classes == 0 {
            return Err(QnboError::InvalidArgument(
                "synthetic dataset sizes must be ≥ 1".into(),
            ));
        }
        if !(self.separation >= 0.0) {
            return Err(QnboError::InvalidArgument("separation must be ≥ 0".into()));
        }
        let mut r = rng::seeded(self.seed);
        let f = self.n_features;
        let centres: Vec<Vec<f64>> = (0..self.n_classes)
            .map(|_| {
                rng::gaussian_vec::<f64>(&mut r, f)
                    .into_iter()
                    .map(|v| v * self.separation)
                    .collect()
            })
            .collect();
        let mut data = Vec::with_capacity(self.n_samples * f);
        let mut labels = Vec::with_capacity(self.n_samples);
        for i in 0..self.n_samples {
            let c = i % self.n_classes;
            for j in 0..f {
                data.push(T::lit(centres[c][j] + rng::gaussian::<f64>(&mut r)));
            }
            labels.push(c as i64);
        }
        // interleaved classes, shuffled so any prefix split stays balanced in expectation
        let mut order: Vec<usize> = (0..self.n_samples).collect();
        order.shuffle(&mut r);
        let ds = Dataset::dense(
            format!("synthetic-{}x{}c{}", self.n_samples, f, self.n_classes),
            f,
            data,
            labels,
        )?;
        Ok(ds.subset(&order))
    }
}

/// Resamples the labels of exactly `round(fraction·n)` randomly chosen samples
/// uniformly over the classes. Returns the mask of samples whose label changed.
pub fn corrupt_labels<T: Scalar>(
    ds: &mut Dataset<T>,
    fraction: f64,
    n_classes: usize,
    seed: u64,
) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(QnboError::InvalidArgument(format!(
            "label noise fraction must lie in [0, 1], got {fraction}"
        )));
    }
    if n_classes == 0 {
        return Err(QnboError::InvalidArgument("need at least one class".into()));
    }
    let mut r = rng::seeded(seed);
    let n = ds.len();
    let k = (fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let mut changed = vec![false; n];
    for &i in &order[..k] {
        let new = r.random_range(0..n_classes) as i64;
        changed[i] = new != ds.labels[i];
        ds.labels[i] = new;
    }
    Ok(changed)
}

/// Gaussian-cluster dataset with a fraction of labels resampled uniformly.
pub fn make_synthetic_classification<T: Scalar>(
    n_samples: usize,
    n_features: usize,
    n_classes: usize,
    label_noise: f64,
    seed: u64,
) -> Result<Dataset<T>> {
    if !(0.0..=1.0).contains(&label_noise) {
        return Err(QnboError::InvalidArgument(format!(
            "label noise fraction must lie in [0, 1], got {label_noise}"
        )));
    }
    let mut ds = SyntheticSpec {
        n_samples,
        n_features,
        n_classes,
        separation: DEFAULT_SEPARATION,
        seed,
    }
    .generate()?;
    corrupt_labels(
        &mut ds,
        label_noise,
        n_classes,
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )?;
    Ok(ds)
}
