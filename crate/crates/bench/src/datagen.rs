//! Synthetic dataset files for the file-backed problem specs.

use std::path::{Path, PathBuf};

use qnbo::problems::{corrupt_labels, Dataset, SyntheticSpec};

use crate::config::DataFormat;
use crate::error::{BenchError, Result};
use crate::output::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n_samples: usize,
    /// Extra samples from the same clusters, returned separately and never relabelled.
    pub n_val: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
    pub label_noise: f64,
    /// Map a two-class set to `±1` labels.
    pub signed: bool,
    pub seed: u64,
}

/// The noisy training set and, when `n_val > 0`, a clean validation set.
pub fn generate(g: &GenSpec) -> Result<(Dataset<f64>, Option<Dataset<f64>>)> {
    let err = |e: qnbo::QnboError| BenchError::config("gen-data", e.to_string());
    let all = SyntheticSpec {
        n_samples: g.n_samples + g.n_val,
        n_features: g.n_features,
        n_classes: g.n_classes,
        separation: g.separation,
        seed: g.seed,
    }
    .generate::<f64>()
    .map_err(err)?;
    let (mut train, val) = all.split_at(g.n_samples);
    corrupt_labels(
        &mut train,
        g.label_noise,
        g.n_classes,
        g.seed.wrapping_add(1),
    )
    .map_err(err)?;
    let mut val = (g.n_val > 0).then_some(val);
    if g.signed {
        train = train.to_signed_binary().map_err(err)?;
        val = val.map(|v| v.to_signed_binary()).transpose().map_err(err)?;
    }
    Ok((train, val))
}

pub fn write(ds: &Dataset<f64>, path: &Path, format: DataFormat) -> Result<PathBuf> {
    write_atomic(path, |f| {
        let res = match format {
            DataFormat::Libsvm => ds.write_libsvm(&mut *f),
            DataFormat::Csv => ds.write_csv(&mut *f),
        };
        res.map_err(|e| match e {
            qnbo::QnboError::Io(io) => io,
            other => std::io::Error::other(other.to_string()),
        })
    })
}
