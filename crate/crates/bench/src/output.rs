//! CSV output. Every file is written to a temporary sibling and renamed into
//! place, so readers never see a half-written file.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qnbo::TraceRecord;
use tempfile::NamedTempFile;

use crate::error::{BenchError, Result};

pub const TRACE_COLUMNS: [&str; 10] = [
    "k",
    "hypergrad_norm",
    "hypergrad_err",
    "x_dist",
    "y_dist",
    "f_grad_norm",
    "gc_f",
    "gc_F",
    "jv",
    "wall_ns",
];

/// Shortest round-trip representation in exponent form.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn create_parent(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
    Ok(dir)
}

/// A file that appears at `path` only once [`AtomicFile::commit`] is called.
pub struct AtomicFile {
    path: PathBuf,
    out: BufWriter<NamedTempFile>,
}

impl AtomicFile {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let dir = create_parent(&path)?;
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| BenchError::io(&dir, e))?;
        Ok(Self {
            path,
            out: BufWriter::new(tmp),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn commit(self) -> Result<PathBuf> {
        let AtomicFile { path, out } = self;
        let tmp = out
            .into_inner()
            .map_err(|e| BenchError::io(&path, e.into_error()))?;
        tmp.as_file()
            .sync_all()
            .map_err(|e| BenchError::io(&path, e))?;
        tmp.persist(&path)
            .map_err(|e| BenchError::io(&path, e.error))?;
        Ok(path)
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.out.write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

pub fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut AtomicFile) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let mut file = AtomicFile::create(path)?;
    f(&mut file).map_err(|e| BenchError::io(path, e))?;
    file.commit()
}

/// Streams trace rows as the run produces them.
pub struct TraceWriter {
    csv: csv::Writer<AtomicFile>,
}

impl TraceWriter {
    /// `comment` lines are written first, each prefixed with `# `.
    pub fn create(path: impl Into<PathBuf>, comment: &[String]) -> Result<Self> {
        let mut file = AtomicFile::create(path)?;
        let path = file.path().to_path_buf();
        for line in comment {
            writeln!(file, "# {line}").map_err(|e| BenchError::io(&path, e))?;
        }
        let mut csv = csv::Writer::from_writer(file);
        csv.write_record(TRACE_COLUMNS)
            .map_err(|e| csv_err(&path, e))?;
        Ok(Self { csv })
    }

    pub fn push(&mut self, r: &TraceRecord<f64>) -> Result<()> {
        let c = r.oracle_counts;
        let row = [
            r.k.to_string(),
            fmt_f64(r.hypergrad_norm),
            fmt_opt(r.hypergrad_err),
            fmt_opt(r.x_dist),
            fmt_opt(r.y_dist),
            fmt_f64(r.f_grad_norm),
            c.ll_grad.to_string(),
            (c.ul_grad_x + c.ul_grad_y).to_string(),
            c.jvp.to_string(),
            r.wall_ns.to_string(),
        ];
        let path = self.csv.get_ref().path().to_path_buf();
        self.csv.write_record(&row).map_err(|e| csv_err(&path, e))
    }

    pub fn commit(self) -> Result<PathBuf> {
        let path = self.csv.get_ref().path().to_path_buf();
        let file = self
            .csv
            .into_inner()
            .map_err(|e| BenchError::io(path, std::io::Error::other(e.error().to_string())))?;
        file.commit()
    }
}

fn csv_err(path: &Path, e: csv::Error) -> BenchError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => BenchError::io(path, io),
        other => BenchError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Writes a header row and data rows as one CSV file.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut csv = csv::Writer::from_writer(AtomicFile::create(path)?);
    csv.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        csv.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    let file = csv
        .into_inner()
        .map_err(|e| BenchError::io(path, std::io::Error::other(e.error().to_string())))?;
    file.commit()
}

/// Pads columns to a common width for terminal output.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&width).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            let pad = w - cell.chars().count();
            if i == 0 {
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
