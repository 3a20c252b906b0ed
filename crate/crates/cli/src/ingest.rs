//! Logistic-regression datasets from CSV or LIBSVM text.
//!
//! CSV: a header row, numeric feature columns and a final 0/1 label column.
//! LIBSVM: `label idx:val ...` with 1-based, strictly increasing indices and
//! labels in {0, 1} or {-1, +1}.

use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use vcvi_core::targets::{Csr, Design};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

impl DataFormat {
    /// `.csv` is CSV; `.libsvm`, `.svm` and `.txt` are LIBSVM.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "libsvm" | "svm" | "txt" => Some(DataFormat::Libsvm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct IngestError {
    /// 1-based line in the input, when the problem is tied to one.
    pub line: Option<u64>,
    pub msg: String,
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.msg),
            None => f.write_str(&self.msg),
        }
    }
}

fn err(line: impl Into<Option<u64>>, msg: impl Into<String>) -> IngestError {
    IngestError { line: line.into(), msg: msg.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Design,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn m(&self) -> usize {
        self.x.cols()
    }

    pub fn density(&self) -> f64 {
        self.x.density()
    }

    pub fn csr(&self) -> Csr {
        match &self.x {
            Design::Sparse(s) => s.clone(),
            Design::Dense(x) => Csr::from_dense(x),
        }
    }
}

fn parse_value(s: &str, line: u64, what: &str) -> Result<f64, IngestError> {
    let v: f64 = s.trim().parse().map_err(|_| err(line, format!("{what} '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(err(line, format!("{what} '{s}' is not finite")));
    }
    Ok(v)
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset, IngestError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(input);
    let header = rd.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(err(1, "empty file: expected a header row"));
    }
    if header.len() < 2 {
        return Err(err(1, "need at least one feature column and a label column"));
    }
    let m = header.len() - 1;
    let (mut values, mut y) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.map_err(|e| err(e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != m + 1 {
            return Err(err(line, format!("expected {} fields, found {}", m + 1, rec.len())));
        }
        for (c, field) in rec.iter().take(m).enumerate() {
            values.push(parse_value(field, line, &format!("feature {}", c + 1))?);
        }
        let label = parse_value(&rec[m], line, "label")?;
        if label != 0.0 && label != 1.0 {
            return Err(err(line, format!("label must be 0 or 1, found {}", &rec[m])));
        }
        y.push(label);
    }
    if y.is_empty() {
        return Err(err(None, "no data rows after the header"));
    }
    let x = DMatrix::from_row_slice(y.len(), m, &values);
    Ok(Dataset { x: Design::auto(x), y })
}

/// Reads LIBSVM lines. Blank lines and lines starting with `#` are skipped.
/// With `n_features` the indices are bounded by it, otherwise the largest
/// index seen sets the width.
pub fn read_libsvm<R: BufRead>(input: R, n_features: Option<usize>) -> Result<Dataset, IngestError> {
    let mut triplets = Vec::new();
    let mut y = Vec::new();
    let mut width = 0usize;
    for (k, line) in input.lines().enumerate() {
        let ln = k as u64 + 1;
        let line = line.map_err(|e| err(ln, e.to_string()))?;
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let mut tok = body.split_whitespace();
        let label = match tok.next().unwrap() {
            "1" | "+1" | "1.0" | "+1.0" => 1.0,
            "0" | "-1" | "0.0" | "-1.0" => 0.0,
            other => return Err(err(ln, format!("label must be 0/1 or -1/+1, found {other}"))),
        };
        let row = y.len();
        let mut prev = 0usize;
        for t in tok {
            let (i, v) = t.split_once(':').ok_or_else(|| err(ln, format!("expected idx:val, found '{t}'")))?;
            let idx: usize = i.parse().map_err(|_| err(ln, format!("index '{i}' is not a positive integer")))?;
            if idx == 0 {
                return Err(err(ln, "indices are 1-based; found 0"));
            }
            if let Some(m) = n_features {
                if idx > m {
                    return Err(err(ln, format!("index {idx} exceeds the {m} declared features")));
                }
            }
            if idx <= prev {
                return Err(err(ln, format!("indices must increase; {idx} follows {prev}")));
            }
            prev = idx;
            width = width.max(idx);
            triplets.push((row, idx - 1, parse_value(v, ln, &format!("value at index {idx}"))?));
        }
        y.push(label);
    }
    if y.is_empty() {
        return Err(err(None, "no data lines"));
    }
    let cols = n_features.unwrap_or(width);
    if cols == 0 {
        return Err(err(None, "no features"));
    }
    let csr = Csr::from_triplets(y.len(), cols, triplets).map_err(|e| err(None, e.to_string()))?;
    Ok(Dataset { x: Design::Sparse(csr), y })
}

pub fn read_path(path: &Path, format: DataFormat, n_features: Option<usize>) -> Result<Dataset, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| err(None, format!("{}: {e}", path.display())))?;
    let with_path = |e: IngestError| IngestError { msg: format!("{}: {}", path.display(), e.msg), ..e };
    match format {
        DataFormat::Csv => read_csv(file).map_err(with_path),
        DataFormat::Libsvm => read_libsvm(std::io::BufReader::new(file), n_features).map_err(with_path),
    }
}

/// One line per row, nonzeros only, labels as `+1` / `-1`.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut w: W) -> std::io::Result<()> {
    let s = ds.csr();
    for r in 0..s.rows {
        w.write_all(if ds.y[r] == 1.0 { b"+1" } else { b"-1" })?;
        for k in s.row_ptr[r]..s.row_ptr[r + 1] {
            if s.values[k] != 0.0 {
                write!(w, " {}:{}", s.col_idx[k] + 1, s.values[k])?;
            }
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Header `x1..xm,y`.
pub fn write_csv<W: Write>(ds: &Dataset, w: W) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record((1..=ds.m()).map(|j| format!("x{j}")).chain(std::iter::once("y".to_string())))?;
    let x = ds.x.to_dense();
    for r in 0..ds.n() {
        wr.write_record(x.row(r).iter().map(|v| v.to_string()).chain(std::iter::once(format!("{}", ds.y[r]))))?;
    }
    wr.flush()?;
    Ok(())
}
