//! Dataset files: delimited text with a header `x1,...,xd,y,fidelity`, one
//! point per row, labels `0`/`1`, fidelity `low`/`high`. Lines starting with
//! `#` are comments; `# key: value` comments are kept as metadata.

use std::path::Path;

use mfgpc_core::nalgebra::DMatrix;
use mfgpc_core::{Fidelity, FidelityDataset};
use sha2::{Digest, Sha256};

use super::{read_text, write_text, IoError, IoResult};
use crate::format::num;

/// A parsed dataset plus where each point came from in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub data: FidelityDataset,
    /// Zero-based data-row index (comments and header excluded) of each
    /// low-fidelity point.
    pub low_rows: Vec<usize>,
    pub high_rows: Vec<usize>,
    pub metadata: Vec<(String, String)>,
}

impl LoadedDataset {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn load_dataset(path: &Path) -> IoResult<LoadedDataset> {
    parse_dataset(&read_text(path)?, path)
}

pub fn parse_dataset(text: &str, path: &Path) -> IoResult<LoadedDataset> {
    let err = |line: u64, message: String| IoError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let metadata = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| err(1, format!("unreadable header: {e}")))?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    let header_line = reader.position().line().max(1);
    if cols.len() < 3 || cols[cols.len() - 2] != "y" || cols[cols.len() - 1] != "fidelity" {
        return Err(err(
            header_line,
            format!("header must be x1..xd,y,fidelity, found {cols:?}"),
        ));
    }
    let dim = cols.len() - 2;
    for (i, c) in cols[..dim].iter().enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(err(
                header_line,
                format!("column {} must be named x{}, found {c}", i + 1, i + 1),
            ));
        }
    }

    let (mut xl, mut yl, mut low_rows) = (Vec::new(), Vec::new(), Vec::new());
    let (mut xh, mut yh, mut high_rows) = (Vec::new(), Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, format!("malformed row: {e}"))
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 2 {
            return Err(err(
                line,
                format!("expected {} fields, found {}", dim + 2, record.len()),
            ));
        }
        let mut x = Vec::with_capacity(dim);
        for (j, field) in record.iter().take(dim).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| err(line, format!("x{} is not a number: {field:?}", j + 1)))?;
            if !v.is_finite() {
                return Err(err(line, format!("x{} is not finite: {field}", j + 1)));
            }
            x.push(v);
        }
        let y = match &record[dim] {
            "0" => false,
            "1" => true,
            other => return Err(err(line, format!("label must be 0 or 1, found {other:?}"))),
        };
        match &record[dim + 1] {
            "low" => {
                xl.extend(x);
                yl.push(y);
                low_rows.push(row);
            }
            "high" => {
                xh.extend(x);
                yh.push(y);
                high_rows.push(row);
            }
            other => {
                return Err(err(
                    line,
                    format!("fidelity must be low or high, found {other:?}"),
                ))
            }
        }
    }
    let data = FidelityDataset::new(
        DMatrix::from_row_slice(yl.len(), dim, &xl),
        yl,
        DMatrix::from_row_slice(yh.len(), dim, &xh),
        yh,
    )?;
    Ok(LoadedDataset {
        data,
        low_rows,
        high_rows,
        metadata,
    })
}

/// Header and rows (low fidelity first), without comments.
fn body(data: &FidelityDataset) -> String {
    let dim = data.dim();
    let mut out = String::new();
    let names: Vec<String> = (1..=dim).map(|i| format!("x{i}")).collect();
    out.push_str(&names.join(","));
    out.push_str(",y,fidelity\n");
    let mut rows = |x: &DMatrix<f64>, y: &[bool], fid: Fidelity| {
        for i in 0..x.nrows() {
            for j in 0..dim {
                out.push_str(&num(x[(i, j)]));
                out.push(',');
            }
            out.push_str(if y[i] { "1," } else { "0," });
            out.push_str(&fid.to_string());
            out.push('\n');
        }
    };
    rows(&data.x_low, &data.y_low, Fidelity::Low);
    rows(&data.x_high, &data.y_high, Fidelity::High);
    out
}

/// Full file text: `# ` comment lines, header, rows.
pub fn render_dataset(data: &FidelityDataset, comments: &[String]) -> String {
    let mut out = String::new();
    for c in comments {
        if !c.starts_with('#') {
            out.push_str("# ");
        }
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(&body(data));
    out
}

pub fn save_dataset(data: &FidelityDataset, path: &Path, comments: &[String]) -> IoResult<()> {
    write_text(path, &render_dataset(data, comments))
}

/// SHA-256 of the canonical rendering (no comments), hex encoded.
pub fn dataset_checksum(data: &FidelityDataset) -> String {
    let digest = Sha256::digest(body(data).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
