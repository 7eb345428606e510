//! Matrix Market and CSV readers/writers for dense operators and vectors.
//!
//! Matrix Market input accepts `array` and `coordinate` storage with `real`
//! or `integer` fields and `general` or `symmetric` symmetry. Output is
//! always `array real general`. Vectors are single-column matrices.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::Operator;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Storage {
    Array,
    Coordinate,
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("matrix market line {line}: {msg}"))
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("bad number {tok:?}")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("bad integer {tok:?}")))
}

/// Parses Matrix Market text into a dense matrix (entries may be non-finite;
/// [`Operator`] construction rejects those).
pub fn parse_matrix_market(text: &str) -> Result<DMatrix<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, banner) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty matrix market input".into()))?;
    let tokens: Vec<String> = banner.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(
            1,
            "expected '%%MatrixMarket matrix <storage> <field> <symmetry>'",
        ));
    }
    let storage = match tokens[2].as_str() {
        "array" => Storage::Array,
        "coordinate" => Storage::Coordinate,
        other => return Err(parse_err(1, format!("unsupported storage {other:?}"))),
    };
    if !matches!(tokens[3].as_str(), "real" | "integer" | "double") {
        return Err(parse_err(1, format!("unsupported field {:?}", tokens[3])));
    }
    let symmetric = match tokens[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => return Err(parse_err(1, format!("unsupported symmetry {other:?}"))),
    };

    let mut data = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));
    let (size_line, size) = data.next().ok_or_else(|| Error::Parse("missing size line".into()))?;
    let size: Vec<&str> = size.split_whitespace().collect();
    let expected_size = if storage == Storage::Array { 2 } else { 3 };
    if size.len() != expected_size {
        return Err(parse_err(size_line, "malformed size line"));
    }
    let rows = parse_usize(size[0], size_line)?;
    let cols = parse_usize(size[1], size_line)?;
    if symmetric && rows != cols {
        return Err(parse_err(size_line, "symmetric matrix must be square"));
    }
    let mut m = DMatrix::zeros(rows, cols);

    match storage {
        Storage::Array => {
            // Column-major; symmetric files store the lower triangle only.
            let positions: Vec<(usize, usize)> = if symmetric {
                (0..cols).flat_map(|j| (j..rows).map(move |i| (i, j))).collect()
            } else {
                (0..cols).flat_map(|j| (0..rows).map(move |i| (i, j))).collect()
            };
            let mut values = data.flat_map(|(n, l)| l.split_whitespace().map(move |t| (n, t)));
            for &(i, j) in &positions {
                let (n, tok) = values
                    .next()
                    .ok_or_else(|| Error::Parse(format!("expected {} entries, input ended early", positions.len())))?;
                let v = parse_f64(tok, n)?;
                m[(i, j)] = v;
                if symmetric {
                    m[(j, i)] = v;
                }
            }
            if let Some((n, _)) = values.next() {
                return Err(parse_err(n, "trailing entries after matrix data"));
            }
        }
        Storage::Coordinate => {
            let nnz = parse_usize(size[2], size_line)?;
            let mut seen = 0;
            for (n, l) in data {
                let t: Vec<&str> = l.split_whitespace().collect();
                if t.len() != 3 {
                    return Err(parse_err(n, "expected 'row col value'"));
                }
                let i = parse_usize(t[0], n)?;
                let j = parse_usize(t[1], n)?;
                if i == 0 || j == 0 || i > rows || j > cols {
                    return Err(parse_err(n, format!("index ({i}, {j}) outside {rows}x{cols}")));
                }
                let v = parse_f64(t[2], n)?;
                m[(i - 1, j - 1)] = v;
                if symmetric {
                    m[(j - 1, i - 1)] = v;
                }
                seen += 1;
            }
            if seen != nnz {
                return Err(Error::Parse(format!("expected {nnz} coordinate entries, found {seen}")));
            }
        }
    }
    Ok(m)
}

pub fn format_matrix_market(m: &DMatrix<f64>) -> String {
    let mut out = String::from("%%MatrixMarket matrix array real general\n");
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            out.push_str(&format!("{:e}\n", m[(i, j)]));
        }
    }
    out
}

pub fn read_operator(path: &Path) -> Result<Operator> {
    let text = fs::read_to_string(path)?;
    Operator::from_matrix(parse_matrix_market(&text)?)
}

pub fn write_operator(path: &Path, op: &Operator) -> Result<()> {
    fs::write(path, format_matrix_market(op.matrix()))?;
    Ok(())
}

/// Reads a single-column Matrix Market file.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let text = fs::read_to_string(path)?;
    let m = parse_matrix_market(&text)?;
    if m.ncols() != 1 {
        return Err(Error::Parse(format!(
            "{}: expected a single-column vector, found {}x{}",
            path.display(),
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("vector file"));
    }
    Ok(m.column(0).into_owned())
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    fs::write(
        path,
        format_matrix_market(&DMatrix::from_column_slice(v.len(), 1, v.as_slice())),
    )?;
    Ok(())
}

/// One CSV record per matrix row, no header.
pub fn format_csv(m: &DMatrix<f64>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| format!("{v:e}")))
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let row = rec
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("csv row {}: bad number {t:?}", n + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse(format!("csv row {}: ragged row", n + 1)));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse("empty csv matrix".into()));
    }
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}
