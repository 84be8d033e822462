use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MatrixFormat {
    /// `%%MatrixMarket matrix coordinate` with 1-based indices.
    #[default]
    MatrixMarket,
    /// Comma-separated rows, no header.
    DenseCsv,
}

impl MatrixFormat {
    /// `.mtx` is MatrixMarket, anything else dense CSV.
    pub fn from_extension(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("mtx") => MatrixFormat::MatrixMarket,
            _ => MatrixFormat::DenseCsv,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::ParseError {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<Array2<f64>> {
    let text = read(path)?;
    match format {
        MatrixFormat::MatrixMarket => parse_matrix_market(&text, path),
        MatrixFormat::DenseCsv => parse_dense_csv(&text, path),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Field {
    Real,
    Pattern,
}

#[derive(Clone, Copy, PartialEq)]
enum Symmetry {
    General,
    Symmetric,
    Skew,
}

/// Coordinate format only. Duplicate entries are summed; symmetric and
/// skew-symmetric files are mirrored across the diagonal.
pub fn parse_matrix_market(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| parse_err(path, 1, "empty file"))?;
    let tokens: Vec<String> = header.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.len() != 5 || tokens[0] != "%%matrixmarket" || tokens[1] != "matrix" {
        return Err(parse_err(path, 1, "expected '%%MatrixMarket matrix coordinate <field> <symmetry>'"));
    }
    if tokens[2] != "coordinate" {
        return Err(parse_err(path, 1, format!("unsupported format '{}'", tokens[2])));
    }
    let field = match tokens[3].as_str() {
        "real" | "integer" | "double" => Field::Real,
        "pattern" => Field::Pattern,
        other => return Err(parse_err(path, 1, format!("unsupported field '{other}'"))),
    };
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        "skew-symmetric" => Symmetry::Skew,
        other => return Err(parse_err(path, 1, format!("unsupported symmetry '{other}'"))),
    };
    let mut body = lines.filter(|(_, l)| !l.is_empty() && !l.starts_with('%'));

    let (size_line, size) = body.next().ok_or_else(|| parse_err(path, 1, "missing size line"))?;
    let dims: Vec<usize> = size
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(path, size_line, format!("bad size token '{t}'"))))
        .collect::<Result<_>>()?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(parse_err(path, size_line, "size line needs rows, cols and entry count"));
    };
    if symmetry != Symmetry::General && rows != cols {
        return Err(parse_err(path, size_line, "symmetric storage needs a square matrix"));
    }

    let mut out = Array2::zeros((rows, cols));
    let mut seen = 0usize;
    let mut last_line = size_line;
    for (line, l) in body {
        last_line = line;
        let t: Vec<&str> = l.split_whitespace().collect();
        let want = if field == Field::Pattern { 2 } else { 3 };
        if t.len() != want {
            return Err(parse_err(path, line, format!("expected {want} tokens, found {}", t.len())));
        }
        let idx = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, line, format!("bad index '{s}'")));
        let (i, j) = (idx(t[0])?, idx(t[1])?);
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::IndexOutOfBounds { row: i, col: j, rows, cols });
        }
        let v = match field {
            Field::Pattern => 1.0,
            Field::Real => t[2].parse::<f64>().map_err(|_| parse_err(path, line, format!("bad value '{}'", t[2])))?,
        };
        if !v.is_finite() {
            return Err(parse_err(path, line, "non-finite value"));
        }
        out[[i - 1, j - 1]] += v;
        if i != j {
            match symmetry {
                Symmetry::General => {}
                Symmetry::Symmetric => out[[j - 1, i - 1]] += v,
                Symmetry::Skew => out[[j - 1, i - 1]] -= v,
            }
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(path, last_line, format!("header promises {nnz} entries, found {seen}")));
    }
    Ok(out)
}

/// Blank lines are skipped; every other line is one row.
pub fn parse_dense_csv(text: &str, path: &Path) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let line = i + 1;
        let l = l.trim();
        if l.is_empty() {
            continue;
        }
        let row: Vec<f64> = l
            .split(',')
            .map(|t| {
                let t = t.trim();
                match t.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(parse_err(path, line, format!("bad value '{t}'"))),
                }
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(path, line, format!("expected {} columns, found {}", first.len(), row.len())));
            }
        }
        rows.push(row);
    }
    let ncols = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), ncols), flat).map_err(|e| parse_err(path, 0, e.to_string()))
}

/// One integer class id per non-blank line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let t = l.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse::<usize>().map_err(|_| parse_err(path, i + 1, format!("bad label '{t}'")))?);
    }
    Ok(out)
}

pub fn write_dense_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut s = String::new();
    for row in x.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut s = String::with_capacity(labels.len() * 2);
    for l in labels {
        s.push_str(&l.to_string());
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}
