//! CSV ingestion: UTF-8, comma-separated, one observation per row, with an
//! optional header row.
//!
//! A first row is taken as a header when any of its cells fails to parse as
//! a number. Errors name the 1-based line and column of the offending cell.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numeric table parsed from CSV text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Option<Vec<String>>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn ncols(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.ncols(), |i, j| self.rows[i][j])
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Validation(format!("malformed CSV: {e}")))?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, usize>> =
            rec.iter().enumerate().map(|(c, s)| s.parse::<f64>().map_err(|_| c)).collect();
        if k == 0 && parsed.iter().any(|r| r.is_err()) {
            header = Some(rec.iter().map(str::to_string).collect());
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Validation(format!(
                "ragged CSV: line {line} has {} columns, expected {w}",
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(w);
        for (c, r) in parsed.into_iter().enumerate() {
            match r {
                Ok(v) if v.is_finite() => row.push(v),
                _ => {
                    return Err(Error::Validation(format!(
                        "non-numeric cell at line {line}, column {}: `{}`",
                        c + 1,
                        &rec[c]
                    )))
                }
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Validation("CSV contains no data rows".into()));
    }
    Ok(Table { header, rows })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Design matrix, one observation per row.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    Ok(parse_table(&read_text(path)?)?.to_matrix())
}

/// Response vector from a one-column CSV.
pub fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let t = parse_table(text)?;
    if t.ncols() != 1 {
        return Err(Error::Validation(format!("response file must have one column, found {}", t.ncols())));
    }
    Ok(DVector::from_iterator(t.rows.len(), t.rows.iter().map(|r| r[0])))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    parse_vector(&read_text(path)?)
}

/// Parse a list of 0-based indices such as `0, 4, 9-12` (ranges inclusive).
pub fn parse_index_list(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in s.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()) {
        let bad = || Error::Validation(format!("bad index `{tok}`"));
        if let Some((a, b)) = tok.split_once('-') {
            let a: usize = a.parse().map_err(|_| bad())?;
            let b: usize = b.parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(tok.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

/// Groups file: one group per non-empty line, `#` starts a comment.
pub fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(parse_index_list)
        .collect()
}

pub fn read_groups(path: &Path) -> Result<Vec<Vec<usize>>> {
    parse_groups(&read_text(path)?)
}

/// Write a matrix as headerless CSV with shortest round-trip formatting.
pub fn matrix_to_csv(x: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..x.nrows() {
        let row: Vec<String> = (0..x.ncols()).map(|j| format!("{}", x[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let a = parse_table("x1,x2\n1,2\n3,4\n").unwrap();
        let b = parse_table("1,2\n3,4\n").unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.header.as_deref(), Some(&["x1".to_string(), "x2".to_string()][..]));
        assert!(b.header.is_none());
    }

    #[test]
    fn errors_name_row_and_column() {
        let e = parse_table("1,2\n3,abc\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("column 2"), "{e}");
        let e = parse_table("a,b\n1,2\n3\n").unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("ragged"), "{e}");
        assert!(parse_vector("1,2\n").is_err());
    }

    #[test]
    fn index_lists() {
        assert_eq!(parse_index_list("0, 4 9-11").unwrap(), vec![0, 4, 9, 10, 11]);
        assert!(parse_index_list("3-1").is_err());
        assert_eq!(parse_groups("# g\n0-2\n\n5,6 # tail\n").unwrap(), vec![vec![0, 1, 2], vec![5, 6]]);
    }

    #[test]
    fn csv_roundtrip() {
        let x = DMatrix::from_row_slice(2, 2, &[0.1, -2.5e-12, 3.0, 1.0 / 3.0]);
        assert_eq!(parse_table(&matrix_to_csv(&x)).unwrap().to_matrix(), x);
    }
}
