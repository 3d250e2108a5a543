//! SVMLight / LIBSVM text format: `<label> <idx>:<val> ...` with 1-based,
//! strictly increasing feature indices.
//!
//! The parsed matrix is example-major: column `i` holds example `i` and row
//! `j` holds feature `j + 1`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::SparseColumnMatrix;

/// Parses a whole stream. The row dimension is the largest feature index
/// seen, raised to `min_features` when given.
pub fn parse_svmlight<T: Scalar, R: BufRead>(
    reader: R,
    min_features: Option<usize>,
) -> Result<(SparseColumnMatrix<T>, Vec<T>)> {
    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut n_features = min_features.unwrap_or(0);
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: lineno, message };
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok
            .parse()
            .map_err(|_| perr(format!("label {label_tok:?} is not numeric")))?;
        if !label.is_finite() {
            return Err(perr(format!("label {label_tok:?} is not finite")));
        }
        let mut entries: Vec<(u32, T)> = Vec::new();
        let mut prev = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| perr(format!("expected <index>:<value>, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| perr(format!("index {idx:?} is not a positive integer")))?;
            if idx == 0 {
                return Err(perr("feature indices are 1-based; found 0".into()));
            }
            if idx <= prev {
                return Err(perr(format!("feature index {idx} does not increase (previous {prev})")));
            }
            if idx > u32::MAX as usize {
                return Err(perr(format!("feature index {idx} too large")));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| perr(format!("value {val:?} is not numeric")))?;
            if !val.is_finite() {
                return Err(perr(format!("value {val:?} is not finite")));
            }
            prev = idx;
            entries.push(((idx - 1) as u32, T::lit(val)));
        }
        n_features = n_features.max(prev);
        columns.push(entries);
        labels.push(T::lit(label));
    }
    let matrix = SparseColumnMatrix::from_columns(n_features, columns)?;
    Ok((matrix, labels))
}

/// Writes examples in SVMLight form. Values use the shortest representation
/// that parses back to the same number.
pub fn write_svmlight<T: Scalar, W: Write>(
    examples: &SparseColumnMatrix<T>,
    labels: &[T],
    mut out: W,
) -> Result<()> {
    if labels.len() != examples.n_cols() {
        return Err(Error::Dimension { expected: examples.n_cols(), got: labels.len() });
    }
    for (j, &y) in labels.iter().enumerate() {
        write!(out, "{}", y.as_f64())?;
        let (rows, vals) = examples.column(j);
        for (&r, &v) in rows.iter().zip(vals) {
            write!(out, " {}:{}", r + 1, v.as_f64())?;
        }
        writeln!(out)?;
    }
    Ok(())
}
