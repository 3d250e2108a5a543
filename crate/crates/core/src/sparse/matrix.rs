use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Column-major sparse matrix (CSC). Columns are the coordinates updated by
/// coordinate descent; rows index the shared vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseColumnMatrix<T> {
    n_rows: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    values: Vec<T>,
    labels: Option<Vec<T>>,
}

impl<T: Scalar> SparseColumnMatrix<T> {
    /// Builds a matrix from raw CSC arrays, checking every invariant.
    pub fn from_parts(
        n_rows: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<u32>,
        values: Vec<T>,
        labels: Option<Vec<T>>,
    ) -> Result<Self> {
        if col_ptr.first() != Some(&0) {
            return Err(Error::format("column pointer array must start at 0"));
        }
        if *col_ptr.last().unwrap() != row_idx.len() || row_idx.len() != values.len() {
            return Err(Error::format("column pointers, row indices and values disagree on nnz"));
        }
        if n_rows > u32::MAX as usize + 1 {
            return Err(Error::invalid("row count exceeds u32 index range"));
        }
        let n_cols = col_ptr.len() - 1;
        for j in 0..n_cols {
            let (lo, hi) = (col_ptr[j], col_ptr[j + 1]);
            if lo > hi {
                return Err(Error::format(format!("column {j}: decreasing column pointer")));
            }
            let rows = &row_idx[lo..hi];
            for w in rows.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::format(format!("column {j}: row indices not strictly increasing")));
                }
            }
            if let Some(&last) = rows.last() {
                if last as usize >= n_rows {
                    return Err(Error::format(format!("column {j}: row index {last} out of range {n_rows}")));
                }
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("matrix entry {v}")));
        }
        if let Some(l) = &labels {
            if l.len() != n_cols {
                return Err(Error::Dimension { expected: n_cols, got: l.len() });
            }
        }
        Ok(Self { n_rows, col_ptr, row_idx, values, labels })
    }

    /// Builds from per-column `(row, value)` lists; entries are sorted and
    /// explicit zeros kept.
    pub fn from_columns(n_rows: usize, columns: Vec<Vec<(u32, T)>>) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for mut col in columns {
            col.sort_by_key(|&(r, _)| r);
            for (r, v) in col {
                row_idx.push(r);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self::from_parts(n_rows, col_ptr, row_idx, values, None)
    }

    /// Dense row-major input; zeros are dropped.
    pub fn from_dense_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut columns = vec![Vec::new(); n_cols];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Dimension { expected: n_cols, got: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    columns[j].push((i as u32, v));
                }
            }
        }
        Self::from_columns(n_rows, columns)
    }

    pub fn empty(n_rows: usize) -> Self {
        Self { n_rows, col_ptr: vec![0], row_idx: Vec::new(), values: Vec::new(), labels: None }
    }

    pub fn with_labels(mut self, labels: Vec<T>) -> Result<Self> {
        if labels.len() != self.n_cols() {
            return Err(Error::Dimension { expected: self.n_cols(), got: labels.len() });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    #[inline]
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        self.col_ptr.len() - 1
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn labels(&self) -> Option<&[T]> {
        self.labels.as_deref()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_indices(&self) -> &[u32] {
        &self.row_idx
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn column(&self, j: usize) -> (&[u32], &[T]) {
        let (lo, hi) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn col_nnz(&self) -> Vec<usize> {
        self.col_ptr.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn col_sq_norms(&self) -> Vec<T> {
        (0..self.n_cols())
            .map(|j| self.column(j).1.iter().fold(T::zero(), |a, &v| a + v * v))
            .collect()
    }

    /// `a_jᵀ y`.
    #[inline]
    pub fn column_dot(&self, j: usize, y: &[T]) -> T {
        let (rows, vals) = self.column(j);
        rows.iter().zip(vals).fold(T::zero(), |acc, (&r, &v)| acc + v * y[r as usize])
    }

    /// `y += scale · a_j`.
    #[inline]
    pub fn axpy_column(&self, j: usize, scale: T, y: &mut [T]) {
        let (rows, vals) = self.column(j);
        for (&r, &v) in rows.iter().zip(vals) {
            y[r as usize] += scale * v;
        }
    }

    /// `A x`, summed column by column in index order.
    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.n_cols() {
            return Err(Error::Dimension { expected: self.n_cols(), got: x.len() });
        }
        let mut y = vec![T::zero(); self.n_rows];
        for (j, &xj) in x.iter().enumerate() {
            if xj != T::zero() {
                self.axpy_column(j, xj, &mut y);
            }
        }
        Ok(y)
    }

    /// `Aᵀ y`.
    pub fn tmatvec(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.n_rows {
            return Err(Error::Dimension { expected: self.n_rows, got: y.len() });
        }
        Ok((0..self.n_cols()).map(|j| self.column_dot(j, y)).collect())
    }

    pub fn frobenius_sq(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a + v * v)
    }

    /// Transposed copy; labels are dropped.
    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &r in &self.row_idx {
            counts[r as usize + 1] += 1;
        }
        for i in 0..self.n_rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0u32; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for j in 0..self.n_cols() {
            let (rows, vals) = self.column(j);
            for (&r, &v) in rows.iter().zip(vals) {
                let slot = next[r as usize];
                row_idx[slot] = j as u32;
                values[slot] = v;
                next[r as usize] += 1;
            }
        }
        Self { n_rows: self.n_cols(), col_ptr, row_idx, values, labels: None }
    }

    /// Scales every column by its label and drops the labels.
    pub fn fold_labels(&self) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("matrix has no labels to fold"))?;
        let mut values = self.values.clone();
        for (j, &y) in labels.iter().enumerate() {
            for v in &mut values[self.col_ptr[j]..self.col_ptr[j + 1]] {
                *v *= y;
            }
        }
        Ok(Self {
            n_rows: self.n_rows,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values,
            labels: None,
        })
    }

    /// Sub-matrix made of the listed columns, in the listed order.
    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut col_ptr = Vec::with_capacity(cols.len() + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for &j in cols {
            let (r, v) = self.column(j);
            row_idx.extend_from_slice(r);
            values.extend_from_slice(v);
            col_ptr.push(row_idx.len());
        }
        let labels = self.labels.as_ref().map(|l| cols.iter().map(|&j| l[j]).collect());
        Self { n_rows: self.n_rows, col_ptr, row_idx, values, labels }
    }

    pub fn column_range(&self, start: usize, end: usize) -> Self {
        let cols: Vec<usize> = (start..end).collect();
        self.select_columns(&cols)
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[Self]) -> Result<Self> {
        let n_rows = parts.first().map_or(0, |p| p.n_rows);
        let with_labels = parts.first().is_some_and(|p| p.labels.is_some());
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.n_rows != n_rows {
                return Err(Error::Dimension { expected: n_rows, got: p.n_rows });
            }
            if p.labels.is_some() != with_labels {
                return Err(Error::invalid("cannot stack labelled and unlabelled matrices"));
            }
            let base = row_idx.len();
            col_ptr.extend(p.col_ptr[1..].iter().map(|&c| c + base));
            row_idx.extend_from_slice(&p.row_idx);
            values.extend_from_slice(&p.values);
            if let Some(l) = &p.labels {
                labels.extend_from_slice(l);
            }
        }
        let labels = with_labels.then_some(labels);
        Ok(Self { n_rows, col_ptr, row_idx, values, labels })
    }

    /// Converts the value type.
    pub fn cast<U: Scalar>(&self) -> SparseColumnMatrix<U> {
        let conv = |v: &T| U::lit(v.as_f64());
        SparseColumnMatrix {
            n_rows: self.n_rows,
            col_ptr: self.col_ptr.clone(),
            row_idx: self.row_idx.clone(),
            values: self.values.iter().map(conv).collect(),
            labels: self.labels.as_ref().map(|l| l.iter().map(conv).collect()),
        }
    }

    /// Widens the row dimension (e.g. to match a training feature count).
    pub fn with_n_rows(mut self, n_rows: usize) -> Result<Self> {
        if let Some(&max) = self.row_idx.iter().max() {
            if max as usize >= n_rows {
                return Err(Error::Dimension { expected: n_rows, got: max as usize + 1 });
            }
        }
        self.n_rows = n_rows;
        Ok(self)
    }

    pub fn to_dense_rows(&self) -> Vec<Vec<T>> {
        let mut rows = vec![vec![T::zero(); self.n_cols()]; self.n_rows];
        for (j, w) in self.col_ptr.windows(2).enumerate() {
            for k in w[0]..w[1] {
                rows[self.row_idx[k] as usize][j] = self.values[k];
            }
        }
        rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SparseColumnMatrix<f64> {
        SparseColumnMatrix::from_dense_rows(&[
            vec![1.0, 0.0, 2.0],
            vec![0.0, 3.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn matvec_and_transpose() {
        let a = sample();
        assert_eq!(a.matvec(&[1.0, 1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
        assert_eq!(a.tmatvec(&[1.0, 2.0]).unwrap(), vec![1.0, 6.0, 2.0]);
        let t = a.transpose();
        assert_eq!(t.to_dense_rows(), vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 0.0]]);
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn rejects_bad_structure() {
        assert!(SparseColumnMatrix::<f64>::from_parts(2, vec![0, 2], vec![1, 0], vec![1.0, 1.0], None).is_err());
        assert!(SparseColumnMatrix::<f64>::from_parts(2, vec![0, 1], vec![2], vec![1.0], None).is_err());
        assert!(SparseColumnMatrix::<f64>::from_parts(2, vec![0, 1], vec![0], vec![f64::NAN], None).is_err());
        assert!(SparseColumnMatrix::<f64>::from_parts(2, vec![0, 2], vec![0, 0], vec![1.0, 1.0], None).is_err());
    }

    #[test]
    fn fold_and_select() {
        let a = sample().with_labels(vec![1.0, -1.0, -1.0]).unwrap();
        let f = a.fold_labels().unwrap();
        assert_eq!(f.to_dense_rows(), vec![vec![1.0, 0.0, -2.0], vec![0.0, -3.0, 0.0]]);
        let s = a.select_columns(&[2, 0]);
        assert_eq!(s.labels(), Some(&[-1.0, 1.0][..]));
        let parts = [a.column_range(0, 1), a.column_range(1, 3)];
        assert_eq!(SparseColumnMatrix::hstack(&parts).unwrap(), a);
    }
}
