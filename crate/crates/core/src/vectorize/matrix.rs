use serde::{Deserialize, Serialize};

use super::VectorizeError;
use crate::scalar::Scalar;

/// Dense row-major matrix whose rows are labelled by app id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FeatureMatrix<T: Scalar> {
    rows: Vec<String>,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMatrix<T> {
    pub fn new(rows: Vec<String>, cols: usize, data: Vec<T>) -> Result<Self, VectorizeError> {
        if data.len() != rows.len() * cols {
            return Err(VectorizeError::Shape(format!(
                "{} values for {} rows x {} cols",
                data.len(),
                rows.len(),
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(VectorizeError::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from per-row vectors, which must share one length.
    pub fn from_rows(ids: Vec<String>, rows: Vec<Vec<T>>) -> Result<Self, VectorizeError> {
        if ids.len() != rows.len() {
            return Err(VectorizeError::Shape(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(VectorizeError::Shape(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Self::new(ids, cols, rows.into_iter().flatten().collect())
    }

    pub fn zeros(rows: Vec<String>, cols: usize) -> Self {
        let data = vec![T::zero(); rows.len() * cols];
        Self { rows, cols, data }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn ids(&self) -> &[String] {
        &self.rows
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on 0, and a 0-column matrix still has rows.
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.n_rows()).map(|i| self.get(i, j)).collect()
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_slice(&self, start: usize, end: usize) -> Self {
        let width = end - start;
        let data = self
            .row_iter()
            .flat_map(|r| r[start..end].iter().copied())
            .collect();
        Self {
            rows: self.rows.clone(),
            cols: width,
            data,
        }
    }

    /// Rows selected by position, in the given order.
    pub fn select_rows(&self, positions: &[usize]) -> Self {
        let rows = positions.iter().map(|&i| self.rows[i].clone()).collect();
        let data = positions.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            rows,
            cols: self.cols,
            data,
        }
    }

    /// Rows selected by app id, in the given order.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self, VectorizeError> {
        let index: std::collections::HashMap<&str, usize> =
            self.rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();
        let positions = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .copied()
                    .ok_or_else(|| VectorizeError::UnknownRow(id.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.select_rows(&positions))
    }

    pub fn column_means(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        for r in self.row_iter() {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let n = T::of_usize(self.n_rows().max(1));
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Converts the element type (e.g. `f64` to `f32` for storage).
    pub fn cast<U: Scalar>(&self) -> FeatureMatrix<U> {
        FeatureMatrix {
            rows: self.rows.clone(),
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("matrix serializes")
    }
}

/// Horizontal concatenation; all inputs must list the same ids in the same order.
pub fn concat<T: Scalar>(matrices: &[FeatureMatrix<T>]) -> Result<FeatureMatrix<T>, VectorizeError> {
    let first = matrices.first().ok_or(VectorizeError::Empty("no matrices to concatenate"))?;
    for (k, m) in matrices.iter().enumerate().skip(1) {
        if m.rows != first.rows {
            return Err(VectorizeError::RowMismatch(k));
        }
    }
    let cols = matrices.iter().map(FeatureMatrix::n_cols).sum();
    let mut data = Vec::with_capacity(cols * first.n_rows());
    for i in 0..first.n_rows() {
        for m in matrices {
            data.extend_from_slice(m.row(i));
        }
    }
    Ok(FeatureMatrix {
        rows: first.rows.clone(),
        cols,
        data,
    })
}
