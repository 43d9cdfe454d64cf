//! Numeric feature matrices: TF-IDF, min-max scaling, concatenation, PCA.

mod eigen;
mod matrix;
mod pca;
mod tfidf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use matrix::{concat, FeatureMatrix};
pub use pca::{PcaModel, Retain};
pub use tfidf::{TfidfModel, TFIDF_VARIANT};

use crate::scalar::Scalar;

/// Version stamped into every persisted model.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum VectorizeError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{0}")]
    Empty(&'static str),
    #[error("input {0} lists different row ids (or order) than input 0")]
    RowMismatch(usize),
    #[error("unknown row id `{0}`")]
    UnknownRow(String),
    #[error("dimension mismatch: expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("all rows are identical; nothing to decompose")]
    RankZero,
    #[error("cannot keep {requested} components from rank-{rank} data")]
    Components { requested: usize, rank: usize },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
}

/// Per-column `(min, max)` fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MinMaxScaler<T: Scalar> {
    pub format_version: u32,
    pub min: Vec<T>,
    pub max: Vec<T>,
}

impl<T: Scalar> MinMaxScaler<T> {
    pub fn fit(m: &FeatureMatrix<T>) -> Result<Self, VectorizeError> {
        if m.n_rows() == 0 {
            return Err(VectorizeError::Empty("min-max scaling needs at least one row"));
        }
        let mut min = m.row(0).to_vec();
        let mut max = m.row(0).to_vec();
        for r in m.row_iter().skip(1) {
            for ((lo, hi), &v) in min.iter_mut().zip(max.iter_mut()).zip(r) {
                *lo = lo.min(v);
                *hi = hi.max(v);
            }
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            min,
            max,
        })
    }

    /// `(v - min) / (max - min)`; constant columns map to 0.
    pub fn transform(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>, VectorizeError> {
        if m.n_cols() != self.min.len() {
            return Err(VectorizeError::Dimension {
                expected: self.min.len(),
                got: m.n_cols(),
            });
        }
        let mut out = m.clone();
        for i in 0..out.n_rows() {
            for ((v, &lo), &hi) in out.row_mut(i).iter_mut().zip(&self.min).zip(&self.max) {
                let span = hi - lo;
                *v = if span > T::zero() { (*v - lo) / span } else { T::zero() };
            }
        }
        Ok(out)
    }
}

pub fn minmax_normalize<T: Scalar>(
    m: &FeatureMatrix<T>,
) -> Result<(FeatureMatrix<T>, MinMaxScaler<T>), VectorizeError> {
    let scaler = MinMaxScaler::fit(m)?;
    Ok((scaler.transform(m)?, scaler))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column(vals: &[f64]) -> FeatureMatrix<f64> {
        FeatureMatrix::from_rows(
            (0..vals.len()).map(|i| i.to_string()).collect(),
            vals.iter().map(|&v| vec![v]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn affine_constant_and_idempotent() {
        let (m, s) = minmax_normalize(&column(&[0.0, 5.0, 10.0])).unwrap();
        assert_eq!(m.column(0), vec![0.0, 0.5, 1.0]);
        assert_eq!((s.min[0], s.max[0]), (0.0, 10.0));
        let (m, _) = minmax_normalize(&column(&[3.0, 3.0, 3.0])).unwrap();
        assert_eq!(m.column(0), vec![0.0, 0.0, 0.0]);
        let unit = column(&[0.0, 0.25, 1.0]);
        assert_eq!(minmax_normalize(&unit).unwrap().0, unit);
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(minmax_normalize(&FeatureMatrix::<f64>::zeros(vec![], 2)).is_err());
    }
}
