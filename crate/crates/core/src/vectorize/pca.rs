use serde::{Deserialize, Serialize};

use super::eigen::symmetric_eigen;
use super::{FeatureMatrix, VectorizeError, FORMAT_VERSION};
use crate::scalar::{dot, Scalar};

/// How many principal components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Retain {
    /// Smallest count whose cumulative explained-variance ratio reaches this.
    VarianceRatio(f64),
    Fixed(usize),
}

impl Default for Retain {
    fn default() -> Self {
        Retain::VarianceRatio(0.95)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PcaModel<T: Scalar> {
    pub format_version: u32,
    pub mean: Vec<T>,
    /// `q` rows of length `d`, pairwise orthonormal.
    pub components: Vec<Vec<T>>,
    /// Sample variances (denominator `n - 1`) along each component, descending.
    pub explained_variance: Vec<T>,
    pub total_variance: T,
}

impl<T: Scalar> PcaModel<T> {
    /// Fits on `m` and returns the projected training matrix.
    ///
    /// The spectrum comes from the `d x d` covariance when `d <= n`, and from
    /// the `n x n` Gram matrix of the centered rows otherwise (same non-zero
    /// eigenvalues, far smaller when features outnumber apps).
    pub fn fit_transform(
        m: &FeatureMatrix<T>,
        retain: Retain,
    ) -> Result<(Self, FeatureMatrix<T>), VectorizeError> {
        let n = m.n_rows();
        let d = m.n_cols();
        if n < 2 || d == 0 {
            return Err(VectorizeError::Shape(format!("PCA needs >= 2 rows and >= 1 column, got {n}x{d}")));
        }
        let mean = m.column_means();
        let centered: Vec<Vec<T>> = m
            .row_iter()
            .map(|r| r.iter().zip(&mean).map(|(&v, &mu)| v - mu).collect())
            .collect();
        let denom = T::of_usize(n - 1);
        let total_variance: T = (0..d)
            .map(|j| centered.iter().map(|r| r[j] * r[j]).sum::<T>())
            .sum::<T>()
            / denom;
        if total_variance <= T::zero() {
            return Err(VectorizeError::RankZero);
        }

        let (values, vectors) = if d <= n {
            let mut cov = vec![vec![T::zero(); d]; d];
            for r in &centered {
                for i in 0..d {
                    if r[i] == T::zero() {
                        continue;
                    }
                    for j in 0..=i {
                        cov[i][j] += r[i] * r[j];
                    }
                }
            }
            for i in 0..d {
                for j in 0..=i {
                    cov[i][j] /= denom;
                    cov[j][i] = cov[i][j];
                }
            }
            let eig = symmetric_eigen(&cov)?;
            (eig.values, eig.vectors)
        } else {
            let mut gram = vec![vec![T::zero(); n]; n];
            for i in 0..n {
                for j in 0..=i {
                    let g = dot(&centered[i], &centered[j]) / denom;
                    gram[i][j] = g;
                    gram[j][i] = g;
                }
            }
            let eig = symmetric_eigen(&gram)?;
            let vectors = eig
                .values
                .iter()
                .zip(&eig.vectors)
                .map(|(&lambda, u)| {
                    let mut v = vec![T::zero(); d];
                    if lambda > T::zero() {
                        for (r, &ui) in centered.iter().zip(u) {
                            for (vj, &x) in v.iter_mut().zip(r) {
                                *vj += ui * x;
                            }
                        }
                        let s = (lambda * denom).sqrt();
                        v.iter_mut().for_each(|x| *x /= s);
                    }
                    v
                })
                .collect();
            (eig.values, vectors)
        };

        let tol = values[0].abs() * T::of_usize(n.max(d)) * T::epsilon() * T::of(16.0);
        let rank = values.iter().take_while(|&&l| l > tol).count();
        let q = match retain {
            Retain::Fixed(q) => {
                if q == 0 || q > rank {
                    return Err(VectorizeError::Components { requested: q, rank });
                }
                q
            }
            Retain::VarianceRatio(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(VectorizeError::Components { requested: 0, rank });
                }
                let mut acc = 0.0;
                let total = total_variance.as_f64();
                let mut q = rank;
                for (k, l) in values.iter().take(rank).enumerate() {
                    acc += l.as_f64();
                    if acc / total >= r - 1e-12 {
                        q = k + 1;
                        break;
                    }
                }
                q
            }
        };

        let components: Vec<Vec<T>> = vectors
            .into_iter()
            .take(q)
            .map(|mut v| {
                let pivot = v
                    .iter()
                    .copied()
                    .fold(T::zero(), |best, x| if x.abs() > best.abs() { x } else { best });
                if pivot < T::zero() {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        let model = Self {
            format_version: FORMAT_VERSION,
            mean,
            components,
            explained_variance: values.into_iter().take(q).map(|l| l.max(T::zero())).collect(),
            total_variance,
        };
        let projected = model.transform(m)?;
        Ok((model, projected))
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, m: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>, VectorizeError> {
        if m.n_cols() != self.mean.len() {
            return Err(VectorizeError::Dimension {
                expected: self.mean.len(),
                got: m.n_cols(),
            });
        }
        let mut centered = vec![T::zero(); self.mean.len()];
        let mut data = Vec::with_capacity(m.n_rows() * self.n_components());
        for r in m.row_iter() {
            for ((c, &v), &mu) in centered.iter_mut().zip(r).zip(&self.mean) {
                *c = v - mu;
            }
            data.extend(self.components.iter().map(|comp| dot(comp, &centered)));
        }
        FeatureMatrix::new(m.ids().to_vec(), self.n_components(), data)
    }

    pub fn inverse_transform(&self, p: &FeatureMatrix<T>) -> Result<FeatureMatrix<T>, VectorizeError> {
        if p.n_cols() != self.n_components() {
            return Err(VectorizeError::Dimension {
                expected: self.n_components(),
                got: p.n_cols(),
            });
        }
        let d = self.mean.len();
        let mut data = Vec::with_capacity(p.n_rows() * d);
        for r in p.row_iter() {
            let mut x = self.mean.clone();
            for (&coef, comp) in r.iter().zip(&self.components) {
                for (xj, &cj) in x.iter_mut().zip(comp) {
                    *xj += coef * cj;
                }
            }
            data.extend(x);
        }
        FeatureMatrix::new(p.ids().to_vec(), d, data)
    }
}
