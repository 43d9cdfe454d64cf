use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{FeatureMatrix, VectorizeError, FORMAT_VERSION};
use crate::scalar::{l2_norm, Scalar};

pub const TFIDF_VARIANT: &str = "smooth-idf/raw-tf/l2";

/// Fitted vocabulary and inverse document frequencies.
///
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`. Term frequency is the raw
/// count in the document, and transformed rows are L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TfidfModel<T: Scalar> {
    pub format_version: u32,
    pub variant: String,
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<T>,
    pub n_docs: usize,
}

impl<T: Scalar> TfidfModel<T> {
    pub fn fit<D, S>(docs: impl IntoIterator<Item = D>) -> Result<Self, VectorizeError>
    where
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in docs {
            n_docs += 1;
            let distinct: BTreeSet<String> = doc.into_iter().map(|s| s.as_ref().to_string()).collect();
            for t in distinct {
                *df.entry(t).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(VectorizeError::Empty("no documents"));
        }
        if df.is_empty() {
            return Err(VectorizeError::Empty("every document is empty"));
        }
        let n = T::of_usize(n_docs);
        let one = T::one();
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (col, (term, count)) in df.into_iter().enumerate() {
            idf.push(((one + n) / (one + T::of_usize(count))).ln() + one);
            vocabulary.insert(term, col);
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            variant: TFIDF_VARIANT.to_string(),
            vocabulary,
            idf,
            n_docs,
        })
    }

    pub fn idf_of(&self, term: &str) -> Option<T> {
        self.vocabulary.get(term).map(|&c| self.idf[c])
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// One row per document; out-of-vocabulary tokens are dropped and
    /// rows with no known token stay zero.
    pub fn transform<D, S>(
        &self,
        ids: Vec<String>,
        docs: impl IntoIterator<Item = D>,
    ) -> Result<FeatureMatrix<T>, VectorizeError>
    where
        D: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = FeatureMatrix::zeros(ids, self.dim());
        let mut count = 0usize;
        for (i, doc) in docs.into_iter().enumerate() {
            if i >= out.n_rows() {
                return Err(VectorizeError::Shape("more documents than ids".into()));
            }
            count += 1;
            let row = out.row_mut(i);
            for tok in doc {
                if let Some(&c) = self.vocabulary.get(tok.as_ref()) {
                    row[c] += self.idf[c];
                }
            }
            let norm = l2_norm(row);
            if norm > T::zero() {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        if count != out.n_rows() {
            return Err(VectorizeError::Shape(format!("{count} documents for {} ids", out.n_rows())));
        }
        Ok(out)
    }
}
