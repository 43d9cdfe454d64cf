//! ν-one-class SVM trained per cluster on binary sensitive-API features.
//!
//! The dual solved here is
//!
//! ```text
//! min ½ Σᵢⱼ αᵢ αⱼ K(xᵢ, xⱼ)   s.t.  0 ≤ αᵢ ≤ 1/(ν n),  Σᵢ αᵢ = 1
//! ```
//!
//! by pairwise (SMO-style) updates that keep the sum fixed. The decision
//! function is `f(x) = Σᵢ αᵢ K(xᵢ, x) − ρ` and negative scores are anomalies.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::fnv1a64_list;
use crate::metrics::Partition;
use crate::scalar::{dot, squared_distance, Scalar};
use crate::vectorize::{FeatureMatrix, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum AnomalyError {
    #[error("nu must lie in (0, 1], got {0}")]
    Nu(f64),
    #[error("need at least {need} training rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("gamma must be positive and finite, got {0}")]
    Gamma(f64),
    #[error("solver stopped after {iterations} iterations with KKT residual {residual:e}")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("dimension mismatch: model has {expected} features, input has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("feature list hash {got:016x} does not match the model's {expected:016x}")]
    FeatureList { expected: u64, got: u64 },
    #[error("unknown row id `{0}`")]
    UnknownRow(String),
}

pub type Result<T> = std::result::Result<T, AnomalyError>;

/// Kernel as requested by the caller; RBF gamma defaults to `1 / d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: Option<f64> },
    Linear,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Rbf { gamma: None }
    }
}

impl KernelSpec {
    pub fn resolve(&self, dim: usize) -> Result<Kernel> {
        match *self {
            KernelSpec::Linear => Ok(Kernel::Linear),
            KernelSpec::Rbf { gamma } => {
                let gamma = gamma.unwrap_or(1.0 / dim.max(1) as f64);
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(AnomalyError::Gamma(gamma));
                }
                Ok(Kernel::Rbf { gamma })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    Rbf { gamma: f64 },
    Linear,
}

impl Kernel {
    pub fn eval<T: Scalar>(&self, a: &[T], b: &[T]) -> T {
        match *self {
            Kernel::Rbf { gamma } => (-T::of(gamma) * squared_distance(a, b)).exp(),
            Kernel::Linear => dot(a, b),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcSvmParams {
    pub nu: f64,
    pub kernel: KernelSpec,
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for OcSvmParams {
    fn default() -> Self {
        Self {
            nu: 0.1,
            kernel: KernelSpec::default(),
            tolerance: 1e-4,
            max_iterations: 10_000_000,
        }
    }
}

/// Clusters trained on fewer apps than this are flagged low-confidence.
pub const LOW_CONFIDENCE_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OcSvmModel<T: Scalar> {
    pub format_version: u32,
    pub cluster_id: String,
    pub nu: f64,
    pub kernel: Kernel,
    pub support_vectors: Vec<Vec<T>>,
    pub alphas: Vec<T>,
    pub rho: T,
    pub dim: usize,
    pub n_train: usize,
    /// FNV-1a of the ordered feature names; 0 when not tied to a list.
    pub feature_hash: u64,
    pub low_confidence: bool,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub objective: f64,
}

impl<T: Scalar> OcSvmModel<T> {
    pub fn decision(&self, x: &[T]) -> T {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, &a)| a * self.kernel.eval(sv, x))
            .sum::<T>()
            - self.rho
    }

    /// `(score, is_anomaly)` per row; anomalies have a negative score.
    pub fn score(&self, rows: &FeatureMatrix<T>) -> Result<Vec<(T, bool)>> {
        if rows.n_cols() != self.dim {
            return Err(AnomalyError::Dimension {
                expected: self.dim,
                got: rows.n_cols(),
            });
        }
        Ok(rows
            .row_iter()
            .map(|r| {
                let s = self.decision(r);
                (s, s < T::zero())
            })
            .collect())
    }

    /// Like [`score`](Self::score) but also checks the feature list.
    pub fn score_checked(&self, rows: &FeatureMatrix<T>, feature_hash: u64) -> Result<Vec<(T, bool)>> {
        if self.feature_hash != 0 && feature_hash != self.feature_hash {
            return Err(AnomalyError::FeatureList {
                expected: self.feature_hash,
                got: feature_hash,
            });
        }
        self.score(rows)
    }
}

/// Dense dual solution over all training rows, before support-vector pruning.
#[derive(Debug, Clone)]
pub struct DualSolution<T> {
    pub alphas: Vec<T>,
    pub rho: T,
    pub objective: f64,
    pub residual: f64,
    pub iterations: usize,
    pub upper_bound: T,
}

/// ½ αᵀKα for a dense kernel matrix.
pub fn dual_objective<T: Scalar>(kernel: &[Vec<T>], alphas: &[T]) -> f64 {
    let mut acc = 0.0;
    for (i, row) in kernel.iter().enumerate() {
        let ki: f64 = row.iter().zip(alphas).map(|(&k, &a)| (k * a).as_f64()).sum();
        acc += alphas[i].as_f64() * ki;
    }
    0.5 * acc
}

pub fn kernel_matrix<T: Scalar>(rows: &FeatureMatrix<T>, kernel: Kernel) -> Vec<Vec<T>> {
    let n = rows.n_rows();
    let mut k = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(rows.row(i), rows.row(j));
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    k
}

/// Solves the one-class dual on a precomputed kernel matrix.
///
/// Starts from the uniform feasible point `αᵢ = 1/n`; each step picks the
/// coordinate with the smallest gradient that can still grow and pairs it
/// with the shrinkable coordinate of largest second-order gain.
pub fn solve_dual<T: Scalar>(
    kernel: &[Vec<T>],
    nu: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<DualSolution<T>> {
    let n = kernel.len();
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(AnomalyError::Nu(nu));
    }
    if n == 0 {
        return Err(AnomalyError::TooFewRows { need: 1, got: 0 });
    }
    let c = T::one() / (T::of(nu) * T::of_usize(n));
    let mut alpha = vec![T::one() / T::of_usize(n); n];
    if T::one() / T::of_usize(n) > c {
        // ν = 1 rounding: uniform is exactly at the bound.
        alpha.iter_mut().for_each(|a| *a = c);
    }
    let mut grad: Vec<T> = kernel
        .iter()
        .map(|row| row.iter().zip(&alpha).map(|(&k, &a)| k * a).sum())
        .collect();
    let tol = T::of(tolerance);
    let tau = T::of(1e-12);
    let mut iterations = 0;
    let mut residual;

    loop {
        // i: free to increase, smallest gradient.
        let mut i = usize::MAX;
        let mut g_min = T::infinity();
        for (t, (&a, &g)) in alpha.iter().zip(&grad).enumerate() {
            if a < c && g < g_min {
                g_min = g;
                i = t;
            }
        }
        // Largest gradient among shrinkable coordinates (for the residual).
        let g_max = alpha
            .iter()
            .zip(&grad)
            .filter(|(&a, _)| a > T::zero())
            .map(|(_, &g)| g)
            .fold(T::neg_infinity(), T::max);
        residual = if i == usize::MAX { 0.0 } else { (g_max - g_min).as_f64().max(0.0) };
        if i == usize::MAX || g_max - g_min < tol {
            break;
        }
        if iterations >= max_iterations {
            return Err(AnomalyError::NonConvergence { iterations, residual });
        }
        iterations += 1;

        let mut j = usize::MAX;
        let mut best_gain = T::neg_infinity();
        for (t, (&a, &g)) in alpha.iter().zip(&grad).enumerate() {
            if a > T::zero() && g > g_min && t != i {
                let diff = g - g_min;
                let mut eta = kernel[i][i] + kernel[t][t] - T::of(2.0) * kernel[i][t];
                if eta <= T::zero() {
                    eta = tau;
                }
                let gain = diff * diff / eta;
                if gain > best_gain {
                    best_gain = gain;
                    j = t;
                }
            }
        }
        if j == usize::MAX {
            break;
        }
        let mut eta = kernel[i][i] + kernel[j][j] - T::of(2.0) * kernel[i][j];
        if eta <= T::zero() {
            eta = tau;
        }
        let step = ((grad[j] - grad[i]) / eta).min(c - alpha[i]).min(alpha[j]);
        if step <= T::zero() {
            break;
        }
        alpha[i] += step;
        alpha[j] -= step;
        if c - alpha[i] <= c * T::epsilon() * T::of(4.0) {
            alpha[i] = c;
        }
        if alpha[j] <= c * T::epsilon() * T::of(4.0) {
            alpha[j] = T::zero();
        }
        for (t, g) in grad.iter_mut().enumerate() {
            *g += step * (kernel[t][i] - kernel[t][j]);
        }
    }

    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > T::zero() && alpha[t] < c).collect();
    let pool: Vec<usize> = if free.is_empty() {
        (0..n).filter(|&t| alpha[t] > T::zero()).collect()
    } else {
        free
    };
    let rho = pool.iter().map(|&t| grad[t]).sum::<T>() / T::of_usize(pool.len().max(1));
    Ok(DualSolution {
        objective: dual_objective(kernel, &alpha),
        alphas: alpha,
        rho,
        residual,
        iterations,
        upper_bound: c,
    })
}

/// Fits a one-class SVM on every row of `rows`.
pub fn ocsvm_fit<T: Scalar>(rows: &FeatureMatrix<T>, params: &OcSvmParams) -> Result<OcSvmModel<T>> {
    if !(params.nu > 0.0 && params.nu <= 1.0) {
        return Err(AnomalyError::Nu(params.nu));
    }
    if rows.n_rows() < 2 {
        return Err(AnomalyError::TooFewRows {
            need: 2,
            got: rows.n_rows(),
        });
    }
    if let Some(i) = rows.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(AnomalyError::NonFinite(i));
    }
    let kernel = params.kernel.resolve(rows.n_cols())?;
    let k = kernel_matrix(rows, kernel);
    let sol = solve_dual(&k, params.nu, params.tolerance, params.max_iterations)?;
    let (support_vectors, alphas) = sol
        .alphas
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > T::zero())
        .map(|(i, &a)| (rows.row(i).to_vec(), a))
        .unzip();
    Ok(OcSvmModel {
        format_version: FORMAT_VERSION,
        cluster_id: String::new(),
        nu: params.nu,
        kernel,
        support_vectors,
        alphas,
        rho: sol.rho,
        dim: rows.n_cols(),
        n_train: rows.n_rows(),
        feature_hash: 0,
        low_confidence: rows.n_rows() < LOW_CONFIDENCE_SIZE,
        kkt_residual: sol.residual,
        iterations: sol.iterations,
        objective: sol.objective,
    })
}

/// 0/1 presence vector over a sorted, fixed list of API signatures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryApiVector {
    pub bits: Vec<u8>,
}

impl BinaryApiVector {
    /// `counts` maps signature to call-site count; unknown signatures are ignored.
    pub fn from_counts(signatures: &[String], counts: &BTreeMap<String, u32>) -> Self {
        Self {
            bits: signatures
                .iter()
                .map(|s| u8::from(counts.get(s).is_some_and(|&c| c > 0)))
                .collect(),
        }
    }
}

/// Sorted API list plus its hash, shared by training and scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiFeatureSpace {
    pub signatures: Vec<String>,
    pub hash: u64,
}

impl ApiFeatureSpace {
    pub fn new<I: IntoIterator<Item = String>>(signatures: I) -> Self {
        let signatures: Vec<String> = signatures.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let hash = fnv1a64_list(&signatures);
        Self { signatures, hash }
    }

    pub fn dim(&self) -> usize {
        self.signatures.len()
    }

    pub fn matrix<T: Scalar>(
        &self,
        apps: &[(String, BTreeMap<String, u32>)],
    ) -> FeatureMatrix<T> {
        let ids = apps.iter().map(|(id, _)| id.clone()).collect();
        let rows = apps
            .iter()
            .map(|(_, counts)| {
                BinaryApiVector::from_counts(&self.signatures, counts)
                    .bits
                    .into_iter()
                    .map(|b| T::of_usize(b as usize))
                    .collect()
            })
            .collect();
        FeatureMatrix::from_rows(ids, rows).expect("rows share the signature width")
    }
}

/// Trains one model per cluster of `partition` on the matching rows.
///
/// A cluster with a single app is trained on that row duplicated, which
/// is the same solution as α = 1 on the lone point.
pub fn train_per_cluster<T: Scalar>(
    features: &FeatureMatrix<T>,
    partition: &Partition,
    params: &OcSvmParams,
    feature_hash: u64,
) -> Result<BTreeMap<String, OcSvmModel<T>>> {
    let mut members: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let index: BTreeMap<&str, usize> = features
        .ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for (id, cluster) in partition.iter() {
        let row = *index.get(id).ok_or_else(|| AnomalyError::UnknownRow(id.to_string()))?;
        members.entry(cluster.to_string()).or_default().push(row);
    }
    let jobs: Vec<(String, Vec<usize>)> = members.into_iter().collect();
    let results: Vec<Result<(String, OcSvmModel<T>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(cluster, rows)| {
                s.spawn(move || {
                    let n_real = rows.len();
                    let positions: Vec<usize> = if n_real == 1 { vec![rows[0], rows[0]] } else { rows.clone() };
                    let sub = features.select_rows(&positions);
                    let mut model = ocsvm_fit(&sub, params)?;
                    model.cluster_id = cluster.clone();
                    model.n_train = n_real;
                    model.low_confidence = n_real < LOW_CONFIDENCE_SIZE;
                    model.feature_hash = feature_hash;
                    Ok((cluster.clone(), model))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread")).collect()
    });
    results.into_iter().collect()
}
