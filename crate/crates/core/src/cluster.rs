//! Seeded K-Means: greedy k-means++ seeding, Lloyd iterations, empty
//! cluster repair, best-of-restarts selection and test-time assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::Partition;
use crate::scalar::{squared_distance, Scalar};
use crate::vectorize::{FeatureMatrix, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the {rows} available rows")]
    TooFewRows { k: usize, rows: usize },
    #[error("non-finite value in row {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: model has {expected} columns, input has {got}")]
    Dimension { expected: usize, got: usize },
    #[error("restarts must be at least 1")]
    ZeroRestarts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 50,
            seed: 0,
            restarts: 4,
            max_iterations: 300,
            tolerance: 1e-6,
        }
    }
}

impl KMeansParams {
    pub fn with_k(k: usize, seed: u64) -> Self {
        Self {
            k,
            seed,
            ..Self::default()
        }
    }
}

/// Persisted clustering model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct KMeansModel<T: Scalar> {
    pub format_version: u32,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Row-major `k x dim`.
    pub centroids: Vec<T>,
    pub inertia: T,
    pub iterations_run: usize,
}

/// Fit output: the model, the converged training labels, and the inertia
/// trace (one value per assignment step) for every restart.
#[derive(Debug, Clone)]
pub struct KMeansFit<T: Scalar> {
    pub model: KMeansModel<T>,
    pub labels: Vec<usize>,
    pub traces: Vec<Vec<T>>,
}

impl<T: Scalar> KMeansFit<T> {
    pub fn partition(&self, ids: &[String]) -> Partition {
        labels_to_partition(ids, &self.labels)
    }
}

pub fn labels_to_partition(ids: &[String], labels: &[usize]) -> Partition {
    Partition::from_pairs(ids.iter().cloned().zip(labels.iter().map(|l| l.to_string())))
        .expect("row ids are unique")
}

impl<T: Scalar> KMeansModel<T> {
    pub fn centroid(&self, c: usize) -> &[T] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }

    /// Nearest-centroid index per row; ties go to the lowest index.
    pub fn assign(&self, m: &FeatureMatrix<T>) -> Result<Vec<usize>, ClusterError> {
        if m.n_cols() != self.dim {
            return Err(ClusterError::Dimension {
                expected: self.dim,
                got: m.n_cols(),
            });
        }
        Ok(m.row_iter().map(|r| nearest(&self.centroids, self.dim, r).0).collect())
    }

    pub fn assign_partition(&self, m: &FeatureMatrix<T>) -> Result<Partition, ClusterError> {
        Ok(labels_to_partition(m.ids(), &self.assign(m)?))
    }
}

fn nearest<T: Scalar>(centroids: &[T], dim: usize, x: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (c, centroid) in centroids.chunks_exact(dim.max(1)).enumerate() {
        let d = squared_distance(centroid, x);
        if d < best.1 {
            best = (c, d);
        }
    }
    if dim == 0 {
        return (0, T::zero());
    }
    best
}

pub fn kmeans_fit<T: Scalar>(m: &FeatureMatrix<T>, params: &KMeansParams) -> Result<KMeansFit<T>, ClusterError> {
    let n = m.n_rows();
    if params.k == 0 {
        return Err(ClusterError::ZeroK);
    }
    if params.restarts == 0 {
        return Err(ClusterError::ZeroRestarts);
    }
    if params.k > n {
        return Err(ClusterError::TooFewRows { k: params.k, rows: n });
    }
    if let Some(i) = m.row_iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(ClusterError::NonFinite(i));
    }

    let runs: Vec<Run<T>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..params.restarts)
            .map(|r| s.spawn(move || lloyd(m, params, r as u64)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("restart thread")).collect()
    });

    let best = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.partial_cmp(&b.inertia).unwrap().then(i.cmp(j)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let traces = runs.iter().map(|r| r.trace.clone()).collect();
    let run = runs.into_iter().nth(best).unwrap();
    Ok(KMeansFit {
        model: KMeansModel {
            format_version: FORMAT_VERSION,
            k: params.k,
            dim: m.n_cols(),
            seed: params.seed,
            restarts: params.restarts,
            centroids: run.centroids,
            inertia: run.inertia,
            iterations_run: run.iterations,
        },
        labels: run.labels,
        traces,
    })
}

struct Run<T> {
    centroids: Vec<T>,
    labels: Vec<usize>,
    inertia: T,
    iterations: usize,
    trace: Vec<T>,
}

fn restart_rng(seed: u64, restart: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart);
    rng
}

/// Greedy k-means++: each new center is the best of `2 + ln k` candidates
/// drawn proportionally to squared distance from the current centers.
fn seed_centers<T: Scalar>(m: &FeatureMatrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let n = m.n_rows();
    let dim = m.n_cols();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centers = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centers.extend_from_slice(m.row(first));
    let mut closest: Vec<f64> = m
        .row_iter()
        .map(|r| squared_distance(r, m.row(first)).as_f64())
        .collect();

    for _ in 1..k {
        let potential: f64 = closest.iter().sum();
        let mut best: Option<(usize, f64, Vec<f64>)> = None;
        if potential <= 0.0 {
            let pick = rng.gen_range(0..n);
            centers.extend_from_slice(m.row(pick));
            continue;
        }
        let mut cumulative = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &d in &closest {
            acc += d;
            cumulative.push(acc);
        }
        for _ in 0..trials {
            let target = rng.gen::<f64>() * potential;
            let cand = cumulative.partition_point(|&c| c <= target).min(n - 1);
            let updated: Vec<f64> = m
                .row_iter()
                .zip(&closest)
                .map(|(r, &d)| d.min(squared_distance(r, m.row(cand)).as_f64()))
                .collect();
            let pot: f64 = updated.iter().sum();
            if best.as_ref().is_none_or(|b| pot < b.1) {
                best = Some((cand, pot, updated));
            }
        }
        let (cand, _, updated) = best.expect("trials >= 2");
        centers.extend_from_slice(m.row(cand));
        closest = updated;
    }
    centers
}

fn assign_all<T: Scalar>(m: &FeatureMatrix<T>, centroids: &[T], labels: &mut [usize], dists: &mut [T]) {
    let dim = m.n_cols();
    for (i, r) in m.row_iter().enumerate() {
        let (c, d) = nearest(centroids, dim, r);
        labels[i] = c;
        dists[i] = d;
    }
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster. Returns false when some cluster stays empty (duplicate points).
fn repair_empty<T: Scalar>(
    m: &FeatureMatrix<T>,
    k: usize,
    centroids: &mut [T],
    labels: &mut [usize],
    dists: &mut [T],
) -> bool {
    let dim = m.n_cols();
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    let mut all_filled = true;
    for c in 0..k {
        if sizes[c] > 0 {
            continue;
        }
        let far = (0..labels.len())
            .filter(|&i| sizes[labels[i]] > 1 && dists[i] > T::zero())
            .max_by(|&i, &j| dists[i].partial_cmp(&dists[j]).unwrap().then(j.cmp(&i)));
        match far {
            Some(i) => {
                sizes[labels[i]] -= 1;
                sizes[c] = 1;
                labels[i] = c;
                dists[i] = T::zero();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(m.row(i));
            }
            None => all_filled = false,
        }
    }
    all_filled
}

fn update_centroids<T: Scalar>(m: &FeatureMatrix<T>, k: usize, labels: &[usize], centroids: &mut [T]) -> f64 {
    let dim = m.n_cols();
    let mut sums = vec![T::zero(); k * dim];
    let mut counts = vec![0usize; k];
    for (r, &l) in m.row_iter().zip(labels) {
        counts[l] += 1;
        for (s, &v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(r) {
            *s += v;
        }
    }
    let mut max_shift = 0.0f64;
    for c in 0..k {
        if counts[c] == 0 {
            continue;
        }
        let cnt = T::of_usize(counts[c]);
        let new: Vec<T> = sums[c * dim..(c + 1) * dim].iter().map(|&s| s / cnt).collect();
        let old = &mut centroids[c * dim..(c + 1) * dim];
        max_shift = max_shift.max(squared_distance(old, &new).as_f64().sqrt());
        old.copy_from_slice(&new);
    }
    max_shift
}

fn lloyd<T: Scalar>(m: &FeatureMatrix<T>, params: &KMeansParams, restart: u64) -> Run<T> {
    let n = m.n_rows();
    let k = params.k;
    let mut rng = restart_rng(params.seed, restart);
    let mut centroids = seed_centers(m, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut dists = vec![T::zero(); n];

    assign_all(m, &centroids, &mut labels, &mut dists);
    repair_empty(m, k, &mut centroids, &mut labels, &mut dists);
    let mut trace = vec![dists.iter().copied().sum::<T>()];
    let mut iterations = 0;
    while iterations < params.max_iterations {
        iterations += 1;
        let shift = update_centroids(m, k, &labels, &mut centroids);
        assign_all(m, &centroids, &mut labels, &mut dists);
        repair_empty(m, k, &mut centroids, &mut labels, &mut dists);
        trace.push(dists.iter().copied().sum::<T>());
        if shift < params.tolerance {
            break;
        }
    }
    // Final labels are a plain nearest-centroid pass so that the stored
    // model reproduces them exactly.
    assign_all(m, &centroids, &mut labels, &mut dists);
    let inertia = dists.iter().copied().sum::<T>();
    Run {
        centroids,
        labels,
        inertia,
        iterations,
        trace,
    }
}
