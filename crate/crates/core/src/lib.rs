//! Core numerics and evaluation for Android app categorization.
//!
//! Numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! `*F64` / `*F32` aliases below pin the common instantiations. ARI is
//! available both as `f64` and as an exact rational.

pub mod anomaly;
pub mod cluster;
pub mod dataset;
pub mod hash;
pub mod metrics;
pub mod scalar;
pub mod textprep;
pub mod vectorize;

pub use scalar::Scalar;

pub type FeatureMatrixF64 = vectorize::FeatureMatrix<f64>;
pub type FeatureMatrixF32 = vectorize::FeatureMatrix<f32>;
pub type TfidfModelF64 = vectorize::TfidfModel<f64>;
pub type PcaModelF64 = vectorize::PcaModel<f64>;
pub type MinMaxScalerF64 = vectorize::MinMaxScaler<f64>;
pub type KMeansModelF64 = cluster::KMeansModel<f64>;
pub type KMeansModelF32 = cluster::KMeansModel<f32>;
pub type OcSvmModelF64 = anomaly::OcSvmModel<f64>;
pub type OcSvmModelF32 = anomaly::OcSvmModel<f32>;

/// Exact ARI value type.
pub type AriRatio = num_rational::Ratio<i128>;
