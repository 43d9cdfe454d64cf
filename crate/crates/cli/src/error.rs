use appcat_apk::ApkError;
use appcat_core::anomaly::AnomalyError;
use appcat_core::cluster::ClusterError;
use appcat_core::dataset::DatasetError;
use appcat_core::metrics::MetricsError;
use appcat_core::vectorize::VectorizeError;
use appcat_embed::EmbedError;
use thiserror::Error;

/// Failures grouped by the exit code they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("convergence error: {0}")]
    Convergence(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Convergence(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ApkError> for CliError {
    fn from(e: ApkError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<VectorizeError> for CliError {
    fn from(e: VectorizeError) -> Self {
        match e {
            VectorizeError::Eigen(_) => CliError::Convergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::ZeroK | ClusterError::ZeroRestarts => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnomalyError> for CliError {
    fn from(e: AnomalyError) -> Self {
        match e {
            AnomalyError::NonConvergence { .. } => CliError::Convergence(e.to_string()),
            AnomalyError::Nu(_) | AnomalyError::Gamma(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::CredentialMissing(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
