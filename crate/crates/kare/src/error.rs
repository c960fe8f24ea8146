use std::path::PathBuf;

use thiserror::Error;

use crate::gateway::GatewayError;

#[derive(Debug, Error)]
pub enum KareError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error(transparent)]
    Ehr(#[from] kare_core::ehr::EhrError),
    #[error(transparent)]
    Kg(#[from] kare_core::kg::KgError),
    #[error(transparent)]
    Cluster(#[from] kare_core::cluster::ClusterError),
    #[error(transparent)]
    Community(#[from] kare_core::community::CommunityError),
    #[error(transparent)]
    Index(#[from] kare_core::index::IndexError),
    #[error(transparent)]
    Metrics(#[from] kare_core::metrics::MetricsError),
    #[error(transparent)]
    Training(#[from] kare_core::training::TrainingError),
    #[error(transparent)]
    Relevance(#[from] kare_core::retrieval::RelevanceError),
    #[error(transparent)]
    Synth(#[from] kare_core::synth::SynthError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("stage {stage} failed: {source}")]
    Stage { stage: &'static str, source: Box<KareError> },
}

pub type Result<T, E = KareError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> KareError {
    let path = path.into();
    move |source| KareError::Io { path, source }
}
