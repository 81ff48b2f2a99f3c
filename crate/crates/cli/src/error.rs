use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },

    #[error("config: {0}")]
    Config(String),

    #[error("config parse: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("infeasible run: {0}")]
    Infeasible(String),

    #[error(transparent)]
    Core(#[from] curlhom::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("thread pool: {0}")]
    Threads(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;
