//! Instance-level regressors trained on relabeled segments, and the
//! segment-to-video aggregation.
//!
//! * [`svr_train`]: epsilon-SVR with a Gaussian kernel, solved by SMO.
//! * [`sgd_linear_train`]: squared-loss linear regression with an L2
//!   penalty, trained by stochastic gradient descent.
//! * [`bayesian_ridge_train`]: linear regression with evidence-maximized
//!   weight and noise precisions.
//! * [`grid_search_svr`]: subject-independent cross-validation over
//!   `(C, sigma)` on training bags only.

use std::path::{Path, PathBuf};

use thiserror::Error;

mod grid;
mod kernel;
mod linear;
mod ridge;
mod svr;

pub use grid::{grid_search_svr, instance_training_set, GridCell, GridSearchConfig, GridSearchResult};
pub use kernel::{KernelCache, KernelSpec};
pub use linear::{sgd_linear_train, LinearModel, SgdConfig, SgdFit};
pub use ridge::{bayesian_ridge_train, RidgeConfig, RidgePosterior, PRECISION_FLOOR};
pub use svr::{svr_train, SvrConfig, SvrFit, SvrModel, SVR_MAGIC};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid folds: {0}")]
    InvalidFolds(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("dimension mismatch: model expects {expected}, input has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = BaselineError> = std::result::Result<T, E>;

/// Video-level prediction: the arithmetic mean of its segment predictions.
pub fn aggregate_video(instance_predictions: &[f64]) -> Result<f64> {
    if instance_predictions.is_empty() {
        return Err(BaselineError::InvalidInput("no instance predictions".into()));
    }
    Ok(instance_predictions.iter().sum::<f64>() / instance_predictions.len() as f64)
}

fn check_training_set(x: ndarray::ArrayView2<f64>, y: &[f64], min_rows: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(BaselineError::InvalidInput(format!(
            "{} rows but {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < min_rows || x.ncols() == 0 {
        return Err(BaselineError::InvalidInput(format!(
            "need at least {min_rows} non-empty instances, got {}x{}",
            x.nrows(),
            x.ncols()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(BaselineError::InvalidInput("non-finite feature or target".into()));
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| BaselineError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text).map_err(|source| BaselineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| BaselineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| BaselineError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
