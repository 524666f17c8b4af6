use std::path::PathBuf;

use thiserror::Error;

use crate::estimator::remote::RemoteError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("line {line}: duplicate traj_id {id:?}")]
    DuplicateId { id: String, line: usize },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no recipe for goal {0:?}")]
    NoRecipe(String),

    #[error("empty recipe for goal {goal_id:?} (group: {traj_ids:?})")]
    EmptyRecipe {
        goal_id: String,
        traj_ids: Vec<String>,
    },

    #[error("feature schema mismatch: model has {model:?}, featurizer has {featurizer:?}")]
    SchemaMismatch { model: String, featurizer: String },

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Divergence { epoch: usize, loss: f64 },

    #[error("unsatisfiable: {0}")]
    Unsatisfiable(String),

    #[error(transparent)]
    Remote(#[from] RemoteError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse category used by the command line to pick an exit code.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Remote(_))
    }
}
