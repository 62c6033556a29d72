use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("arc endpoint {value} is not a multiple of the mesh width {width}")]
    Alignment { value: f64, width: f64 },

    #[error("invalid electrode layout: {0}")]
    Layout(String),

    #[error("{what} = {value} outside of {range}")]
    Domain {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    #[error("{what} index {index} out of range (valid: {valid})")]
    Index {
        what: &'static str,
        index: usize,
        valid: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("assembly failed: {0}")]
    Assembly(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the inputs rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        !matches!(
            self,
            Error::Assembly(_) | Error::Singular(_) | Error::Numerical(_)
        )
    }
}
